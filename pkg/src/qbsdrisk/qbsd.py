"""Quantile-based scale dynamics (QbSD) for one-step VaR and ES.

A pair of CAViaR recursions at levels ``p`` and ``1 - p`` share their
persistence parameters, so their difference ``s*_t`` is a positive scale
process.  Returns rescaled by ``s*_t`` supply an empirical left-tail
quantile function; VaR is the rescaled-residual quantile times the forecast
scale, ES is a Riemann average of those quantiles below ``alpha``.  Both are
averaged over a set of scale-defining levels ``p``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from numba import njit

from qbsdrisk._optim import multistart
from qbsdrisk.errors import DomainError, EstimationError
from qbsdrisk.quantile_core import LocationSpec, location_path, sorted_quantile

__all__ = [
    "CaviarSpec",
    "CaviarParams",
    "CaviarFit",
    "QbsdForecastConfig",
    "RiskForecast",
    "QbsdFit",
    "caviar_recursion",
    "caviar_objective",
    "fit_global_caviar",
    "qbsd_var",
    "qbsd_es",
    "fit_qbsd",
    "qbsd_forecast",
]

Variant = Literal["gSAV", "gAS"]

_S_FLOOR = 1e-10
_BIG = 1e12


@dataclass(frozen=True)
class CaviarSpec:
    variant: Variant
    p: float

    def __post_init__(self):
        if self.variant not in ("gSAV", "gAS"):
            raise DomainError(f"unknown global CAViaR variant {self.variant!r}")
        if not (0.0 < self.p < 0.5):
            raise DomainError(f"scale level p must lie in (0, 0.5), got {self.p!r}")


@dataclass(frozen=True)
class CaviarParams:
    """Intercepts at levels ``p`` / ``1 - p`` and the shared slopes.

    For the symmetric variant ``gamma_plus == gamma_minus``.
    """

    omega_lo: float
    omega_hi: float
    beta: float
    gamma_plus: float
    gamma_minus: float

    @classmethod
    def symmetric(cls, omega_lo, omega_hi, beta, gamma):
        return cls(omega_lo, omega_hi, beta, gamma, gamma)

    @property
    def gamma(self) -> float:
        if self.gamma_plus != self.gamma_minus:
            raise AttributeError("asymmetric parameters have no single gamma")
        return self.gamma_plus

    def validate(self):
        if not self.omega_lo < self.omega_hi:
            raise DomainError("intercepts must satisfy omega_lo < omega_hi")
        if min(self.beta, self.gamma_plus, self.gamma_minus) < 0:
            raise DomainError("beta and gamma coefficients must be non-negative")

    def scaled(self, c: float) -> "CaviarParams":
        return replace(self, omega_lo=self.omega_lo * c, omega_hi=self.omega_hi * c)

    def as_vector(self, variant: Variant) -> np.ndarray:
        """Unconstrained optimizer coordinates for these parameters."""
        gap = max(self.omega_hi - self.omega_lo, 1e-12)
        x = [self.omega_lo, math.log(gap), math.sqrt(self.beta), math.sqrt(self.gamma_plus)]
        if variant == "gAS":
            x.append(math.sqrt(self.gamma_minus))
        return np.array(x)

    @classmethod
    def from_vector(cls, x) -> "CaviarParams":
        gp = x[3] * x[3]
        gm = x[4] * x[4] if len(x) == 5 else gp
        return cls(float(x[0]), float(x[0] + math.exp(x[1])), float(x[2] * x[2]), float(gp), float(gm))


@njit(cache=True)
def _caviar_paths(wlo, whi, beta, gp, gm, y, q0lo, q0hi):
    n = y.size
    qlo = np.empty(n + 1)
    qhi = np.empty(n + 1)
    qlo[0] = q0lo
    qhi[0] = q0hi
    for t in range(1, n + 1):
        s = qhi[t - 1] - qlo[t - 1]
        if s < _S_FLOOR:
            s = _S_FLOOR
        yt = y[t - 1]
        g = gp if yt > 0.0 else gm
        m = beta + g * abs(yt) / s
        qlo[t] = wlo + m * qlo[t - 1]
        qhi[t] = whi + m * qhi[t - 1]
    return qlo, qhi


@njit(cache=True)
def _global_caviar_loss(x, y, p, q0lo, q0hi):
    wlo = x[0]
    whi = wlo + math.exp(x[1])
    beta = x[2] * x[2]
    gp = x[3] * x[3]
    gm = x[4] * x[4] if x.size == 5 else gp
    plo = p
    phi = 1.0 - p
    qlo = q0lo
    qhi = q0hi
    total = 0.0
    for t in range(y.size):
        yt = y[t]
        u = yt - qlo
        total += u * (plo - (1.0 if u <= 0.0 else 0.0))
        u = yt - qhi
        total += u * (phi - (1.0 if u <= 0.0 else 0.0))
        s = qhi - qlo
        if s < _S_FLOOR:
            s = _S_FLOOR
        g = gp if yt > 0.0 else gm
        m = beta + g * abs(yt) / s
        qlo = wlo + m * qlo
        qhi = whi + m * qhi
        if not (abs(qlo) < _BIG and abs(qhi) < _BIG):
            return np.inf
    return total


def caviar_recursion(params: CaviarParams, spec: CaviarSpec, y, q0_lo: float, q0_hi: float):
    """Run the global CAViaR pair over ``y`` and one step beyond.

    Returns ``(q_lo, q_hi, s_star, eps_star)``; the quantile and scale paths
    have ``len(y) + 1`` entries (the last is the out-of-sample step),
    ``eps_star = y / s_star`` has ``len(y)``.
    """
    if not q0_lo < q0_hi:
        raise DomainError("initial quantiles must satisfy q0_lo < q0_hi")
    params.validate()
    y = np.ascontiguousarray(y, dtype=float)
    gm = params.gamma_minus if spec.variant == "gAS" else params.gamma_plus
    qlo, qhi = _caviar_paths(params.omega_lo, params.omega_hi, params.beta,
                             params.gamma_plus, gm, y, float(q0_lo), float(q0_hi))
    s = qhi - qlo
    return qlo, qhi, s, y / s[:-1]


def caviar_objective(params: CaviarParams, spec: CaviarSpec, y, q0_lo: float, q0_hi: float) -> float:
    """Summed check loss at levels ``p`` and ``1 - p``."""
    y = np.ascontiguousarray(y, dtype=float)
    x = params.as_vector(spec.variant)
    return float(_global_caviar_loss(x, y, spec.p, float(q0_lo), float(q0_hi)))


@dataclass
class CaviarFit:
    spec: CaviarSpec
    params: CaviarParams
    q_lo: np.ndarray
    q_hi: np.ndarray
    s_star: np.ndarray
    eps_star: np.ndarray
    objective: float
    converged: bool = True
    nfev: int = 0
    _sorted_eps: np.ndarray | None = field(default=None, repr=False)

    @property
    def s_next(self) -> float:
        return float(self.s_star[-1])

    @property
    def sorted_eps(self) -> np.ndarray:
        if self._sorted_eps is None:
            self._sorted_eps = np.sort(self.eps_star)
        return self._sorted_eps

    def eps_quantile(self, tau):
        """Empirical quantile of the in-sample rescaled residuals."""
        return sorted_quantile(self.sorted_eps, tau)


_BETA_GRID = (0.7, 0.9)
_GAMMA_GRID = (0.05, 0.15, 0.3)


def _starting_points(z, spec: CaviarSpec, qlo0, qhi0):
    """Deterministic start grid in standardized units.

    Intercepts are set so that the unconditional level of each recursion
    equals the corresponding sample quantile.
    """
    width = qhi0 - qlo0
    mean_abs_eps = float(np.mean(np.abs(z))) / width
    starts = []
    for beta in _BETA_GRID:
        for gamma in _GAMMA_GRID:
            pairs = [(gamma, gamma)]
            if spec.variant == "gAS":
                pairs = [(0.5 * gamma, 1.5 * gamma)]
            for gp, gm in pairs:
                pers = beta + 0.5 * (gp + gm) * mean_abs_eps
                slack = max(1.0 - pers, 0.02)
                prm = CaviarParams(qlo0 * slack, qhi0 * slack, beta, gp, gm)
                starts.append(prm.as_vector(spec.variant))
    return starts


def _simplex_step(x):
    step = np.full(x.size, 0.05)
    step[0] = max(0.2 * abs(x[0]), 0.01)
    step[1] = 0.2
    return step


def fit_global_caviar(y, spec: CaviarSpec, *, warm: CaviarParams | None = None,
                      maxiter: int = 5000, xatol: float = 1e-8) -> CaviarFit:
    """Constrained fit of the global SAV / AS CAViaR pair by check loss.

    Feasibility (``omega_lo < omega_hi``, non-negative slopes) is built into
    the optimizer coordinates.  The recursion starts at the sample quantiles
    of ``y``.  Without ``warm`` a 6-point grid of starts is searched; with it,
    only the warm start is used (rolling refits).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 100:
        raise DomainError("global CAViaR fit needs at least 100 observations")
    if not np.all(np.isfinite(y)):
        raise DomainError("series must be finite")
    scale = float(np.std(y))
    if not scale > 0:
        raise EstimationError("series has zero dispersion")
    z = np.ascontiguousarray(y / scale)
    zs = np.sort(z)
    qlo0 = sorted_quantile(zs, spec.p)
    qhi0 = sorted_quantile(zs, 1.0 - spec.p)
    if not qlo0 < qhi0:
        raise EstimationError("sample quantiles at p and 1-p coincide",
                              {"q_lo": qlo0 * scale, "q_hi": qhi0 * scale})

    if warm is not None:
        starts = [warm.scaled(1.0 / scale).as_vector(spec.variant)]
    else:
        starts = _starting_points(z, spec, qlo0, qhi0)
    best, results = multistart(
        _global_caviar_loss, starts, args=(z, spec.p, qlo0, qhi0),
        step=_simplex_step(starts[0]), tie_key=lambda x: x[2] * x[2],
        xatol=xatol, fatol=1e-10, maxiter=maxiter)
    if best is None:
        raise EstimationError(
            f"all {len(starts)} starts failed for {spec}",
            {"objectives": [r.fun for r in results]})

    params_std = CaviarParams.from_vector(best.x)
    params = params_std.scaled(scale)
    qlo, qhi, s, eps = caviar_recursion(params_std, spec, z, qlo0, qhi0)
    return CaviarFit(spec=spec, params=params, q_lo=qlo * scale, q_hi=qhi * scale,
                     s_star=s * scale, eps_star=eps, objective=best.fun * scale,
                     converged=best.converged, nfev=sum(r.nfev for r in results))


# --- forecasting -------------------------------------------------------------

@dataclass(frozen=True)
class QbsdForecastConfig:
    """Levels ``p_set``, how per-p estimates are combined, and ES stopping rule.

    ``aggregation`` is ``"mean"``, ``"median"`` or a float naming a single
    ``p`` from ``p_set``.
    """

    p_set: tuple = (0.05, 0.10, 0.15, 0.20, 0.25)
    aggregation: str | float = "mean"
    es_tolerance: float = 1e-4
    es_n_init: int = 4
    es_n_max: int = 10_000

    def __post_init__(self):
        ps = tuple(float(p) for p in self.p_set)
        if not ps or any(not (0.0 < p < 0.5) for p in ps):
            raise DomainError("p_set must be non-empty with each p in (0, 0.5)")
        object.__setattr__(self, "p_set", ps)
        if isinstance(self.aggregation, str):
            if self.aggregation not in ("mean", "median"):
                raise DomainError(f"unknown aggregation {self.aggregation!r}")
        elif float(self.aggregation) not in ps:
            raise DomainError("single-p aggregation must name a member of p_set")
        if not self.es_tolerance > 0:
            raise DomainError("es_tolerance must be positive")
        if self.es_n_init < 2 or self.es_n_max < self.es_n_init:
            raise DomainError("need 2 <= es_n_init <= es_n_max")

    def active_levels(self):
        if isinstance(self.aggregation, str):
            return self.p_set
        return (float(self.aggregation),)

    def combine(self, values):
        values = np.asarray(values, dtype=float)
        if self.aggregation == "median":
            return float(np.median(values))
        return float(np.mean(values))


@dataclass(frozen=True)
class RiskForecast:
    var: float
    es: float
    alpha: float
    model_id: str = ""
    window_index: int = 0
    mu: float = 0.0
    flag: str = ""

    def __post_init__(self):
        if not self.es <= self.var:
            raise DomainError(f"ES {self.es} exceeds VaR {self.var}")
        if self.alpha <= 0.05 and not self.var < self.mu:
            warnings.warn(f"VaR {self.var:.4g} is not below the location {self.mu:.4g}",
                          RuntimeWarning, stacklevel=2)


def _select_fits(fits, config: QbsdForecastConfig):
    if isinstance(fits, CaviarFit):
        fits = {fits.spec.p: fits}
    if not isinstance(fits, dict):
        fits = {f.spec.p: f for f in fits}
    wanted = config.active_levels()
    chosen = [fits[p] for p in wanted if p in fits]
    if not chosen:
        raise EstimationError("no fitted scale level available for aggregation")
    return chosen


def _check_alpha(alpha, fits):
    pmin = min(f.spec.p for f in fits)
    if not (0.0 < alpha <= pmin):
        raise DomainError(f"alpha={alpha} must lie in (0, min p] = (0, {pmin}]")


def qbsd_var(fits, mu_next: float, alpha: float, config: QbsdForecastConfig = QbsdForecastConfig()):
    """Aggregate VaR and the per-p components ``{p: VaR(alpha, p)}``."""
    chosen = _select_fits(fits, config)
    _check_alpha(alpha, chosen)
    comps = {f.spec.p: mu_next + f.s_next * f.eps_quantile(alpha) for f in chosen}
    return config.combine(list(comps.values())), comps


@dataclass(frozen=True)
class EsResult:
    es: float
    n: int
    converged: bool
    components: dict


def _riemann_es(fit: CaviarFit, mu_next, alpha, n):
    tau = alpha * np.arange(1, n + 1) / n
    return mu_next + fit.s_next * float(np.mean(fit.eps_quantile(tau)))


def qbsd_es(fits, mu_next: float, alpha: float, config: QbsdForecastConfig = QbsdForecastConfig()) -> EsResult:
    """ES from Riemann sums of the fitted quantile function with adaptive N.

    For each N the per-p sums are combined first; N grows by one from
    ``es_n_init`` until consecutive combined values differ by less than
    ``es_tolerance`` (or ``es_n_max`` is reached, flagged unconverged).
    """
    chosen = _select_fits(fits, config)
    _check_alpha(alpha, chosen)

    def at(n):
        comps = {f.spec.p: _riemann_es(f, mu_next, alpha, n) for f in chosen}
        return config.combine(list(comps.values())), comps

    prev, comps = at(config.es_n_init)
    n = config.es_n_init
    while n < config.es_n_max:
        n += 1
        cur, comps = at(n)
        if abs(cur - prev) < config.es_tolerance:
            return EsResult(cur, n, True, comps)
        prev = cur
    return EsResult(prev, n, False, comps)


@dataclass
class QbsdFit:
    """Location plus one global CAViaR fit per scale level."""

    variant: Variant
    location: LocationSpec
    mu_path: np.ndarray
    mu_next: float
    fits: dict
    failed: dict
    config: QbsdForecastConfig

    @property
    def flag(self) -> str:
        if not self.failed:
            return ""
        return "failed_p=" + "|".join(f"{p:g}" for p in sorted(self.failed))

    def forecast(self, alphas, model_id="", window_index=0) -> list[RiskForecast]:
        out = []
        for alpha in alphas:
            var, _ = qbsd_var(self.fits, self.mu_next, alpha, self.config)
            es = qbsd_es(self.fits, self.mu_next, alpha, self.config)
            flag = self.flag
            if not es.converged:
                flag = (flag + ";" if flag else "") + "es_unconverged"
            out.append(RiskForecast(var=var, es=es.es, alpha=float(alpha), model_id=model_id,
                                    window_index=window_index, mu=self.mu_next, flag=flag))
        return out

    def warm_params(self) -> dict:
        return {p: f.params for p, f in self.fits.items()}

    def refilter(self, returns) -> "QbsdFit":
        """Same parameters run over a new window (no re-estimation).

        The location keeps its fitted QAR coefficients; each scale pair
        restarts at the new window's sample quantiles.
        """
        r = np.asarray(returns, dtype=float)
        mu_path, mu_next, loc = location_path(self.location, r)
        y = r - mu_path
        ys = np.sort(y)
        fits = {}
        for p, old in self.fits.items():
            q0lo, q0hi = sorted_quantile(ys, p), sorted_quantile(ys, 1.0 - p)
            qlo, qhi, s, eps = caviar_recursion(old.params, old.spec, y, q0lo, q0hi)
            fits[p] = CaviarFit(spec=old.spec, params=old.params, q_lo=qlo, q_hi=qhi, s_star=s,
                                eps_star=eps, objective=float("nan"), converged=old.converged)
        return QbsdFit(self.variant, loc, mu_path, float(mu_next), fits, dict(self.failed), self.config)


def fit_qbsd(returns, variant: Variant, location: LocationSpec = LocationSpec(),
             config: QbsdForecastConfig = QbsdForecastConfig(), *, warm: dict | None = None) -> QbsdFit:
    """Sequential fit: location first, then one scale pair per ``p``.

    A level whose fit fails is recorded in ``failed``; the remaining levels
    carry the forecast.  If every level fails the error propagates.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 100:
        raise DomainError("QbSD needs at least 100 observations")
    mu_path, mu_next, loc = location_path(location, r)
    y = r - mu_path
    fits, failed = {}, {}
    for p in config.active_levels():
        spec = CaviarSpec(variant, p)
        try:
            fits[p] = fit_global_caviar(y, spec, warm=(warm or {}).get(p))
        except EstimationError as exc:
            failed[p] = exc
    if not fits:
        raise EstimationError("every scale level failed to fit",
                              {p: str(e) for p, e in failed.items()})
    return QbsdFit(variant, loc, mu_path, float(mu_next), fits, failed, config)


def qbsd_forecast(returns, variant: Variant, location: LocationSpec = LocationSpec(),
                  alphas: Sequence[float] = (0.01, 0.025, 0.05),
                  config: QbsdForecastConfig = QbsdForecastConfig(), *,
                  model_id: str | None = None, window_index: int = 0) -> list[RiskForecast]:
    """Fit and emit one :class:`RiskForecast` per ``alpha``."""
    if model_id is None:
        model_id = ("QAR-" if location.kind == "qar1" else "") + f"QbSD-{variant}"
    fit = fit_qbsd(returns, variant, location, config)
    return fit.forecast(alphas, model_id=model_id, window_index=window_index)
