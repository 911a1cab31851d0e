"""Joint VaR-ES benchmarks: AL pseudo-likelihood CAViaR models and the one-factor GAS model.

The AL models pair SAV or AS CAViaR dynamics for VaR with either a
multiplicative ES link or an autoregressive exceedance link.  The GAS model
drives VaR and ES through a common factor updated by the FZ0 score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numba import njit

from qbsdrisk._optim import multistart
from qbsdrisk.errors import DomainError, EstimationError
from qbsdrisk.qbsd import RiskForecast
from qbsdrisk.quantile_core import empirical_quantile

__all__ = [
    "PENALTY",
    "fz0_loss",
    "al_neg_logpdf",
    "AlSpec",
    "AlModelParams",
    "AlFit",
    "al_paths",
    "al_neg_loglik",
    "fit_al_model",
    "GasParams",
    "GasPath",
    "GasFit",
    "gas_filter",
    "fit_gas_fz0",
]

PENALTY = 1e10
_KAPPA_MAX = 50.0
_BIG = 1e10


def fz0_loss(r, var, es, alpha):
    """FZ0 loss, elementwise.  Requires ``es < 0``."""
    r, var, es = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, var, es)))
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if np.any(~(es < 0)):
        raise DomainError("FZ0 loss needs a negative ES")
    hit = (r <= var).astype(float)
    out = -hit * (var - r) / (alpha * es) + var / es + np.log(-es) - 1.0
    return float(out) if out.ndim == 0 else out


def al_neg_logpdf(r, var, es, alpha):
    """Negative log of the asymmetric Laplace density used for joint VaR-ES scoring."""
    r, var, es = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, var, es)))
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if np.any(~(es < 0)):
        raise DomainError("AL density needs a negative ES")
    hit = (r <= var).astype(float)
    out = -np.log((alpha - 1.0) / es) - (r - var) * (alpha - hit) / (alpha * es)
    return float(out) if out.ndim == 0 else out


def _ar1_ols(r):
    x, y = r[:-1], r[1:]
    xc = x - x.mean()
    denom = float(xc @ xc)
    phi = float(xc @ (y - y.mean()) / denom) if denom > 0 else 0.0
    return float(y.mean() - phi * x.mean()), phi


def _demean(r, mean: str):
    """Residual series, the in-sample mean path for it, and the next mean."""
    if mean == "zero":
        return r, np.zeros(r.size), 0.0, 0.0, 0.0
    c, phi = _ar1_ols(r)
    mu = c + phi * r[:-1]
    return r[1:] - mu, mu, c + phi * r[-1], c, phi


# --- AL models ---------------------------------------------------------------

@dataclass(frozen=True)
class AlSpec:
    var_spec: Literal["SAV", "AS"] = "SAV"
    es_spec: Literal["Mult", "AR"] = "Mult"
    mean: Literal["zero", "ar1"] = "zero"

    def __post_init__(self):
        if self.var_spec not in ("SAV", "AS") or self.es_spec not in ("Mult", "AR"):
            raise DomainError(f"unknown AL model {self.var_spec}/{self.es_spec}")
        if self.mean not in ("zero", "ar1"):
            raise DomainError(f"unknown mean model {self.mean!r}")

    @property
    def model_id(self) -> str:
        return ("AR-" if self.mean == "ar1" else "") + f"AL_{self.es_spec}-{self.var_spec}"

    @property
    def n_var(self) -> int:
        return 3 if self.var_spec == "SAV" else 4


@dataclass(frozen=True)
class AlModelParams:
    """VaR recursion on the mean-adjusted series plus ES-link coefficients.

    For SAV ``gamma_plus == gamma_minus``.  The multiplicative link uses only
    ``g0``; the autoregressive link uses ``g0, g1 >= 0`` and ``0 <= g2 < 1``.
    """

    omega: float
    beta: float
    gamma_plus: float
    gamma_minus: float
    g0: float
    g1: float = 0.0
    g2: float = 0.0
    c: float = 0.0
    phi: float = 0.0

    def validate(self, spec: AlSpec):
        if spec.var_spec == "SAV" and self.gamma_plus != self.gamma_minus:
            raise DomainError("SAV dynamics need a single slope")
        if spec.es_spec == "AR" and (self.g0 < 0 or self.g1 < 0 or not 0 <= self.g2 < 1):
            raise DomainError("autoregressive ES link needs g0, g1 >= 0 and 0 <= g2 < 1")

    def natural_vector(self) -> np.ndarray:
        return np.array([self.omega, self.beta, self.gamma_plus, self.gamma_minus, self.g0, self.g1, self.g2])

    def scaled(self, s: float, spec: AlSpec) -> "AlModelParams":
        g0 = self.g0 * s if spec.es_spec == "AR" else self.g0
        return AlModelParams(self.omega * s, self.beta, self.gamma_plus, self.gamma_minus, g0,
                             self.g1, self.g2, self.c * s, self.phi)


@njit(cache=True)
def _al_core(nat, y, alpha, q0, x0, link_ar, want_paths):
    omega, beta, gp, gm, g0, g1, g2 = nat[0], nat[1], nat[2], nat[3], nat[4], nat[5], nat[6]
    n = y.size
    m = n + 1 if want_paths else 1
    var_p = np.empty(m)
    es_p = np.empty(m)
    mult = 1.0 + math.exp(g0) if not link_ar else 0.0
    var = q0
    xx = x0
    nll = 0.0
    for t in range(n + 1):
        es = var * mult if not link_ar else var - xx
        if want_paths:
            var_p[t] = var
            es_p[t] = es
        if t == n:
            break
        if not (es < 0.0) or not (abs(var) < _BIG):
            if not want_paths:
                return PENALTY, var_p, es_p
            nll = PENALTY
        r = y[t]
        hit = r <= var
        if nll < PENALTY:
            nll += -math.log((alpha - 1.0) / es) - (r - var) * (alpha - (1.0 if hit else 0.0)) / (alpha * es)
        if link_ar and hit:
            xx = g0 + g1 * (var - r) + g2 * xx
        g = gp if r > 0.0 else gm
        var = omega + beta * var + g * abs(r)
    return nll, var_p, es_p


@njit(cache=True)
def _al_natural(x, n_var, link_ar):
    nat = np.zeros(7)
    nat[0] = x[0]
    nat[1] = x[1]
    nat[2] = x[2]
    nat[3] = x[3] if n_var == 4 else x[2]
    k = n_var
    if link_ar:
        nat[4] = x[k] * x[k]
        nat[5] = x[k + 1] * x[k + 1]
        nat[6] = 1.0 / (1.0 + math.exp(-x[k + 2]))
    else:
        nat[4] = x[k]
    return nat


@njit(cache=True)
def _al_objective(x, y, alpha, q0, x0, n_var, link_ar):
    nll, _, _ = _al_core(_al_natural(x, n_var, link_ar), y, alpha, q0, x0, link_ar, False)
    return nll


def _al_unconstrained(p: AlModelParams, spec: AlSpec) -> np.ndarray:
    x = [p.omega, p.beta, p.gamma_plus] + ([p.gamma_minus] if spec.var_spec == "AS" else [])
    if spec.es_spec == "AR":
        g2 = min(max(p.g2, 1e-9), 1 - 1e-9)
        x += [math.sqrt(p.g0), math.sqrt(p.g1), math.log(g2 / (1 - g2))]
    else:
        x.append(p.g0)
    return np.array(x, dtype=float)


def _al_from_x(x, spec: AlSpec, c=0.0, phi=0.0) -> AlModelParams:
    nat = _al_natural(np.asarray(x, dtype=float), spec.n_var, spec.es_spec == "AR")
    return AlModelParams(*(float(v) for v in nat), c=c, phi=phi)


def _al_init(y, alpha):
    """Sample alpha-quantile (VaR start) and mean exceedance beyond it (x start)."""
    q0 = empirical_quantile(y, alpha)
    tail = y[y <= q0]
    x0 = float(np.mean(q0 - tail)) if tail.size else 0.0
    return float(q0), x0


def al_paths(params: AlModelParams, spec: AlSpec, returns, alpha: float):
    """VaR and ES paths for ``returns`` including the one-step-ahead value.

    Paths are on the return scale (mean added back).  With an AR(1) mean
    they start at the second observation.
    """
    params.validate(spec)
    r = np.asarray(returns, dtype=float)
    y, mu, mu_next, _, _ = _demean_with(r, spec, params)
    q0, x0 = _al_init(y, alpha)
    _, var, es = _al_core(params.natural_vector(), np.ascontiguousarray(y), alpha, q0, x0,
                          spec.es_spec == "AR", True)
    mu_full = np.r_[mu, mu_next]
    return var + mu_full, es + mu_full


def _demean_with(r, spec: AlSpec, params: AlModelParams):
    if spec.mean == "zero":
        return r, np.zeros(r.size), 0.0, 0.0, 0.0
    mu = params.c + params.phi * r[:-1]
    return r[1:] - mu, mu, params.c + params.phi * r[-1], params.c, params.phi


def al_neg_loglik(params: AlModelParams, spec: AlSpec, returns, alpha: float) -> float:
    """Summed negative AL log density; ``PENALTY`` if any filtered ES is not negative."""
    params.validate(spec)
    r = np.asarray(returns, dtype=float)
    y = _demean_with(r, spec, params)[0]
    q0, x0 = _al_init(y, alpha)
    nll, _, _ = _al_core(params.natural_vector(), np.ascontiguousarray(y), alpha, q0, x0,
                         spec.es_spec == "AR", False)
    return float(nll)


@dataclass
class AlFit:
    spec: AlSpec
    alpha: float
    params: AlModelParams
    nll: float
    var_path: np.ndarray
    es_path: np.ndarray
    mu_next: float
    converged: bool

    def forecast(self, window_index=0) -> RiskForecast:
        return RiskForecast(var=float(self.var_path[-1]), es=float(self.es_path[-1]), alpha=self.alpha,
                            model_id=self.spec.model_id, window_index=window_index, mu=self.mu_next)


def _al_starts(y, alpha, spec: AlSpec, q0, x0):
    mean_abs = float(np.mean(np.abs(y)))
    tail = y[y <= q0]
    es_hat = float(np.mean(tail)) if tail.size else 1.5 * q0
    ratio = es_hat / q0 if q0 < 0 else 1.3
    starts = []
    for beta in (0.8, 0.9):
        for gamma in (-0.1, -0.3):
            gp, gm = (gamma, gamma) if spec.var_spec == "SAV" else (0.5 * gamma, 1.5 * gamma)
            omega = q0 * (1 - beta) - 0.5 * (gp + gm) * mean_abs
            if spec.es_spec == "Mult":
                link = dict(g0=math.log(max(ratio - 1.0, 0.05)))
            else:
                g1, g2 = 0.1, 0.5
                link = dict(g0=max(x0 * (1 - g1 - g2), 0.01), g1=g1, g2=g2)
            starts.append(_al_unconstrained(AlModelParams(omega, beta, gp, gm, **link), spec))
    return starts


def fit_al_model(returns, alpha: float, spec: AlSpec = AlSpec(), *,
                 warm: AlModelParams | None = None) -> AlFit:
    """Pseudo-maximum likelihood under the AL density.

    VaR starts at the sample alpha-quantile and the exceedance state at the
    mean exceedance beyond it.  An AR(1) mean is removed by least squares
    first.  Optimization runs on the series divided by its standard
    deviation with a 4-point start grid.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 250:
        raise DomainError("AL fit needs at least 250 observations")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    y, mu, mu_next, c, phi = _demean(r, spec.mean)
    sd = float(np.std(y))
    if not sd > 0:
        raise EstimationError("series has zero variance")
    z = np.ascontiguousarray(y / sd)
    q0, x0 = _al_init(z, alpha)
    link_ar = spec.es_spec == "AR"
    if warm is not None:
        starts = [_al_unconstrained(warm.scaled(1.0 / sd, spec), spec)]
    else:
        starts = _al_starts(z, alpha, spec, q0, x0)
    best, results = multistart(_al_objective, starts, args=(z, alpha, q0, x0, spec.n_var, link_ar),
                               step=np.full(starts[0].size, 0.05), xatol=1e-8, fatol=1e-9)
    if best is None or not best.fun < PENALTY:
        raise EstimationError(f"all starts infeasible for {spec.model_id}",
                              {"objectives": [res.fun for res in results]})
    params = _al_from_x(best.x, spec).scaled(sd, spec)
    params = AlModelParams(params.omega, params.beta, params.gamma_plus, params.gamma_minus,
                           params.g0, params.g1, params.g2, c, phi)
    _, var, es = _al_core(params.natural_vector(), np.ascontiguousarray(y), alpha, q0 * sd, x0 * sd, link_ar, True)
    mu_full = np.r_[mu, mu_next]
    nll = best.fun + z.size * math.log(sd)
    return AlFit(spec, float(alpha), params, float(nll), var + mu_full, es + mu_full, float(mu_next),
                 best.converged)


# --- one-factor GAS ------------------------------------------------------------

@dataclass(frozen=True)
class GasParams:
    zeta: float
    xi: float
    beta: float
    gamma: float
    kappa0: float = 0.0
    c: float = 0.0
    phi: float = 0.0

    def validate(self):
        if not self.xi < self.zeta < 0:
            raise DomainError("GAS loadings need xi < zeta < 0")
        if not abs(self.beta) < 1:
            raise DomainError("GAS factor persistence must lie in (-1, 1)")


@dataclass
class GasPath:
    kappa: np.ndarray
    var: np.ndarray
    es: np.ndarray
    mean_loss: float
    diverged: bool


@njit(cache=True)
def _gas_core(zeta, xi, beta, gamma, kappa0, y, alpha, want_paths):
    n = y.size
    m = n + 1 if want_paths else 1
    kap = np.empty(m)
    k = kappa0
    total = 0.0
    diverged = False
    for t in range(n + 1):
        if want_paths:
            kap[t] = k
        if t == n:
            break
        if not abs(k) < _KAPPA_MAX:
            diverged = True
            if not want_paths:
                return PENALTY, kap, True
        ek = math.exp(min(max(k, -_KAPPA_MAX), _KAPPA_MAX))
        var = zeta * ek
        es = xi * ek
        r = y[t]
        hit = 1.0 if r <= var else 0.0
        total += -hit * (var - r) / (alpha * es) + var / es + math.log(-es) - 1.0
        g = -(hit * r / alpha - es) / es
        k = beta * k + gamma * g
    if diverged:
        return PENALTY, kap, True
    return total / n, kap, False


def gas_filter(params: GasParams, returns, alpha: float, *, mean: str = "zero") -> GasPath:
    """Filter the common factor; paths include the one-step-ahead value."""
    params.validate()
    r = np.asarray(returns, dtype=float)
    if mean == "zero":
        y, mu, mu_next = r, np.zeros(r.size), 0.0
    else:
        mu = params.c + params.phi * r[:-1]
        y, mu_next = r[1:] - mu, params.c + params.phi * r[-1]
    loss, kap, div = _gas_core(params.zeta, params.xi, params.beta, params.gamma, params.kappa0,
                               np.ascontiguousarray(y), alpha, True)
    ek = np.exp(np.clip(kap, -_KAPPA_MAX, _KAPPA_MAX))
    mu_full = np.r_[mu, mu_next]
    return GasPath(kap, params.zeta * ek + mu_full, params.xi * ek + mu_full, float(loss), bool(div))


@njit(cache=True)
def _gas_objective(x, y, alpha):
    zeta = -math.exp(x[0])
    xi = zeta - math.exp(x[1])
    loss, _, _ = _gas_core(zeta, xi, math.tanh(x[2]), x[3], 0.0, y, alpha, False)
    return loss


@dataclass
class GasFit:
    alpha: float
    mean: str
    params: GasParams
    path: GasPath
    mu_next: float
    converged: bool

    @property
    def model_id(self) -> str:
        return "AR-GAS" if self.mean == "ar1" else "GAS"

    def forecast(self, window_index=0) -> RiskForecast:
        return RiskForecast(var=float(self.path.var[-1]), es=float(self.path.es[-1]), alpha=self.alpha,
                            model_id=self.model_id, window_index=window_index, mu=self.mu_next)


def fit_gas_fz0(returns, alpha: float, *, mean: str = "zero", warm: GasParams | None = None) -> GasFit:
    """Minimize mean FZ0 loss over (zeta, xi, beta, gamma) with kappa_0 = 0.

    Loadings are parameterized so that ``xi < zeta < 0`` at every iterate
    and the factor persistence is kept inside ``(-1, 1)``; paths whose
    factor leaves ``|kappa| < 50`` are rejected.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 250:
        raise DomainError("GAS fit needs at least 250 observations")
    if mean not in ("zero", "ar1"):
        raise DomainError(f"unknown mean model {mean!r}")
    y, _, mu_next, c, phi = _demean(r, mean)
    sd = float(np.std(y))
    if not sd > 0:
        raise EstimationError("series has zero variance")
    z = np.ascontiguousarray(y / sd)
    if warm is not None:
        starts = [np.array([math.log(-warm.zeta / sd), math.log((warm.zeta - warm.xi) / sd),
                            math.atanh(warm.beta), warm.gamma])]
    else:
        q = empirical_quantile(z, alpha)
        tail = z[z <= q]
        zeta = min(q, -1e-3)
        xi = min(float(np.mean(tail)) if tail.size else 1.5 * zeta, zeta - 1e-3)
        starts = [np.array([math.log(-zeta), math.log(zeta - xi), math.atanh(b), -g * alpha])
                  for b in (0.95, 0.99) for g in (0.1, 0.3)]
    best, results = multistart(_gas_objective, starts, args=(z, alpha), step=np.array([0.1, 0.1, 0.2, 0.005]),
                               tie_key=lambda x: x[2], xatol=1e-9, fatol=1e-11)
    if best is None or not best.fun < PENALTY:
        raise EstimationError("GAS fit diverged from every start", {"objectives": [res.fun for res in results]})
    zeta = -math.exp(best.x[0])
    params = GasParams(zeta * sd, (zeta - math.exp(best.x[1])) * sd, math.tanh(best.x[2]), float(best.x[3]),
                       0.0, c, phi)
    return GasFit(float(alpha), mean, params, gas_filter(params, r, alpha, mean=mean), float(mu_next),
                  best.converged)
