"""Check loss, empirical quantiles and the QAR(1) conditional median."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from qbsdrisk.errors import DomainError, EstimationError

__all__ = [
    "check_loss",
    "empirical_quantile",
    "sorted_quantile",
    "QarParams",
    "LocationSpec",
    "fit_qar_median",
    "location_path",
]


def check_loss(u, k):
    """Quantile-regression check loss ``u * (k - 1{u <= 0})``."""
    if not (0.0 < k < 1.0):
        raise DomainError(f"quantile level must lie in (0, 1), got {k!r}")
    u = np.asarray(u, dtype=float)
    out = u * (k - (u <= 0.0))
    return float(out) if out.ndim == 0 else out


def empirical_quantile(sample, u):
    """Sample quantile by linear interpolation at position ``(n - 1) * u``.

    This is the usual "type 7" definition, identical to
    ``numpy.quantile(..., method="linear")``.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty sample")
    uu = np.asarray(u, dtype=float)
    if np.any(~(uu > 0.0)) or np.any(~(uu < 1.0)):
        raise DomainError("quantile level must lie in (0, 1)")
    return sorted_quantile(np.sort(x), uu)


def sorted_quantile(xs, u):
    """Type-7 quantiles of an already sorted sample (no validation)."""
    n = xs.size
    out = np.interp(np.asarray(u, dtype=float) * (n - 1), np.arange(n), xs)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class QarParams:
    """Median autoregression ``Q(0.5 | past) = mu + phi * r_{t-1}``."""

    mu: float
    phi: float


@dataclass(frozen=True)
class LocationSpec:
    """Which conditional location enters ``y_t = r_t - mu_t``.

    ``kind`` is ``"zero"``, ``"median"`` (constant sample median) or
    ``"qar1"``.  A ``qar1`` spec without ``qar`` coefficients is fitted on
    the data passed to :func:`location_path`.
    """

    kind: Literal["zero", "median", "qar1"] = "zero"
    qar: QarParams | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "median", "qar1"):
            raise DomainError(f"unknown location kind {self.kind!r}")
        if self.qar is not None and self.kind != "qar1":
            raise DomainError("QAR coefficients only apply to kind='qar1'")


def _median_regression_lp(y, x):
    """Exact least-absolute-deviation fit of y on (1, x) as a linear program."""
    n = y.size
    # variables: mu, phi (free), e_plus (n), e_minus (n)
    c = np.concatenate([[0.0, 0.0], np.full(2 * n, 0.5)])
    eye = sparse.identity(n, format="csc")
    a_eq = sparse.hstack([sparse.csc_matrix(np.column_stack([np.ones(n), x])), eye, -eye], format="csc")
    bounds = [(None, None), (None, None)] + [(0.0, None)] * (2 * n)
    res = linprog(c, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise EstimationError(f"median regression failed: {res.message}")
    return float(res.x[0]), float(res.x[1]), float(res.fun)


def fit_qar_median(returns) -> QarParams:
    """Fit the QAR(1) median by minimizing summed check loss at level 0.5.

    The problem is solved exactly as a linear program, so the returned
    coefficients are a global minimizer of the (non-smooth) objective.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 30:
        raise DomainError("QAR(1) fit needs at least 30 observations")
    if not np.all(np.isfinite(r)):
        raise DomainError("returns must be finite")
    if np.all(r == r[0]):
        return QarParams(mu=float(r[0]), phi=0.0)
    mu, phi, _ = _median_regression_lp(r[1:], r[:-1])
    return QarParams(mu=mu, phi=phi)


def qar_objective(params: QarParams, returns) -> float:
    r = np.asarray(returns, dtype=float)
    return float(np.sum(check_loss(r[1:] - params.mu - params.phi * r[:-1], 0.5)))


def location_path(spec: LocationSpec, returns):
    """Fitted location ``mu_t`` for t = 1..T and the forecast ``mu_{T+1}``.

    Returns ``(path, mu_next, spec)`` where ``spec`` carries fitted QAR
    coefficients when they were estimated here.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size == 0 or not np.all(np.isfinite(r)):
        raise DomainError("returns must be a non-empty finite 1-d sequence")
    if spec.kind == "zero":
        return np.zeros(r.size), 0.0, spec
    med = float(np.median(r))
    if spec.kind == "median":
        return np.full(r.size, med), med, spec
    qar = spec.qar if spec.qar is not None else fit_qar_median(r)
    path = np.empty(r.size)
    path[0] = med
    path[1:] = qar.mu + qar.phi * r[:-1]
    return path, qar.mu + qar.phi * r[-1], LocationSpec("qar1", qar)
