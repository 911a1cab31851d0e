"""Compiled Nelder-Mead simplex search with restarts and multi-start.

The objectives in this package (check losses, FZ0, AL likelihoods) are
non-smooth and cheap to evaluate once jitted, so the whole simplex loop is
compiled together with the objective.  Objectives are numba functions with
signature ``f(x, *args) -> float``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

# standard reflection / expansion / contraction / shrink coefficients
_RHO, _CHI, _PSI, _SIGMA = 1.0, 2.0, 0.5, 0.5


@njit(cache=True)
def _clean(v):
    if np.isfinite(v):
        return v
    return np.inf


@njit(cache=True)
def _sort_simplex(sim, fsim):
    order = np.argsort(fsim)
    return sim[order].copy(), fsim[order].copy()


@njit(cache=True)
def _nelder_mead(f, x0, step, args, xatol, fatol, maxiter):
    n = x0.size
    sim = np.empty((n + 1, n))
    fsim = np.empty(n + 1)
    sim[0] = x0
    for k in range(n):
        sim[k + 1] = x0
        sim[k + 1, k] += step[k]
    for k in range(n + 1):
        fsim[k] = _clean(f(sim[k], *args))
    nfev = n + 1
    sim, fsim = _sort_simplex(sim, fsim)

    converged = False
    it = 0
    xbar = np.empty(n)
    while it < maxiter:
        xd = 0.0
        fd = 0.0
        for k in range(1, n + 1):
            fd = max(fd, abs(fsim[k] - fsim[0]))
            for j in range(n):
                xd = max(xd, abs(sim[k, j] - sim[0, j]))
        if xd <= xatol and fd <= fatol:
            converged = True
            break
        if not np.isfinite(fsim[0]):
            break

        for j in range(n):
            s = 0.0
            for k in range(n):
                s += sim[k, j]
            xbar[j] = s / n
        worst = sim[n].copy()
        xr = (1.0 + _RHO) * xbar - _RHO * worst
        fxr = _clean(f(xr, *args))
        nfev += 1
        shrink = False
        if fxr < fsim[0]:
            xe = (1.0 + _RHO * _CHI) * xbar - _RHO * _CHI * worst
            fxe = _clean(f(xe, *args))
            nfev += 1
            if fxe < fxr:
                sim[n] = xe
                fsim[n] = fxe
            else:
                sim[n] = xr
                fsim[n] = fxr
        elif fxr < fsim[n - 1]:
            sim[n] = xr
            fsim[n] = fxr
        elif fxr < fsim[n]:
            xc = (1.0 + _PSI * _RHO) * xbar - _PSI * _RHO * worst
            fxc = _clean(f(xc, *args))
            nfev += 1
            if fxc <= fxr:
                sim[n] = xc
                fsim[n] = fxc
            else:
                shrink = True
        else:
            xcc = (1.0 - _PSI) * xbar + _PSI * worst
            fxcc = _clean(f(xcc, *args))
            nfev += 1
            if fxcc < fsim[n]:
                sim[n] = xcc
                fsim[n] = fxcc
            else:
                shrink = True
        if shrink:
            for k in range(1, n + 1):
                sim[k] = sim[0] + _SIGMA * (sim[k] - sim[0])
                fsim[k] = _clean(f(sim[k], *args))
                nfev += 1
        sim, fsim = _sort_simplex(sim, fsim)
        it += 1
    return sim[0].copy(), fsim[0], it, nfev, converged


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return bool(np.isfinite(self.fun))


def default_step(x0, rel=0.1, floor=0.05):
    x0 = np.asarray(x0, dtype=float)
    return np.maximum(rel * np.abs(x0), floor)


def minimize_nm(f, x0, args=(), step=None, xatol=1e-8, fatol=1e-8,
                maxiter=5000, restarts=2) -> OptimResult:
    """Minimize ``f(x, *args)`` by Nelder-Mead, restarting from the best point.

    A fresh simplex is built around the incumbent after each run; restarts
    stop early once a run no longer improves the objective by more than
    ``fatol``.  ``maxiter`` bounds each individual run.
    """
    x = np.ascontiguousarray(x0, dtype=float)
    step = default_step(x) if step is None else np.ascontiguousarray(step, dtype=float)
    x, fun, nit, nfev, conv = _nelder_mead(f, x, step, tuple(args), xatol, fatol, maxiter)
    history = [fun]
    for _ in range(restarts):
        if not np.isfinite(fun):
            break
        x2, fun2, nit2, nfev2, conv2 = _nelder_mead(
            f, x, np.maximum(step * 0.5, 1e-4), tuple(args), xatol, fatol, maxiter)
        nit += nit2
        nfev += nfev2
        history.append(fun2)
        improved = fun2 < fun - fatol
        if fun2 <= fun:
            x, fun, conv = x2, fun2, conv2
        if not improved:
            break
    return OptimResult(x=x, fun=float(fun), nit=int(nit), nfev=int(nfev),
                       converged=bool(conv), history=history)


def multistart(f, starts, args=(), step=None, tie_key=None, **kw):
    """Run :func:`minimize_nm` from each start; return (best, all results).

    ``tie_key(x)`` orders results whose objectives agree to 1e-12 relative.
    """
    results = [minimize_nm(f, s, args=args, step=step, **kw) for s in starts]
    finite = [r for r in results if r.success]
    if not finite:
        return None, results
    best_f = min(r.fun for r in finite)
    tol = 1e-12 * max(1.0, abs(best_f))
    tied = [r for r in finite if r.fun <= best_f + tol]
    if tie_key is not None and len(tied) > 1:
        tied.sort(key=lambda r: tie_key(r.x))
    return tied[0], results
