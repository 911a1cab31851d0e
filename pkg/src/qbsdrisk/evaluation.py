"""Forecast scores and the Model Confidence Set with a moving-block bootstrap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from qbsdrisk.errors import DomainError
from qbsdrisk.joint_ves import fz0_loss
from qbsdrisk.simulation import make_rng

__all__ = [
    "quantile_score",
    "al_log_score",
    "fz0_loss",
    "mae_rmse",
    "LossPanel",
    "BootstrapConfig",
    "McsResult",
    "block_bootstrap_indices",
    "mcs",
]


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


def quantile_score(r, var, alpha):
    """Quantile (check) score of a VaR forecast; zero only when ``r == var``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    r, var = np.asarray(r, dtype=float), np.asarray(var, dtype=float)
    return _scalar_or_array((r - var) * (alpha - (r <= var)))


def al_log_score(r, mu, var, es, alpha):
    """Negative AL log score of a joint (VaR, ES) forecast around location ``mu``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    r, mu, var, es = (np.asarray(a, dtype=float) for a in (r, mu, var, es))
    tail = es - mu
    if np.any(~(tail < 0)):
        raise DomainError("AL score needs ES below the location forecast")
    hit = (r <= var).astype(float)
    out = -np.log((alpha - 1.0) / tail) - (r - var) * (alpha - hit) / (alpha * tail)
    return _scalar_or_array(out)


def mae_rmse(forecasts, truths) -> tuple[float, float]:
    f, t = np.asarray(forecasts, dtype=float), np.asarray(truths, dtype=float)
    if f.shape != t.shape or f.size == 0:
        raise DomainError("forecasts and truths must be non-empty and of equal length")
    err = f - t
    return float(np.mean(np.abs(err))), float(math.sqrt(np.mean(err * err)))


@dataclass(frozen=True)
class LossPanel:
    losses: np.ndarray
    model_ids: tuple
    score: str = ""

    def __post_init__(self):
        arr = np.asarray(self.losses, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise DomainError("loss panel must be a non-empty 2-d array")
        if arr.shape[1] != len(self.model_ids):
            raise DomainError("one model id per column required")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise DomainError("model ids must be unique")
        if not np.all(np.isfinite(arr)):
            raise DomainError("loss panel contains non-finite entries")
        object.__setattr__(self, "losses", arr)
        object.__setattr__(self, "model_ids", tuple(self.model_ids))

    @property
    def mean_losses(self) -> dict:
        return dict(zip(self.model_ids, self.losses.mean(axis=0).tolist()))


@dataclass(frozen=True)
class BootstrapConfig:
    iterations: int = 1000
    block_length: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 100:
            raise DomainError("need at least 100 bootstrap iterations")
        if self.block_length is not None and self.block_length < 1:
            raise DomainError("block length must be positive")

    def resolved_block(self, n: int) -> int:
        block = self.block_length if self.block_length is not None else math.ceil(n ** (1.0 / 3.0))
        if not 1 <= block <= n:
            raise DomainError(f"block length {block} must lie in [1, {n}]")
        return block


@dataclass
class McsResult:
    survivors: tuple
    elimination_order: tuple
    pvalues: dict
    ranks: dict
    confidence: float
    statistics: dict = field(default_factory=dict)

    def survives(self, model_id) -> bool:
        return model_id in self.survivors

    def report_rank(self, model_id) -> int:
        """Rank among survivors; eliminated models take the panel width."""
        return self.ranks[model_id] if model_id in self.survivors else len(self.pvalues)


def block_bootstrap_indices(n: int, block: int, iterations: int, rng):
    """Start positions of moving blocks, shape ``(iterations, ceil(n / block))``."""
    k = math.ceil(n / block)
    return make_rng(rng).integers(0, n - block + 1, size=(iterations, k))


def _bootstrap_means(losses, starts, block):
    """Column means of each resampled panel, via prefix sums over blocks."""
    n = losses.shape[0]
    csum = np.vstack([np.zeros(losses.shape[1]), np.cumsum(losses, axis=0)])
    k = starts.shape[1]
    lengths = np.full(k, block)
    lengths[-1] = n - block * (k - 1)
    sums = csum[starts + lengths] - csum[starts]
    return sums.sum(axis=1) / n


def _studentize(diff, var, tiny):
    """``diff / sqrt(var)``; a zero-variance difference is infinite unless it is zero too."""
    degenerate = ~(var > tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / np.sqrt(var)
        inf_t = np.where(np.abs(diff) > math.sqrt(tiny), np.copysign(np.inf, diff), 0.0)
    return np.where(degenerate, inf_t, t)


def _range_test(mean, boot, active, tiny):
    """p-value of the range statistic and the index of the model to drop."""
    idx = np.flatnonzero(active)
    m, b = mean[idx], boot[:, idx]
    d = m[:, None] - m[None, :]
    db = b[:, :, None] - b[:, None, :]
    centred = db - d
    var = np.mean(centred**2, axis=0)
    t = _studentize(d, var, tiny)
    stat = np.max(np.abs(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = np.where(var > tiny, np.abs(centred) / np.sqrt(var), 0.0)
    null = tb.reshape(tb.shape[0], -1).max(axis=1)
    pval = float(np.mean(null >= stat)) if np.isfinite(stat) else 0.0
    if stat == 0:
        pval = 1.0
    ti = _pooled_t(m, b, tiny)
    return pval, idx[int(np.argmax(ti))], stat


def _pooled_t(mean, boot, tiny):
    """Studentized loss of each model relative to the average of the set."""
    di = mean - mean.mean()
    dib = boot - boot.mean(axis=1, keepdims=True)
    var = np.mean((dib - di) ** 2, axis=0)
    return _studentize(di, var, tiny)


def mcs(panel: LossPanel, confidence: float = 0.90, config: BootstrapConfig = BootstrapConfig()) -> McsResult:
    """Model Confidence Set with the range statistic.

    One set of moving-block resamples is drawn and reused at every
    elimination step, so survivor sets for different confidence levels are
    nested.  Elimination runs to a single model; p-values are the running
    maximum along the elimination order.
    """
    if not 0 < confidence < 1:
        raise DomainError("confidence must lie in (0, 1)")
    losses = panel.losses
    n, m = losses.shape
    if m < 2:
        raise DomainError("MCS needs at least two models")
    block = config.resolved_block(n)
    starts = block_bootstrap_indices(n, block, config.iterations, config.seed)
    boot = _bootstrap_means(losses, starts, block)
    mean = losses.mean(axis=0)
    # variances below this are rounding noise of exactly constant differences
    tiny = (1e-10 * (1.0 + float(np.max(np.abs(losses))))) ** 2

    active = np.ones(m, dtype=bool)
    order, pvals, stats = [], {}, {}
    running = 0.0
    while active.sum() > 1:
        p, worst, stat = _range_test(mean, boot, active, tiny)
        running = max(running, p)
        name = panel.model_ids[worst]
        order.append(name)
        pvals[name] = running
        stats[name] = float(stat)
        active[worst] = False
    last = panel.model_ids[int(np.flatnonzero(active)[0])]
    order.append(last)
    pvals[last] = 1.0

    survivors = tuple(mid for mid in panel.model_ids if pvals[mid] >= 1.0 - confidence)
    # rank survivors by their studentized loss relative to the surviving set
    surv_idx = [panel.model_ids.index(s) for s in survivors]
    t_surv = _pooled_t(mean[surv_idx], boot[:, surv_idx], tiny)
    ranking = [surv_idx[k] for k in sorted(range(len(surv_idx)), key=lambda k: (t_surv[k], surv_idx[k]))]
    ranks = {panel.model_ids[i]: r + 1 for r, i in enumerate(ranking)}
    return McsResult(survivors, tuple(order), pvals, ranks, confidence, stats)
