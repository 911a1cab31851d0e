"""Rolling-window backtests, the model registry, CSV persistence and the simulation driver."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path

import numpy as np

from qbsdrisk.distributions import SkewedTParams
from qbsdrisk.errors import DomainError, EstimationError, InputError, SimulationError
from qbsdrisk.evaluation import BootstrapConfig, LossPanel, McsResult, al_log_score, mae_rmse, mcs, quantile_score
from qbsdrisk.garch import GarchFit, GarchModelSpec, fit_garch, garch_variance_path
from qbsdrisk.joint_ves import AlSpec, GasFit, al_paths, fit_al_model, fit_gas_fz0, gas_filter
from qbsdrisk.qbsd import QbsdFit, fit_qbsd
from qbsdrisk.quantile_core import LocationSpec
from qbsdrisk.simulation import AparchParams, simulate_aparch, true_var_es

__all__ = [
    "ReturnSeries",
    "BacktestConfig",
    "ForecastRow",
    "ForecastTable",
    "MODEL_IDS",
    "get_model",
    "load_prices",
    "parse_config",
    "load_config",
    "run_rolling",
    "write_forecasts",
    "read_forecasts",
    "EvaluationResult",
    "evaluate_run",
    "write_losses",
    "write_mcs",
    "DgpConfig",
    "read_grid",
    "run_simulation_study",
    "write_study",
    "worker_count",
]


# --- data --------------------------------------------------------------------

@dataclass(frozen=True)
class ReturnSeries:
    """Percent log returns; ``dates[i]`` is the date of ``returns[i]``."""

    dates: tuple
    returns: np.ndarray
    symbol: str = ""

    def __post_init__(self):
        if len(self.dates) != len(self.returns):
            raise DomainError("one date per return required")
        if not np.all(np.isfinite(self.returns)):
            raise DomainError("returns must be finite")

    def __len__(self):
        return len(self.returns)


def load_prices(path, symbol: str | None = None) -> ReturnSeries:
    """Read ``date,adj_close`` rows and convert to ``100 * log`` price ratios."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip().lstrip("﻿") != "date,adj_close":
        raise InputError(f"{path}:1: header must be 'date,adj_close'")
    dates, prices = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.strip().split(",")
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            d = date.fromisoformat(parts[0].strip())
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad date {parts[0]!r}") from None
        try:
            price = float(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad price {parts[1]!r}") from None
        if not (math.isfinite(price) and price > 0):
            raise InputError(f"{path}:{lineno}: price must be positive and finite")
        if dates and d <= dates[-1]:
            raise InputError(f"{path}:{lineno}: dates must be strictly increasing ({d} after {dates[-1]})")
        dates.append(d)
        prices.append(price)
    if len(prices) < 2:
        raise InputError(f"{path}: need at least two prices")
    r = 100.0 * np.diff(np.log(np.asarray(prices)))
    return ReturnSeries(tuple(x.isoformat() for x in dates[1:]), r, symbol or path.stem)


# --- configuration -----------------------------------------------------------

DEFAULT_MODELS = ("QbSD-gSAV", "QbSD-gAS", "GARCH-t", "GJR-GARCH-skew-t")


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 1250
    alphas: tuple = (0.01, 0.025, 0.05)
    models: tuple = DEFAULT_MODELS
    refit_every: int = 1
    seed: int = 0
    symbol: str = ""
    output: str = "forecasts.csv"

    def __post_init__(self):
        if self.window < 250:
            raise InputError("window must be at least 250")
        if not self.alphas or any(not 0 < a <= 0.05 for a in self.alphas):
            raise InputError("alphas must lie in (0, 0.05]")
        if len(set(self.alphas)) != len(self.alphas):
            raise InputError("alphas must be distinct")
        if self.refit_every < 1:
            raise InputError("refit_every must be at least 1")
        if not self.models:
            raise InputError("at least one model required")
        for m in self.models:
            get_model(m)
        if len(set(self.models)) != len(self.models):
            raise InputError("models must be distinct")


def _split_list(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


_CONFIG_PARSERS = {
    "window": int,
    "alphas": lambda s: tuple(sorted(float(x) for x in _split_list(s))),
    "models": _split_list,
    "refit_every": int,
    "seed": int,
    "symbol": str,
    "output": str,
}


def parse_config(text: str, source: str = "<config>") -> BacktestConfig:
    """``key = value`` lines with ``#`` comments; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_PARSERS:
            raise InputError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise InputError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](val)
        except ValueError:
            raise InputError(f"{source}:{lineno}: bad value for {key}: {val!r}") from None
    return BacktestConfig(**values)


def load_config(path) -> BacktestConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


# --- model registry ----------------------------------------------------------

class _Model:
    """Fit, re-filter with fixed parameters, and forecast for one registry id."""

    model_id: str

    def fit(self, r, alphas, warm):
        raise NotImplementedError

    def refilter(self, state, r):
        raise NotImplementedError

    def forecast(self, state, alphas):
        raise NotImplementedError


class _QbsdModel(_Model):
    def __init__(self, model_id, variant, location):
        self.model_id, self.variant, self.location = model_id, variant, location

    def fit(self, r, alphas, warm):
        return fit_qbsd(r, self.variant, self.location, warm=warm.warm_params() if warm else None)

    def refilter(self, state: QbsdFit, r):
        return state.refilter(r)

    def forecast(self, state: QbsdFit, alphas):
        return state.forecast(alphas, model_id=self.model_id)


class _GarchModel(_Model):
    def __init__(self, spec: GarchModelSpec):
        self.spec, self.model_id = spec, spec.model_id

    def fit(self, r, alphas, warm):
        return fit_garch(r, self.spec, warm=warm.params if warm else None)

    def refilter(self, state: GarchFit, r):
        e, s2 = garch_variance_path(state.params, self.spec, r)
        if not (np.all(np.isfinite(s2)) and np.all(s2 > 0)):
            raise EstimationError("variance filter broke down with carried parameters")
        p = state.params
        mu_next = p.c + p.phi * r[-1] if self.spec.mean == "ar1" else 0.0
        return GarchFit(self.spec, p, float("nan"), s2, e, float(mu_next), state.converged)

    def forecast(self, state: GarchFit, alphas):
        return state.forecast(alphas)


class _PerAlphaModel(_Model):
    """Families estimated separately at each level; state maps alpha to a fit."""

    def fit(self, r, alphas, warm):
        return {a: self._fit_one(r, a, warm[a].params if warm else None) for a in alphas}

    def forecast(self, state, alphas):
        return [state[a].forecast() for a in alphas]


class _AlModel(_PerAlphaModel):
    def __init__(self, spec: AlSpec):
        self.spec, self.model_id = spec, spec.model_id

    def _fit_one(self, r, alpha, warm):
        return fit_al_model(r, alpha, self.spec, warm=warm)

    def refilter(self, state, r):
        out = {}
        for a, f in state.items():
            var, es = al_paths(f.params, self.spec, r, a)
            if not (np.isfinite(var[-1]) and np.isfinite(es[-1])):
                raise EstimationError("AL filter broke down with carried parameters")
            mu_next = f.params.c + f.params.phi * r[-1] if self.spec.mean == "ar1" else 0.0
            out[a] = replace(f, var_path=var, es_path=es, mu_next=float(mu_next), nll=float("nan"))
        return out


class _GasModel(_PerAlphaModel):
    def __init__(self, mean):
        self.mean = mean
        self.model_id = "AR-GAS" if mean == "ar1" else "GAS"

    def _fit_one(self, r, alpha, warm):
        return fit_gas_fz0(r, alpha, mean=self.mean, warm=warm)

    def refilter(self, state, r):
        out = {}
        for a, f in state.items():
            path = gas_filter(f.params, r, a, mean=self.mean)
            if path.diverged:
                raise EstimationError("GAS factor diverged with carried parameters")
            mu_next = f.params.c + f.params.phi * r[-1] if self.mean == "ar1" else 0.0
            out[a] = GasFit(a, self.mean, f.params, path, float(mu_next), f.converged)
        return out


def _build_registry() -> dict:
    reg = {}
    for mean in ("zero", "ar1"):
        for family in ("garch", "gjr"):
            for dist in ("normal", "t", "skew-t"):
                m = _GarchModel(GarchModelSpec(family, dist, mean))
                reg[m.model_id] = m
        m = _GarchModel(GarchModelSpec("egarch", "normal", mean))
        reg[m.model_id] = m
        m = _GasModel(mean)
        reg[m.model_id] = m
        for es_spec in ("Mult", "AR"):
            for var_spec in ("SAV", "AS"):
                m = _AlModel(AlSpec(var_spec, es_spec, mean))
                reg[m.model_id] = m
    for variant in ("gSAV", "gAS"):
        reg[f"QbSD-{variant}"] = _QbsdModel(f"QbSD-{variant}", variant, LocationSpec("zero"))
        reg[f"QAR-QbSD-{variant}"] = _QbsdModel(f"QAR-QbSD-{variant}", variant, LocationSpec("qar1"))
    return reg


_REGISTRY = _build_registry()
MODEL_IDS = tuple(_REGISTRY)


def get_model(model_id: str) -> _Model:
    try:
        return _REGISTRY[model_id]
    except KeyError:
        raise InputError(f"unknown model {model_id!r}") from None


# --- rolling engine ----------------------------------------------------------

@dataclass(frozen=True)
class ForecastRow:
    date: str
    model: str
    alpha: float
    var: float
    es: float
    realized: float
    window: int
    flag: str = ""
    mu: float = 0.0


@dataclass
class ForecastTable:
    rows: list
    fit_counts: dict = field(default_factory=dict)
    missing: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    @property
    def flagged(self) -> int:
        return sum(1 for r in self.rows if r.flag)


def worker_count(n_tasks: int) -> int:
    """Workers for ``n_tasks``: ``QBSD_THREADS`` if set, else one per core."""
    env = os.environ.get("QBSD_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise InputError(f"QBSD_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise InputError("QBSD_THREADS must be at least 1")
    else:
        cap = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _join_flag(*parts):
    return ";".join(p for p in parts if p)


def _run_model(model_id: str, returns: np.ndarray, window: int, alphas: tuple, refit_every: int):
    """All out-of-sample windows of one model, in date order.

    Returns ``(per_window, fit_count)`` where ``per_window[w]`` is a list of
    forecasts (one per alpha) or ``None`` when nothing could be produced.
    """
    model = get_model(model_id)
    n_out = returns.size - window
    state, last, fits = None, None, 0
    out = []
    for w in range(n_out):
        r = returns[w:w + window]
        flag = ""
        try:
            if w % refit_every == 0 or state is None:
                fits += 1
                state = model.fit(r, alphas, state)
            else:
                state = model.refilter(state, r)
            fc = model.forecast(state, alphas)
        except (EstimationError, DomainError, FloatingPointError) as exc:
            flag = "fit_failed:" + type(exc).__name__
            fc = None
        if fc is None:
            fc = [replace(f, flag=_join_flag(f.flag, flag)) for f in last] if last is not None else None
        else:
            last = fc
        out.append(fc)
    return out, fits


def run_rolling(series: ReturnSeries, config: BacktestConfig, *, workers: int | None = None) -> ForecastTable:
    """Fit every model on each trailing window of ``config.window`` returns.

    Window ``w`` uses returns ``[w, w + R)`` and forecasts return ``w + R``.
    Models run in parallel, each walking its windows in order so warm starts
    and carried parameters are reproducible regardless of scheduling.
    """
    R = config.window
    r = np.ascontiguousarray(series.returns, dtype=float)
    if r.size <= R:
        raise InputError(f"series has {r.size} returns; need more than the window {R}")
    models = config.models
    n = worker_count(len(models)) if workers is None else workers
    args = [(m, r, R, tuple(config.alphas), config.refit_every) for m in models]
    if n <= 1:
        results = [_run_model(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_model, *zip(*args)))

    rows, fit_counts, missing = [], {}, {}
    for m, (_, fits) in zip(models, results):
        fit_counts[m] = fits
    for w in range(r.size - R):
        t = R + w
        for m, (per, _) in zip(models, results):
            if per[w] is None:
                missing[m] = missing.get(m, 0) + len(config.alphas)
                continue
            for f in per[w]:
                rows.append(ForecastRow(series.dates[t], m, f.alpha, f.var, f.es, float(r[t]), w, f.flag, f.mu))
    return ForecastTable(rows, fit_counts, missing)


# --- persistence -------------------------------------------------------------

FORECAST_HEADER = ("date", "model", "alpha", "var", "es", "realized", "window", "flag", "mu")


def _g10(x: float) -> str:
    return f"{x:.10g}"


def write_forecasts(table: ForecastTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for row in table.rows:
            w.writerow([row.date, row.model, _g10(row.alpha), _g10(row.var), _g10(row.es),
                        _g10(row.realized), row.window, row.flag, _g10(row.mu)])


def read_forecasts(path) -> ForecastTable:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:8]) != FORECAST_HEADER[:8]:
            raise InputError(f"{path}:1: unexpected forecast header")
        has_mu = len(header) > 8 and header[8] == "mu"
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append(ForecastRow(rec[0], rec[1], float(rec[2]), float(rec[3]), float(rec[4]),
                                        float(rec[5]), int(rec[6]), rec[7],
                                        float(rec[8]) if has_mu else 0.0))
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed number") from None
    return ForecastTable(rows)


# --- evaluation of a run -----------------------------------------------------

@dataclass
class EvaluationResult:
    panel: LossPanel
    dates: tuple
    mcs: McsResult
    mean_scores: dict
    flagged: dict


def _row_loss(row: ForecastRow, score: str) -> float:
    if score == "qs":
        return quantile_score(row.realized, row.var, row.alpha)
    return al_log_score(row.realized, row.mu, row.var, row.es, row.alpha)


def evaluate_run(table: ForecastTable, score: str, alpha: float, confidence: float = 0.90,
                 bootstrap: BootstrapConfig = BootstrapConfig()) -> EvaluationResult:
    """Loss panel on the dates every model covers, then the MCS."""
    if score not in ("qs", "als"):
        raise InputError(f"score must be 'qs' or 'als', got {score!r}")
    rows = [r for r in table.rows if math.isclose(r.alpha, alpha, rel_tol=1e-9)]
    models = list(dict.fromkeys(r.model for r in rows))
    if len(models) < 2:
        raise InputError(f"need at least two models at alpha={alpha}, found {len(models)}")
    by_model = {m: {} for m in models}
    for r in rows:
        if r.date in by_model[r.model]:
            raise InputError(f"duplicate forecast for {r.model} on {r.date}")
        by_model[r.model][r.date] = r
    common = set.intersection(*(set(d) for d in by_model.values()))
    if not common:
        raise InputError("models share no forecast dates")
    dates = tuple(sorted(common))
    try:
        losses = np.array([[_row_loss(by_model[m][d], score) for m in models] for d in dates])
    except DomainError as exc:
        raise InputError(f"cannot score forecasts: {exc}") from exc
    panel = LossPanel(losses, tuple(models), score)
    res = mcs(panel, confidence, bootstrap)
    flagged = {m: sum(1 for d in dates if by_model[m][d].flag) for m in models}
    return EvaluationResult(panel, dates, res, panel.mean_losses, flagged)


def write_losses(result: EvaluationResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "model", "loss"))
        for i, d in enumerate(result.dates):
            for j, m in enumerate(result.panel.model_ids):
                w.writerow((d, m, repr(float(result.panel.losses[i, j]))))


def write_mcs(result: EvaluationResult, path) -> None:
    res = result.mcs
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "rank", "pvalue", "survives"))
        for m in result.panel.model_ids:
            w.writerow((m, res.report_rank(m), _g10(res.pvalues[m]), int(res.survives(m))))


# --- simulation study --------------------------------------------------------

@dataclass(frozen=True)
class DgpConfig:
    label: str
    omega: float = 0.05
    beta: float = 0.85
    gamma: float = 0.10
    delta: float = 1.5
    theta: float = 0.0
    v: float = 20.0
    lam: float = 0.0
    T: int = 1250

    def params(self) -> AparchParams:
        return AparchParams(self.omega, self.beta, self.gamma, self.delta, self.theta,
                            SkewedTParams(self.v, self.lam))


def read_grid(path) -> list:
    """CSV with a ``label`` column and any of the :class:`DgpConfig` fields."""
    names = {f.name: f.type for f in fields(DgpConfig)}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    out = []
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "label" not in cols:
            raise InputError(f"{path}:1: grid needs a 'label' column")
        bad = [c for c in cols if c not in names]
        if bad:
            raise InputError(f"{path}:1: unknown grid columns {bad}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                kw = {k: (rec[k] if k == "label" else int(rec[k]) if k == "T" else float(rec[k]))
                      for k in cols}
                cfg = DgpConfig(**kw)
                cfg.params()
            except (ValueError, TypeError, DomainError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            out.append(cfg)
    if not out:
        raise InputError(f"{path}: grid is empty")
    return out


def _replication_seed(root: int, cfg_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([root, cfg_index, rep]).generate_state(1, np.uint64)[0])


def _one_replication(cfg: DgpConfig, models: tuple, alphas: tuple, seed: int):
    """Simulate, fit each model and return ``{(model, alpha): (var, es, true_var, true_es)}``."""
    prm = cfg.params()
    try:
        path = simulate_aparch(prm, cfg.T, seed=seed)
    except SimulationError as exc:
        return {}, {m: f"simulation: {exc}" for m in models}
    truth = {a: true_var_es(path.sigma_next, a, prm.innovation) for a in alphas}
    out, errors = {}, {}
    for m in models:
        model = get_model(m)
        try:
            fc = model.forecast(model.fit(path.returns, alphas, None), alphas)
        except (EstimationError, DomainError, FloatingPointError) as exc:
            errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        for f in fc:
            out[(m, f.alpha)] = (f.var, f.es) + truth[f.alpha]
    return out, errors


@dataclass(frozen=True)
class StudyRow:
    label: str
    model: str
    alpha: float
    var_mae: float
    var_rmse: float
    es_mae: float
    es_rmse: float
    replications: int
    failures: int


def run_simulation_study(grid, models, replications: int, seed: int = 0,
                         alphas=(0.01, 0.025, 0.05), *, workers: int | None = None):
    """MAE and RMSE of one-step VaR and ES forecasts against the true values.

    Returns ``(rows, notes)``.  Replications that fail for a model are
    excluded from its averages and counted in ``failures``.
    """
    if not grid:
        raise InputError("simulation grid is empty")
    models, alphas = tuple(models), tuple(alphas)
    for m in models:
        get_model(m)
    if replications < 0:
        raise InputError("replications must be non-negative")
    if replications == 0:
        return [], ["no replications requested; table is empty"]
    tasks = [(cfg, models, alphas, _replication_seed(seed, i, k))
             for i, cfg in enumerate(grid) for k in range(replications)]
    n = worker_count(len(tasks)) if workers is None else workers
    if n <= 1:
        results = [_one_replication(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_one_replication, *zip(*tasks), chunksize=max(1, len(tasks) // (4 * n))))

    rows, notes = [], []
    for i, cfg in enumerate(grid):
        chunk = results[i * replications:(i + 1) * replications]
        for m in models:
            fails = sum(1 for _, err in chunk if m in err)
            if fails:
                notes.append(f"{cfg.label}/{m}: {fails} of {replications} replications failed")
            for a in alphas:
                vals = np.array([res[(m, a)] for res, _ in chunk if (m, a) in res]).reshape(-1, 4)
                if vals.shape[0] == 0:
                    rows.append(StudyRow(cfg.label, m, a, *([math.nan] * 4), 0, fails))
                    continue
                vm, vr = mae_rmse(vals[:, 0], vals[:, 2])
                em, er = mae_rmse(vals[:, 1], vals[:, 3])
                rows.append(StudyRow(cfg.label, m, a, vm, vr, em, er, vals.shape[0], fails))
    return rows, notes


def write_study(rows, notes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "model", "alpha", "var_mae", "var_rmse", "es_mae", "es_rmse",
                    "replications", "failures"))
        for r in rows:
            w.writerow((r.label, r.model, _g10(r.alpha), _g10(r.var_mae), _g10(r.var_rmse),
                        _g10(r.es_mae), _g10(r.es_rmse), r.replications, r.failures))
        for note in notes:
            fh.write(f"# {note}\n")

