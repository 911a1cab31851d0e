"""Command-line entry point: ``qbsd backtest | simulate | evaluate | models``."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from qbsdrisk.backtest import (
    MODEL_IDS,
    BacktestConfig,
    evaluate_run,
    load_config,
    load_prices,
    read_forecasts,
    read_grid,
    run_rolling,
    run_simulation_study,
    write_forecasts,
    write_losses,
    write_mcs,
    write_study,
)
from qbsdrisk.errors import DomainError, EstimationError, InputError, SimulationError
from qbsdrisk.evaluation import BootstrapConfig

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 1, 2


def bundled(name: str) -> Path:
    """Path of a file shipped in ``qbsdrisk/data``."""
    return Path(str(resources.files("qbsdrisk") / "data" / name))


def _float_list(s):
    try:
        return tuple(float(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _str_list(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _resolve(path_arg: str) -> Path:
    """``sample`` and ``acceptance`` name the bundled inputs."""
    aliases = {"sample": "sample_prices.csv", "acceptance": "acceptance.cfg"}
    return bundled(aliases[path_arg]) if path_arg in aliases else Path(path_arg)


def _cmd_backtest(args) -> int:
    config = load_config(_resolve(args.config)) if args.config else BacktestConfig()
    series = load_prices(_resolve(args.data), config.symbol or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = run_rolling(series, config)
    target = out / config.output
    write_forecasts(table, target)
    n_out = len(series) - config.window
    expected = n_out * len(config.models) * len(config.alphas)
    print(f"{len(table)} forecast rows written to {target} "
          f"(expected {expected}; {table.flagged} flagged, {sum(table.missing.values())} missing)")
    for m in config.models:
        print(f"  {m}: {table.fit_counts.get(m, 0)} fits, {table.missing.get(m, 0)} missing rows")
    if any(table.missing.get(m, 0) == expected // len(config.models) for m in config.models):
        print("error: a model produced no forecasts at all", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def _cmd_simulate(args) -> int:
    grid = read_grid(args.grid)
    rows, notes = run_simulation_study(grid, args.models, args.reps, args.seed, args.alphas)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_study(rows, notes, out)
    print(f"{len(rows)} table rows written to {out}")
    for note in notes:
        print(f"  note: {note}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    table = read_forecasts(args.forecasts)
    boot = BootstrapConfig(iterations=args.iterations, block_length=args.block_length, seed=args.seed)
    res = evaluate_run(table, args.score, args.alpha, args.confidence, boot)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_losses(res, out / "losses.csv")
    write_mcs(res, out / "mcs.csv")
    width = max(len(m) for m in res.panel.model_ids)
    print(f"{args.score.upper()} at alpha={args.alpha:g}, {len(res.dates)} dates, "
          f"{args.confidence:.0%} MCS")
    for m in res.panel.model_ids:
        mark = "*" if res.mcs.survives(m) else " "
        print(f" {mark} {m:<{width}}  mean={res.mean_scores[m]:.6f}  "
              f"p={res.mcs.pvalues[m]:.3f}  rank={res.mcs.report_rank(m)}  flagged={res.flagged[m]}")
    return EXIT_OK


def _cmd_models(args) -> int:
    print("\n".join(MODEL_IDS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbsd", description="One-step VaR/ES backtesting and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backtest", help="rolling-window forecasts for a price series")
    p.add_argument("--data", required=True, help="CSV with date,adj_close ('sample' for the bundled series)")
    p.add_argument("--config", help="key = value config file ('acceptance' for the bundled one)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_backtest)

    p = sub.add_parser("simulate", help="Monte-Carlo MAE/RMSE study on APARCH data")
    p.add_argument("--grid", required=True, help="CSV of DGP configurations")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--models", type=_str_list, default=("QbSD-gSAV", "GARCH-t"))
    p.add_argument("--alphas", type=_float_list, default=(0.01, 0.025, 0.05))
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="scores and model confidence set for a forecast file")
    p.add_argument("--forecasts", required=True)
    p.add_argument("--score", choices=("qs", "als"), default="qs")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--confidence", type=float, default=0.90)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--block-length", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("models", help="list registry model ids")
    p.set_defaults(func=_cmd_models)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, DomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, SimulationError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
