"""Command-line interface.

Subcommands: synth, decompose, train, evaluate, predict, sweep, gradcheck,
plot. Exit codes: 0 success, 1 usage error, 2 data/config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .config import ConfigError, ModelConfig
from .data import (DataError, generate_synthetic, load_factors_csv,
                   load_flow_csv, minmax_normalize, write_factors_csv,
                   write_flow_csv)
from .decomposition import decompose_series_set, save_decomposition_cache
from .losses import EvaluationReport
from .model import build_model
from .pipeline import evaluation_span
from .plots import (plot_node_forecasts, plot_report_bars, plot_sweep,
                    report_to_csv)
from .training import (Checkpoint, NumericalError, check_schema,
                       evaluate_split, forecast_frame, grad_check,
                       sweep_windows, train)

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _load_config(path) -> ModelConfig:
    return ModelConfig.load(path) if path else ModelConfig()


def _load_inputs(data_path, factors_path):
    ds = load_flow_csv(data_path)
    records = load_factors_csv(factors_path) if factors_path else None
    return ds, records


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, records = generate_synthetic(args.nodes, args.days, args.seed,
                                     coupling=args.coupling)
    write_flow_csv(out / "flow.csv", ds)
    write_factors_csv(out / "factors.csv", ds.timestamps, records)
    print(f"wrote {out / 'flow.csv'} ({ds.num_steps} rows x {ds.num_nodes} nodes)")
    print(f"wrote {out / 'factors.csv'}")
    return 0


def cmd_decompose(args) -> int:
    cfg = _load_config(args.config)
    ds = load_flow_csv(args.flow)
    if args.checkpoint:
        ckpt = Checkpoint.load(args.checkpoint)
        check_schema(ckpt, ds)
        cfg = ckpt.config
        normalized, _ = minmax_normalize(ds.values, ckpt.stats())
    else:
        normalized, _ = minmax_normalize(ds.values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = decompose_series_set(normalized, cfg.ceemdan)
    cache_path = out / "decomposition_full.bin"
    save_decomposition_cache(cache_path, results, cfg.ceemdan)
    for name, res in zip(ds.node_names, results):
        print(f"{name}: {len(res.imfs)} modes, reconstruction error "
              f"{res.reconstruction_error():.3e}")
    print(f"wrote {cache_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ds, records = _load_inputs(args.data, args.factors)
    ckpt, pipeline = train(cfg, ds, records, model_kind=args.kind,
                           cache_dir=args.cache_dir, verbose=args.verbose)
    ckpt.save(args.out)
    best = ckpt.history[ckpt.best_epoch]
    print(f"trained {args.kind} model for {len(ckpt.history)} epochs; "
          f"best epoch {ckpt.best_epoch} (val loss {best['val_loss']:.6g})")
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds, records = _load_inputs(args.data, args.factors)
    check_schema(ckpt, ds)
    cfg = ckpt.config
    split = evaluation_span(ds, records, cfg, ckpt.stats(),
                            ckpt.external_stats(), cache_path=args.cache)
    model = ckpt.build_model()
    report, pred, windows = evaluate_split(model, split, cfg,
                                           spread=ckpt.stats().spread)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json", out / "report.txt")
    report_to_csv(report, out / "report.csv")
    groups = plot_report_bars(report, out / "report_bars.png")
    frame = forecast_frame(pred, split, windows, ckpt)
    frame.to_csv(out / "forecast.csv", index=False)
    first = frame[frame["horizon"] == 1]
    span_idx = windows.target_steps[:, 0] + split.context
    truth = ds.values[span_idx]
    plot_node_forecasts(truth, first[ckpt.node_names].to_numpy(),
                        ds.timestamps[span_idx], ckpt.node_names, out)
    print(report.to_flat_text(), end="")
    print(f"wrote report + {groups}-group bar chart + per-node charts to {out}")
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds, records = _load_inputs(args.data, args.factors)
    check_schema(ckpt, ds)
    cfg = ckpt.config
    split = evaluation_span(ds, records, cfg, ckpt.stats(),
                            ckpt.external_stats(), cache_path=args.cache)
    model = ckpt.build_model()
    _, pred, windows = evaluate_split(model, split, cfg)
    frame = forecast_frame(pred, split, windows, ckpt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    print(f"wrote {len(frame)} forecast rows to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    ds, records = _load_inputs(args.data, args.factors)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows, best = sweep_windows(cfg, ds, records, sizes,
                               cache_dir=args.cache_dir, verbose=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows)
    frame.to_csv(out / "sweep.csv", index=False)
    plot_sweep(rows, out / "sweep.png")
    print(frame.to_string(index=False))
    print(f"best history size by test MSE: {best}")
    print(f"wrote {out / 'sweep.csv'} and {out / 'sweep.png'}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    rng = np.random.default_rng(cfg.seed)
    n = args.nodes
    model = build_model(cfg, n)
    batch = _random_batch(cfg, n, args.batch, rng)
    err, name = grad_check(model, batch, cfg.loss.build(), step=args.step)
    print(f"max relative gradient error {err:.3e} at parameter {name!r} "
          f"(step {args.step:g})")
    if err > args.tolerance:
        print(f"FAIL: exceeds tolerance {args.tolerance:g}")
        return NUMERIC_EXIT
    print(f"PASS: within tolerance {args.tolerance:g}")
    return 0


def _random_batch(cfg: ModelConfig, n_nodes: int, batch: int, rng):
    p, q = cfg.history, cfg.horizon
    c_d = cfg.decomposition_channels
    x = torch.from_numpy(rng.uniform(0.05, 0.95, (batch, p, n_nodes, 1)))
    d = torch.from_numpy(rng.normal(0.0, 0.3, (batch, p, n_nodes, c_d)))
    ext = torch.from_numpy(rng.uniform(0.0, 1.0, (batch, p, 7)))
    y = torch.from_numpy(rng.uniform(0.05, 0.95, (batch, q, n_nodes, 1)))
    return x, d, ext, y


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.report:
        report = EvaluationReport.load(args.report)
        groups = plot_report_bars(report, out / "report_bars.png")
        wrote.append(f"report_bars.png ({groups} groups)")
    if args.forecast:
        if not args.truth:
            raise DataError("--forecast requires --truth for the line charts")
        frame = pd.read_csv(args.forecast)
        ds = load_flow_csv(args.truth)
        first = frame[frame["horizon"] == 1]
        stamps = pd.DatetimeIndex(pd.to_datetime(first["timestamp"]))
        pos = ds.timestamps.get_indexer(stamps)
        if (pos < 0).any():
            raise DataError("forecast timestamps missing from truth file")
        node_names = [c for c in frame.columns
                      if c not in ("timestamp", "horizon")]
        paths = plot_node_forecasts(ds.values[pos][:, [ds.node_names.index(n)
                                                       for n in node_names]],
                                    first[node_names].to_numpy(),
                                    stamps, node_names, out)
        wrote.extend(p.name for p in paths)
    if not wrote:
        raise DataError("nothing to plot: pass --report and/or --forecast")
    print(f"wrote {', '.join(wrote)} to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="flowcast",
                     description="Multi-mode passenger flow forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--coupling", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="decompose flows and cache the modes")
    p.add_argument("flow")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--checkpoint",
                   help="reuse a checkpoint's normalization and settings")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--factors")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["full", "gru", "lstm"], default="full")
    p.add_argument("--cache-dir")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factors")
    p.add_argument("--out", default="reports")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write denormalized forecasts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factors")
    p.add_argument("--out", default="forecast.csv")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="train over several history sizes")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--factors")
    p.add_argument("--sizes", default="8,16,24")
    p.add_argument("--out", default="sweep")
    p.add_argument("--cache-dir")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle")
    p.add_argument("--config")
    p.add_argument("--nodes", type=int, default=3)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render figures from saved outputs")
    p.add_argument("--report")
    p.add_argument("--forecast")
    p.add_argument("--truth")
    p.add_argument("--out", default="figures")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
