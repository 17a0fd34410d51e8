"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 runtime/data error, 2 usage error. Every
subcommand is deterministic for fixed inputs, flags, and seeds.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import conformal as cp
from . import data_io, evalbench, training, wavelet
from .errors import DataError, ParameterError, WavetrafficError
from .graph import build_graph_bundle, chebyshev_basis, scaled_laplacian
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Graph

__all__ = ["main", "build_parser"]


def _write_matrix(path, mat):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(mat):
            writer.writerow([data_io.fmt(v) for v in row])


def _read_config_file(path) -> dict:
    values = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such config file: {path}")
    for line in p.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed config line {line!r}")
        values[key.strip()] = raw.strip()
    return values


def _parse_split(text: str) -> training.SplitSpec:
    parts = [float(p) for p in text.split(":")]
    if len(parts) != 3:
        raise ParameterError(f"split must be three numbers a:b:c, got {text!r}")
    total = sum(parts)
    return training.SplitSpec(*(p / total for p in parts))


_MODEL_KEYS = {
    "blocks": int, "width": int, "heads": int, "level": int, "cheb_order": int,
    "channels": int, "window": int, "horizon": int, "filter_name": str,
}
_TRAIN_KEYS = {
    "epochs": int, "lr": float, "batch_size": int, "huber_delta": float, "seed": int,
}


def _resolve(args, file_cfg: dict, keys: dict) -> dict:
    out = {}
    for key, cast in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = cast(file_cfg[key])
    return out


def _add_model_flags(sub):
    sub.add_argument("--blocks", type=int, default=None)
    sub.add_argument("--width", type=int, default=None)
    sub.add_argument("--heads", type=int, default=None)
    sub.add_argument("--level", type=int, default=None,
                     help="wavelet decomposition level (0 disables the transform)")
    sub.add_argument("--cheb-order", dest="cheb_order", type=int, default=None)
    sub.add_argument("--channels", type=int, default=None)
    sub.add_argument("--filter", dest="filter_name", default=None, choices=["haar", "d4"])


def _add_train_flags(sub):
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sub.add_argument("--huber-delta", dest="huber_delta", type=float, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--split", default="6:2:2", help="train:val:test ratio")
    sub.add_argument("--p-sp", dest="p_sp", type=float, default=0.01)
    sub.add_argument("--stad-window", dest="stad_window", type=int, default=None,
                     help="cap on training observations used for the distance graph")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavetraffic",
        description="Wavelet-based spatiotemporal traffic forecasting toolkit",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric worker threads (also env WAVETRAFFIC_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write per-band wavelet components as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--filter", default="haar", choices=["haar", "d4"])
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("build-graph", help="write STAD/STRG/STAG matrices as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--p-sp", dest="p_sp", type=float, default=0.01)
    p.add_argument("--stad-window", dest="stad_window", type=int, default=None)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train a forecaster and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("forecast", help="roll a checkpoint over sliding windows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--segment", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--split", default="6:2:2")

    p = sub.add_parser("sweep-level", help="train once per wavelet level, compare MAPE")
    p.add_argument("--data", required=True)
    p.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("conformal", help="interval forecasts from calibration + test forecasts")
    p.add_argument("--calibration", required=True, help="forecast CSV of the calibration split")
    p.add_argument("--test", required=True, help="forecast CSV of the test split")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=int, default=288, help="score window size")
    p.add_argument("--beta", type=float, default=0.1, help="miscoverage level")
    p.add_argument("--quantile-mode", dest="quantile_mode", default="order",
                   choices=["order", "literal"])

    p = sub.add_parser("evaluate", help="accuracy metrics from a forecast CSV")
    p.add_argument("--forecasts", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mcb", help="multiple-comparisons-with-the-best rank test")
    p.add_argument("--table", required=True,
                   help="CSV: first column model names, remaining columns datasets")
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--ties", default="max", choices=["max", "mid"])
    p.add_argument("--out", required=True)
    return parser


# -- subcommand bodies -----------------------------------------------------


def _cmd_decompose(args) -> int:
    x, desc = data_io.load_csv(args.input)
    comps = wavelet.mra_batch(x, args.filter, args.level)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"detail{j}" for j in range(1, args.level + 1)] + [f"smooth{args.level}"]
    for name, comp in zip(names, comps):
        data_io.save_csv(out / f"{name}.csv", comp,
                         header=[f"sensor_{i}" for i in range(desc.nodes)])
    print(f"wrote {len(comps)} component files to {out}")
    return 0


def _stad_input(x, stad_window):
    series = x[:, 0, :]
    if stad_window is not None:
        series = series[:, :stad_window]
    return series


def _cmd_build_graph(args) -> int:
    x, _ = data_io.load_csv(args.input)
    bundle = build_graph_bundle(_stad_input(x, args.stad_window), p_sp=args.p_sp)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "a_stad.csv", bundle.stad.adjacency)
    _write_matrix(out / "a_strg.csv", bundle.strg.mask)
    _write_matrix(out / "a_stag.csv", bundle.a_stag)
    print(f"wrote a_stad.csv, a_strg.csv, a_stag.csv to {out}")
    return 0


def _prepare_training(args):
    x, desc = data_io.load_csv(args.data)
    file_cfg = _read_config_file(args.config) if args.config else {}
    split_spec = _parse_split(args.split)
    train_seg, val_seg, test_seg = training.split(x, split_spec)
    stats = training.compute_stats(train_seg)
    bundle_input = _stad_input(train_seg, args.stad_window)
    model_kwargs = _resolve(args, file_cfg, _MODEL_KEYS)
    cfg = ModelConfig(nodes=desc.nodes, **model_kwargs)
    bundle = build_graph_bundle(bundle_input, p_sp=args.p_sp, cheb_order=cfg.cheb_order)
    train_cfg = training.TrainConfig(**_resolve(args, file_cfg, _TRAIN_KEYS))
    spec = training.WindowSpec(cfg.window, cfg.horizon)
    tr = training.make_windows(training.normalize(train_seg, stats), spec)
    va = training.make_windows(training.normalize(val_seg, stats), spec)
    te = training.make_windows(training.normalize(test_seg, stats), spec)
    return cfg, bundle, stats, train_cfg, (tr, va, te)


def _checkpoint_extras(stats, bundle):
    return {
        "norm_mean": stats.mean,
        "norm_std": stats.std,
        "a_stad": bundle.stad.adjacency,
        "strg_mask": bundle.strg.mask,
        "a_stag": bundle.a_stag,
    }


def _write_log(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_mae", "wall_seconds"])
        for row in log:
            writer.writerow([
                row["epoch"], data_io.fmt(row["train_loss"]), data_io.fmt(row["val_loss"]),
                data_io.fmt(row["val_mae"]), data_io.fmt(row["wall_seconds"]),
            ])


def _cmd_train(args) -> int:
    cfg, bundle, stats, train_cfg, (tr, va, _te) = _prepare_training(args)
    model = Model(cfg, bundle, seed=train_cfg.seed)
    result = training.fit(model, tr, va, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", cfg, result.best_state,
                    extras=_checkpoint_extras(stats, bundle))
    _write_log(out / "log.csv", result.log)
    print(f"trained {train_cfg.epochs} epochs; checkpoint and log written to {out}")
    return 0


def _model_from_checkpoint(path):
    cfg, state, extras = load_checkpoint(path)
    stats = training.NormalizationStats(mean=extras["norm_mean"], std=extras["norm_std"])
    from .graph import GraphBundle, StadMatrix, StrgMask  # locals to avoid cycle noise

    stad = StadMatrix(adjacency=extras["a_stad"], distances=1.0 - extras["a_stad"])
    mask = extras["strg_mask"]
    strg = StrgMask(mask=mask, n_keep=int(mask[0].sum()), sparsity=float("nan"))
    lap = scaled_laplacian(extras["a_stag"])
    cheb = chebyshev_basis(lap, cfg.cheb_order)
    bundle = GraphBundle(stad=stad, strg=strg, a_stag=extras["a_stag"],
                         laplacian=lap, cheb=cheb)
    model = Model(cfg, bundle, graph=Graph())
    model.graph.load_state(state)
    return model, stats


def _cmd_forecast(args) -> int:
    model, stats = _model_from_checkpoint(args.checkpoint)
    x, _ = data_io.load_csv(args.data)
    if args.segment != "all":
        segs = dict(zip(("train", "val", "test"), training.split(x, _parse_split(args.split))))
        x = segs[args.segment]
    cfg = model.cfg
    spec = training.WindowSpec(cfg.window, cfg.horizon)
    inputs, targets = training.make_windows(training.normalize(x, stats), spec)
    preds = np.concatenate(
        [model.predict(inputs[lo : lo + 64]) for lo in range(0, len(inputs), 64)]
    )
    denorm = lambda a: a * stats.std[None, :, None] + stats.mean[None, :, None]
    data_io.save_forecasts(args.out, denorm(targets), denorm(preds))
    print(f"wrote {len(inputs)} x {cfg.nodes} x {cfg.horizon} forecasts to {args.out}")
    return 0


def _cmd_sweep_level(args) -> int:
    rows = []
    for level in args.levels:
        args.level = level
        cfg, bundle, stats, train_cfg, (tr, va, te) = _prepare_training(args)
        model = Model(cfg, bundle, seed=train_cfg.seed)
        result = training.fit(model, tr, va, train_cfg)
        model.graph.load_state(result.best_state)
        te_x, te_y = te
        preds = np.concatenate(
            [model.predict(te_x[lo : lo + 64]) for lo in range(0, len(te_x), 64)]
        )
        denorm = lambda a: a * stats.std[None, :, None] + stats.mean[None, :, None]
        rows.append({
            "level": level,
            "mape": evalbench.mape(denorm(te_y), denorm(preds)),
            "mae": evalbench.mae(denorm(te_y), denorm(preds)),
            "rmse": evalbench.rmse(denorm(te_y), denorm(preds)),
        })
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "mape", "mae", "rmse"])
        for row in rows:
            writer.writerow([row["level"], data_io.fmt(row["mape"]),
                             data_io.fmt(row["mae"]), data_io.fmt(row["rmse"])])
    print(f"wrote {len(rows)}-row level sweep to {args.out}")
    return 0


def _cmd_conformal(args) -> int:
    y_cal, pred_cal, _ = data_io.load_forecasts(args.calibration)
    y_test, pred_test, _ = data_io.load_forecasts(args.test)
    if y_cal.shape[1:] != y_test.shape[1:]:
        raise DataError(
            f"calibration nodes/steps {y_cal.shape[1:]} != test {y_test.shape[1:]}"
        )
    _t, n_nodes, n_steps = y_test.shape
    lo = np.empty_like(y_test)
    hi = np.empty_like(y_test)
    for node in range(n_nodes):
        for step in range(n_steps):
            lo[:, node, step], hi[:, node, step], _cov = cp.calibrate_stream(
                y_cal[:, node, step], pred_cal[:, node, step],
                y_test[:, node, step], pred_test[:, node, step],
                window=args.alpha, beta=args.beta, mode=args.quantile_mode,
            )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "node", "step", "y", "pred", "lo", "hi", "covered"])
        for t in range(y_test.shape[0]):
            for node in range(n_nodes):
                for step in range(n_steps):
                    yy = y_test[t, node, step]
                    covered = int(lo[t, node, step] <= yy <= hi[t, node, step])
                    writer.writerow([
                        t, node, step + 1, data_io.fmt(yy),
                        data_io.fmt(pred_test[t, node, step]),
                        data_io.fmt(lo[t, node, step]), data_io.fmt(hi[t, node, step]),
                        covered,
                    ])
    for step in range(n_steps):
        cov = cp.empirical_coverage(lo[:, :, step], hi[:, :, step], y_test[:, :, step])
        print(f"step {step + 1}: empirical coverage {cov:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    y, pred, _ = data_io.load_forecasts(args.forecasts)
    step_mae = evalbench.stepwise_errors(y, pred, "mae")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "overall"] + [f"step{s+1}" for s in range(y.shape[-1])])
        for name in ("mae", "mape", "rmse"):
            fn = getattr(evalbench, name)
            steps = evalbench.stepwise_errors(y, pred, name)
            writer.writerow([name, data_io.fmt(fn(y, pred))] + [data_io.fmt(v) for v in steps])
    print(f"MAE {evalbench.mae(y, pred):.6g} over {y.size} points "
          f"(stepwise MAE {step_mae[0]:.6g}..{step_mae[-1]:.6g}); wrote {args.out}")
    return 0


def _cmd_mcb(args) -> int:
    with open(args.table, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        models, values = [], []
        for row in reader:
            models.append(row[0])
            values.append([float(v) for v in row[1:]])
    table = evalbench.ErrorTable(np.asarray(values), models, header[1:])
    result = evalbench.mcb(table, gamma=args.gamma, ties=args.ties)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "mean_rank", "interval_lo", "interval_hi",
                         "significantly_worse"])
        for i, name in enumerate(result.models):
            writer.writerow([
                name, data_io.fmt(result.mean_ranks[i]),
                data_io.fmt(result.intervals[i, 0]), data_io.fmt(result.intervals[i, 1]),
                int(result.significantly_worse[i]),
            ])
    best = result.models[result.best_index]
    print(f"best model {best!r} with mean rank {result.mean_ranks[result.best_index]:.4g}; "
          f"critical distance {result.critical_distance:.4g}")
    return 0


_COMMANDS = {
    "decompose": _cmd_decompose,
    "build-graph": _cmd_build_graph,
    "train": _cmd_train,
    "forecast": _cmd_forecast,
    "sweep-level": _cmd_sweep_level,
    "conformal": _cmd_conformal,
    "evaluate": _cmd_evaluate,
    "mcb": _cmd_mcb,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads or os.environ.get("WAVETRAFFIC_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    try:
        return _COMMANDS[args.command](args)
    except (WavetrafficError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
