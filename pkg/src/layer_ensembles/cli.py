"""Command-line entry point: generate | train | eval | qc | pd | sweep-skip."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Iterable, Sequence

from . import config as config_mod
from .data import Dataset, generate, load_dataset, save_dataset
from .experiments import (
    aula_uncertainty,
    calibration_sweep,
    correlation_table,
    evaluate_model,
    infer,
    make_corruption,
    pd_shift,
    preprocess,
    qc_curve,
    summary_table,
)
from .model import build
from .nn import checkpoint
from .training import train

log = logging.getLogger("layer_ensembles")

CHECKPOINT_NAME = "checkpoint.leckpt"


class CliError(RuntimeError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, rows: Sequence[dict], fields: Iterable[str] | None = None) -> None:
    fields = list(fields) if fields is not None else (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(f, "")) for f in fields])


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_summary(path: Path, command: str, cfg_text: str, cfg: config_mod.RunConfig,
                  results: dict, started: float) -> None:
    doc = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg_text,
        "results": _jsonable(results),
        "elapsed_seconds": round(time.perf_counter() - started, 3),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclasses.dataclass
class Context:
    cfg: config_mod.RunConfig
    cfg_text: str
    out: Path
    checkpoint: Path | None
    started: float


def _dataset(ctx: Context) -> Dataset:
    spec = ctx.cfg.dataset_spec()
    path = Path(ctx.cfg.dataset.path) if ctx.cfg.dataset.path else ctx.out / "dataset"
    if (path / "manifest.csv").exists():
        return load_dataset(path, spec)
    return generate(spec)


def _load_net(ctx: Context):
    net = build(ctx.cfg.model_config())
    path = ctx.checkpoint or ctx.out / CHECKPOINT_NAME
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    try:
        state = checkpoint.load(path)
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CliError(f"incompatible checkpoint {path}: {exc}") from exc
    net.eval()
    return net


def cmd_generate(ctx: Context) -> None:
    ds = generate(ctx.cfg.dataset_spec())
    target = ctx.out / "dataset"
    save_dataset(ds, target, previews=True)
    counts = {k: len(v) for k, v in ds.splits.items()}
    write_summary(ctx.out / "generate_summary.json", "generate", ctx.cfg_text, ctx.cfg,
                  {"counts": counts}, ctx.started)


def cmd_train(ctx: Context) -> None:
    ds = _dataset(ctx)
    net = build(ctx.cfg.model_config())
    res = train(net, ds["train"], ds["val"], ctx.cfg.train_config(), clock=time.perf_counter)
    checkpoint.save(ctx.out / CHECKPOINT_NAME, net.state_dict())
    write_csv(ctx.out / "train_log.csv", [dataclasses.asdict(e) for e in res.history],
              ["epoch", "train_loss", "val_loss", "lr"])
    write_summary(ctx.out / "train_summary.json", "train", ctx.cfg_text, ctx.cfg,
                  {"best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss,
                   "epochs_run": len(res.history), "num_heads": net.num_heads}, ctx.started)


def cmd_eval(ctx: Context) -> None:
    ds = _dataset(ctx)
    net = _load_net(ctx)
    e = ctx.cfg.experiment
    results = evaluate_model(net, ds["test"], e.skip, e.tau, ctx.cfg.threads)
    rows = [r.row() for r in results]
    write_csv(ctx.out / "eval_images.csv", rows)
    summary = summary_table(results)
    write_csv(ctx.out / "eval_summary.csv", [summary])
    write_summary(ctx.out / "eval_summary.json", "eval", ctx.cfg_text, ctx.cfg, summary, ctx.started)


def cmd_qc(ctx: Context) -> None:
    ds = _dataset(ctx)
    net = _load_net(ctx)
    e = ctx.cfg.experiment
    results = evaluate_model(net, ds["test"], e.skip, e.tau, ctx.cfg.threads)
    ids = [r.id for r in results]
    dscs = [r.dsc for r in results]
    curves = {
        "aula": qc_curve(aula_uncertainty([r.aula for r in results]), dscs, e.poor_threshold, ids=ids),
        "variance_sum": qc_curve([r.variance_sum for r in results], dscs, e.poor_threshold, ids=ids),
        "entropy_sum": qc_curve([r.entropy_sum for r in results], dscs, e.poor_threshold, ids=ids),
        "mi_sum": qc_curve([r.mi_sum for r in results], dscs, e.poor_threshold, ids=ids),
    }
    ref = curves["aula"]
    points = []
    for i, f in enumerate(ref.fractions):
        row = {"fraction": float(f), "random": float(ref.random[i]), "ideal": float(ref.ideal[i])}
        row.update({name: float(c.remaining[i]) for name, c in curves.items()})
        points.append(row)
    write_csv(ctx.out / "qc_curves.csv", points)
    table = correlation_table(results)
    write_csv(ctx.out / "correlation.csv", table.rows(), ["uncertainty", "segmentation", "rho", "n"])
    write_csv(ctx.out / "qc_images.csv", [r.row() for r in results])
    summary = {
        "auc": {name: c.auc for name, c in curves.items()},
        "random_auc": ref.random_auc,
        "ideal_auc": ref.ideal_auc,
        "num_poor": ref.num_poor,
        "poor_threshold": e.poor_threshold,
        "correlation": {f"{u}~{s}": v for (u, s), v in table.rho.items()},
    }
    write_summary(ctx.out / "qc_summary.json", "qc", ctx.cfg_text, ctx.cfg, summary, ctx.started)


def cmd_pd(ctx: Context) -> None:
    ds = _dataset(ctx)
    net = _load_net(ctx)
    e = ctx.cfg.experiment
    corruption = make_corruption(e.corruption, e.noise_mean, e.noise_std, e.kernel_size)
    hists, per_fraction = pd_shift(net, ds["test"], corruption, e.fractions, e.skip, e.tau,
                                   ctx.cfg.seed, ctx.cfg.threads)
    rows = [{"fraction": h.fraction, "prediction_depth": d, "count": c}
            for h in hists for d, c in sorted(h.counts.items())]
    write_csv(ctx.out / "pd_histograms.csv", rows, ["fraction", "prediction_depth", "count"])
    img_rows = []
    for h, results in zip(hists, per_fraction):
        for r in results:
            img_rows.append({"fraction": h.fraction, "id": r.id, "corrupted": int(r.corrupted),
                             "prediction_depth": r.prediction_depth, "aula": r.aula, "dsc": r.dsc})
    write_csv(ctx.out / "pd_images.csv", img_rows)
    summary = {"mean_pd": {str(h.fraction): h.mean for h in hists}, "corruption": e.corruption}
    write_summary(ctx.out / "pd_summary.json", "pd", ctx.cfg_text, ctx.cfg, summary, ctx.started)


def cmd_sweep_skip(ctx: Context) -> None:
    ds = _dataset(ctx)
    net = _load_net(ctx)
    test = ds["test"]
    outputs = infer(net, preprocess(test), ctx.cfg.threads)
    rows = calibration_sweep(outputs, test)
    write_csv(ctx.out / "sweep_skip.csv", [r.row() for r in rows])
    write_summary(ctx.out / "sweep_skip_summary.json", "sweep-skip", ctx.cfg_text, ctx.cfg,
                  {"rows": [r.row() for r in rows]}, ctx.started)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "qc": cmd_qc,
    "pd": cmd_pd,
    "sweep-skip": cmd_sweep_skip,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layer-ensembles", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="run config file")
    parser.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.leckpt)")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="per-image worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        print(f"error: config file not found: {cfg_path}", file=sys.stderr)
        return 2
    cfg_text = cfg_path.read_text()
    try:
        cfg = config_mod.loads(cfg_text)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.out:
            cfg.out_dir = args.out
        problems = config_mod.validate(cfg)
        if problems:
            raise config_mod.ConfigValidationError(problems)
    except config_mod.ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ckpt = Path(args.checkpoint) if args.checkpoint else None
    if ckpt is not None and not ckpt.is_file():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, cfg_text, out, ckpt, started)
    try:
        COMMANDS[args.command](ctx)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
