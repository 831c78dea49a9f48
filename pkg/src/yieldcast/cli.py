"""``yieldcast`` command line: synth, train, evaluate, predict, report."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calendars import CropKind, load_calendar
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import (
    SynthConfig, assemble, ingest_yields, read_soil, read_weather, save_dataset, split_by_year,
    synthesize,
)
from .errors import CompatibilityError, ConfigError, YieldcastError
from .metrics import EvalResult, RunReport, render_table, scatter_export
from .nn import NetworkArch
from .training import (TrainConfig, gdd_from_extras, load_train_config, predict_kg_ha,
                       run_experiment)

log = logging.getLogger("yieldcast")

IO_EXIT = 8


def _setup_logging():
    level = os.environ.get("YIELDCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _existing(path, flag):
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{flag}: no such file {p}")
    return p


def _calendar(args):
    return load_calendar(_existing(args.calendar, "--calendar"), _existing(args.cycles, "--cycles"))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_synth(args) -> int:
    if args.municipalities < 1:
        raise ConfigError("--municipalities must be >= 1")
    cfg = SynthConfig(n_municipalities=args.municipalities, start_year=args.start_year,
                      end_year=args.end_year, crop=args.crop, noise_std=args.noise_std,
                      zero_fraction=args.zero_fraction)
    result = synthesize(cfg, seed=args.seed, out_dir=args.out, calendar=_calendar(args))
    for name, path in result.paths.items():
        print(f"{name}\t{path}\t{_sha256(path)}")
    return 0


def _load_inputs(args, crop, allow_missing_target=False):
    yields = _existing(args.yields, "--yields")
    weather = _existing(args.weather, "--weather")
    soil = _existing(args.soil, "--soil")
    records = ingest_yields(yields, require_yield=not allow_missing_target)
    other = {r.crop for r in records} - {crop}
    if other:
        raise CompatibilityError(f"yield file holds {sorted(c.value for c in other)}, "
                                 f"expected only {crop.value}")
    return records, read_weather(weather), read_soil(soil)


def cmd_train(args) -> int:
    for flag in ("yields", "weather", "soil"):
        _existing(getattr(args, flag), f"--{flag}")
    calendar = _calendar(args)
    cfg, extras = (load_train_config(_existing(args.config, "--config")) if args.config
                   else (TrainConfig(), {}))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.no_noise:
        cfg = replace(cfg, noise_sigma=0.0)
    anchor = extras.get("window_anchor", "planting-start")
    crop = CropKind.parse(args.crop)
    gdd = gdd_from_extras(extras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records, weather, soil = _load_inputs(args, crop)
    samples = assemble(records, weather, soil, calendar, gdd, anchor,
                       max_missing_fraction=args.max_missing)
    if not samples:
        raise ConfigError("no samples after ingestion")
    split = split_by_year(samples, args.test_year, args.validation_fraction, cfg.seed)
    save_dataset(split, out / "dataset")
    arch = NetworkArch(n=calendar.cycle_length(crop), noise_sigma=cfg.noise_sigma,
                       **{k: v for k, v in extras.items() if k.endswith("_sizes")})

    def writer(label):
        ckpt_dir, hist_dir = out / "checkpoints", out / "history"
        ckpt_dir.mkdir(exist_ok=True)
        hist_dir.mkdir(exist_ok=True)

        def on_run(k, seed, net, history, result):
            stem = f"{label}_run{k:02d}"
            save_checkpoint(ckpt_dir / f"{stem}.ckpt", Checkpoint(
                net, split.scaler, crop, seed, gdd, anchor,
                meta={"label": label, "run": k, "test_year": args.test_year}))
            (hist_dir / f"{stem}.csv").write_text(history.to_csv(), encoding="utf-8")
        return on_run

    variants = [("no_noise" if args.no_noise else "noise", cfg)]
    if args.ablation and not args.no_noise:
        variants.append(("no_noise", replace(cfg, noise_sigma=0.0)))
    for label, variant in variants:
        report = run_experiment(split, arch, variant, args.runs, on_run=writer(label), label=label)
        report.extra.update({"crop": crop.value, "test_year": args.test_year,
                             "samples": {k: len(split.part(k))
                                         for k in ("train", "validation", "test")},
                             "dropped_records": samples.dropped,
                             "zero_yield_removed": records.removed_zero})
        name = "report.json" if label == variants[0][0] else f"report_{label}.json"
        report.save(out / name)
        print(f"[{label}] {len(report.completed)}/{args.runs} runs")
        print(render_table({crop.value: report}, "mean"))
        print(render_table({crop.value: report}, "best"))
        if len(report.completed) < args.runs:
            return YieldcastError.exit_code
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint, "--checkpoint"))
    calendar = _calendar(args)
    crop = CropKind.parse(args.crop) if args.crop else ckpt.crop
    if crop != ckpt.crop:
        raise CompatibilityError(f"checkpoint is for {ckpt.crop.value}, data is {crop.value}")
    records, weather, soil = _load_inputs(args, ckpt.crop)
    if args.test_year is not None:
        records = [r for r in records if r.year == args.test_year]
    samples = assemble(records, weather, soil, calendar, ckpt.gdd, ckpt.window_anchor,
                       max_missing_fraction=args.max_missing)
    if not samples:
        raise ConfigError("no samples to evaluate")
    if samples[0].dynamic.shape[0] != ckpt.net.arch.n:
        raise CompatibilityError("window length of the data does not match the checkpoint")
    dyn = np.stack([s.dynamic for s in samples])
    stat = np.stack([s.static for s in samples])
    actual = np.array([s.target for s in samples])
    pred = predict_kg_ha(ckpt.net, ckpt.scaler, dyn, stat)
    result = EvalResult.compute(pred, actual)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    scatter_export(pred, actual, [s.key for s in samples], out / "scatter.csv")
    print(f"n={result.n} correlation={result.correlation:.4f} mape={result.mape:.3f} "
          f"rmse={result.rmse:.1f}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint, "--checkpoint"))
    calendar = _calendar(args)
    records, weather, soil = _load_inputs(args, ckpt.crop, allow_missing_target=True)
    samples = assemble(records, weather, soil, calendar, ckpt.gdd, ckpt.window_anchor,
                       max_missing_fraction=0.0, allow_missing_target=True, on_missing="raise")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["municipality_id", "year", "crop", "predicted_kg_ha"])
        if samples:
            pred = predict_kg_ha(ckpt.net, ckpt.scaler, np.stack([s.dynamic for s in samples]),
                                 np.stack([s.static for s in samples]))
            for s, p in zip(samples, pred):
                w.writerow([s.key[0], s.key[1], s.key[2], repr(float(p))])
    print(f"{len(samples)} predictions written to {out}")
    return 0


def cmd_report(args) -> int:
    reports = {}
    for path in args.reports:
        rep = RunReport.load(_existing(path, "report"))
        label = rep.extra.get("crop", Path(path).stem)
        if rep.label:
            label = f"{label} ({rep.label})"
        reports[label] = rep
    if args.kind in ("mean", "both"):
        print(render_table(reports, "mean"))
    if args.kind == "both":
        print()
    if args.kind in ("best", "both"):
        print(render_table(reports, "best"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="yieldcast", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def calendar_flags(sp):
        sp.add_argument("--calendar", help="calendar CSV (default: bundled)")
        sp.add_argument("--cycles", help="cycle-length CSV (default: bundled)")

    def data_flags(sp):
        sp.add_argument("--yields", required=True)
        sp.add_argument("--weather", required=True)
        sp.add_argument("--soil", required=True)
        sp.add_argument("--max-missing", type=float, default=0.05,
                        help="abort when more than this fraction of records lack data")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--crop", default="corn")
    s.add_argument("--municipalities", type=int, default=300)
    s.add_argument("--start-year", type=int, default=2011)
    s.add_argument("--end-year", type=int, default=2018)
    s.add_argument("--noise-std", type=float, default=0.02)
    s.add_argument("--zero-fraction", type=float, default=0.02)
    calendar_flags(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="ingest, assemble, split and train")
    t.add_argument("--crop", required=True)
    data_flags(t)
    calendar_flags(t)
    t.add_argument("--config", help="key = value training config")
    t.add_argument("--seed", type=int)
    t.add_argument("--runs", type=int, default=30)
    t.add_argument("--test-year", type=int, default=2018)
    t.add_argument("--validation-fraction", type=float, default=0.1)
    t.add_argument("--no-noise", action="store_true", help="train without the noise layer")
    t.add_argument("--ablation", action="store_true",
                   help="also train the no-noise variant from the same seeds")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint and export scatter data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--crop")
    data_flags(e)
    calendar_flags(e)
    e.add_argument("--test-year", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="predict yields from window weather")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--yields", "--locations", dest="yields", required=True,
                    help="yield-schema CSV; yield_kg_ha may be empty")
    pr.add_argument("--weather", required=True)
    pr.add_argument("--soil", required=True)
    calendar_flags(pr)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("report", help="print mean/std and best-run tables")
    r.add_argument("reports", nargs="+")
    r.add_argument("--kind", choices=("mean", "best", "both"), default="both")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except YieldcastError as exc:
        print(f"yieldcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"yieldcast: io error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
