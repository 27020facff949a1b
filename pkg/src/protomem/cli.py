"""Command line front door: ``gen-data``, ``train``, ``diagnose`` and ``bench``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from .checkpoint import save_checkpoint
from .core import ConfigError, PMConfig, ProtomemError
from .data import SyntheticDataset, generate_dataset
from .diagnostics import (
    BenchRow,
    allocated_reals,
    bench_step_costs,
    run_obsolescence,
    write_rows,
)
from .encoder import LinearEncoder
from .train import Trainer, TrainConfig, write_log

log = logging.getLogger("protomem")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DATASET_KEYS = {"num_classes", "per_class", "dim_in", "sigma", "seed", "held_out_per_class"}
TOP_KEYS = {"dataset", "pm", "train", "diagnose"}


def _load_json(path: str) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _dataset_from(section: dict[str, Any]) -> SyntheticDataset:
    if "path" in section:
        if set(section) != {"path"}:
            raise ConfigError("dataset 'path' cannot be combined with generation keys")
        return SyntheticDataset.from_dir(section["path"])
    unknown = sorted(set(section) - DATASET_KEYS)
    if unknown:
        raise ConfigError(f"unknown dataset keys: {', '.join(unknown)}")
    missing = sorted({"num_classes", "per_class", "dim_in", "sigma"} - set(section))
    if missing:
        raise ConfigError(f"missing dataset keys: {', '.join(missing)}")
    try:
        return generate_dataset(
            section["num_classes"],
            section["per_class"],
            section["dim_in"],
            section["sigma"],
            section.get("seed", 0),
            section.get("held_out_per_class", 0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset config: {exc}") from None


def _experiment(path: str):
    data = _load_json(path)
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    if "dataset" not in data:
        raise ConfigError("config needs a 'dataset' section")
    try:
        pm = PMConfig.from_dict(data.get("pm", {}))
        train_cfg = TrainConfig.from_dict(data.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    diag = data.get("diagnose", {})
    _check_keys_plain("diagnose", diag, {"interval", "n_longest"})
    return data["dataset"], pm, train_cfg, diag


def _check_keys_plain(section: str, data: dict, allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")


def cmd_gen_data(args) -> int:
    data = _load_json(args.config)
    section = data.get("dataset", data)
    if "path" in section:
        raise ConfigError("gen-data needs generation parameters, not a path")
    dataset = _dataset_from(section)
    dataset.to_dir(args.out)
    log.info("wrote %d classes, %d examples to %s", dataset.num_classes, len(dataset), args.out)
    return 0


def _apply_overrides(parser, args, pm: PMConfig, cfg: TrainConfig):
    if args.system is not None:
        cfg = replace(cfg, system=args.system)
    if args.seed is not None:
        pm = replace(pm, seed=args.seed)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    if args.loss is not None:
        pm = replace(pm, loss=replace(pm.loss, name=args.loss))
    if cfg.system == "dsoftmaxk":
        if args.loss == "cosface":
            parser.error("--system dsoftmaxk is defined with the dsoftmax loss")
        pm = replace(pm, loss=replace(pm.loss, name="dsoftmax"))
    if getattr(args, "pmkd", None) is not None and cfg.system != "pm":
        parser.error("--pmkd only applies to --system pm")
    if getattr(args, "mdm", False):
        cfg = replace(cfg, mdm=True)
        if not any(p["strategy"] == "classes_then_images" for p in cfg.plan or []):
            parser.error("--mdm needs a classes_then_images part in the sampling plan")
    if getattr(args, "hem", None) is not None:
        if not 0.0 <= args.hem <= 1.0:
            parser.error("--hem must lie in [0, 1]")
        pm = replace(pm, h=args.hem)
    return pm, cfg


def cmd_train(parser, args) -> int:
    dataset_cfg, pm, cfg, _ = _experiment(args.config)
    pm, cfg = _apply_overrides(parser, args, pm, cfg)
    dataset = _dataset_from(dataset_cfg)
    teacher = LinearEncoder.load(args.pmkd) if args.pmkd else None
    trainer = Trainer(dataset, cfg, pm, teacher=teacher)
    trainer.run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_log(out / "metrics.csv", trainer.log)
    parts = {"encoder": trainer.encoder, "hardness": trainer.hardness, "doppelgangers": trainer.doppelgangers}
    if cfg.system == "pm":
        parts["store"] = trainer.system.store
    else:
        parts["weights"] = LinearEncoder(trainer.system.matrix.weights)
    save_checkpoint(out / "checkpoint.bin", **parts)
    trainer.encoder.save(out / "encoder.bin")
    log.info("trained %d steps (%s), outputs in %s", cfg.steps, cfg.system, out)
    return 0


def cmd_diagnose(parser, args) -> int:
    dataset_cfg, pm, cfg, diag = _experiment(args.config)
    pm, cfg = _apply_overrides(parser, args, pm, cfg)
    dataset = _dataset_from(dataset_cfg)
    interval = diag.get("interval", 50)
    systems = ["pm", "pprn"] if args.ab else [cfg.system]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs_rows, mem_rows = [], []
    for system in systems:
        trainer, curve = run_obsolescence(dataset, pm, replace(cfg, system=system), interval, diag.get("n_longest"))
        obs_rows += [[step, system, "" if v is None else repr(v)] for step, v in curve]
        report = trainer.system.memory_report()
        alloc = allocated_reals(trainer.system)
        mem_rows.append(
            [
                system,
                dataset.num_classes,
                trainer.system.occupancy if system != "pm" else pm.M,
                pm.D,
                report["device_resident_reals"],
                report["persistent_reals"],
                alloc["device_resident_reals"],
                alloc["persistent_reals"],
            ]
        )
    write_rows(out / "obsolescence.csv", ["step", "system", "metric"], obs_rows)
    write_rows(
        out / "memory.csv",
        ["system", "num_classes", "sampled", "dim", "device_resident_reals", "persistent_reals",
         "allocated_device", "allocated_persistent"],
        mem_rows,
    )
    return 0


def cmd_bench(args) -> int:
    data = _load_json(args.config)
    _check_keys_plain("bench", data, {"runs", "dim", "batch_size", "k", "steps", "warmup", "seed"})
    runs = data.get("runs")
    if not runs:
        raise ConfigError("bench config needs a non-empty 'runs' list")
    for run in runs:
        if set(run) != {"system", "num_classes", "sampled"}:
            raise ConfigError(f"bad bench run {run!r}")
        if run["system"] not in ("pm", "pprn", "dsoftmaxk", "full"):
            raise ConfigError(f"unknown system {run['system']!r}")
    kwargs = {k: data[k] for k in ("dim", "batch_size", "k", "steps", "warmup", "seed") if k in data}
    rows = bench_step_costs(runs, **kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "bench.csv", BenchRow.FIELDS, [r.row() for r in rows])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protomem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("config")
    gen.add_argument("out")

    def common(p):
        p.add_argument("config")
        p.add_argument("--out", default="out")
        p.add_argument("--system", choices=["pm", "pprn", "dsoftmaxk", "full"])
        p.add_argument("--loss", choices=["cosface", "dsoftmax"])
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)

    tr = sub.add_parser("train", help="train and write metrics.csv and a checkpoint")
    common(tr)
    tr.add_argument("--pmkd", metavar="TEACHER", help="teacher encoder weights for distillation")
    tr.add_argument("--mdm", action="store_true", help="multi-doppelganger class mining")
    tr.add_argument("--hem", type=float, metavar="H", help="hardness ratio for example mining")

    dg = sub.add_parser("diagnose", help="obsolescence curves and memory accounting")
    common(dg)
    dg.add_argument("--ab", action="store_true", help="run pm and pprn on the same data and seed")

    bn = sub.add_parser("bench", help="per-step cost benchmark")
    bn.add_argument("config")
    bn.add_argument("--out", default="out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(parser, args)
        if args.command == "diagnose":
            return cmd_diagnose(parser, args)
        return cmd_bench(args)
    except ConfigError as exc:
        print(f"protomem: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProtomemError, ArithmeticError) as exc:
        print(f"protomem: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

