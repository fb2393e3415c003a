"""Command-line entry point: synth | enumerate | featurize | sample | train | report | pipeline."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gbm
from .data import Axis, classify_roster, ingest_events, ingest_money, ingest_roster
from .engine import DayConvention, build_matrix, read_features_csv, write_features_csv
from .experiment import SUITE_STRATA, ExperimentSpec, Task, balanced_sample, run_suite, task_label
from .grammar import canonical_name, category_of, enumerate_descriptors
from .synth import PopulationConfig, generate

log = logging.getLogger("mmadopt")

_DAY_NAMES = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class _StageFilter(logging.Filter):
    stage = "main"

    def filter(self, record):
        record.stage = self.stage
        return True


_stage_filter = _StageFilter()


def _set_stage(name: str) -> None:
    _stage_filter.stage = name


@dataclass
class RunConfig:
    cdr: str | None = None
    mmtr: str | None = None
    roster: str | None = None
    out: str = "out"
    seed: int = 0
    gbm: gbm.GBMParams = field(default_factory=gbm.GBMParams)
    folds: int = 5
    repeats: int = 10
    min_n: int = 20
    weekend_days: list[int] = field(default_factory=lambda: [5, 6])
    utc_offset_minutes: int = 0
    tasks: list[str] = field(default_factory=lambda: [t.value for t in Task])
    strata: list[str] = field(default_factory=lambda: [s for _, s in SUITE_STRATA])
    threads: int = 0
    synth: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown run config field(s): {sorted(unknown)}")
        raw = dict(raw)
        if isinstance(raw.get("gbm"), dict):
            raw["gbm"] = gbm.GBMParams(**raw["gbm"])
        return cls(**raw)

    def resolved(self) -> dict:
        """Everything that determines outputs.

        ``threads`` never changes results and ``out`` is the directory the
        record is written into, so both are left out.
        """
        d = asdict(self)
        d.pop("threads")
        d.pop("out")
        return d

    @property
    def days(self) -> DayConvention:
        return DayConvention(tuple(sorted(self.weekend_days)), self.utc_offset_minutes)

    @property
    def n_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------- parsing helpers


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise StageError("cli", message)


def _weekend(text: str) -> list[int]:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok in _DAY_NAMES:
            out.append(_DAY_NAMES[tok[:3]])
        elif tok.isdigit() and 0 <= int(tok) <= 6:
            out.append(int(tok))
        else:
            raise argparse.ArgumentTypeError(f"bad weekday {tok!r}; use mon..sun or 0..6")
    return sorted(set(out))


def _add_gbm_flags(p):
    p.add_argument("--n-trees", type=int, help="boosting rounds (default 100)")
    p.add_argument("--shrinkage", type=float, help="learning rate in (0, 1] (default 0.1)")
    p.add_argument("--max-depth", type=int, help="tree depth (default 3)")
    p.add_argument("--min-leaf", type=int, help="minimum rows per leaf (default 5)")


def _add_day_flags(p):
    p.add_argument("--weekend", type=_weekend, help="weekend days, e.g. sat,sun or 4,5 (default sat,sun)")
    p.add_argument("--utc-offset", type=int, help="minutes added to UTC before day bucketing (default 0)")


def _add_experiment_flags(p):
    p.add_argument("--features", help="features.csv from `featurize`")
    p.add_argument("--seed", type=int, help="seed for sampling, folds and permutations (default 0)")
    p.add_argument("--folds", type=int, help="cross-validation folds (default 5)")
    p.add_argument("--repeats", type=int, help="permutation repeats (default 10)")
    p.add_argument("--min-n", type=int, help="minimum rows per class in a stratum (default 20)")
    _add_gbm_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmadopt", description="Mobile-money adoption feature engine and experiments.")
    parser.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR (default INFO)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic roster, CDR and MMTR")
    p.add_argument("--config", help="PopulationConfig JSON; omitted fields take defaults")
    p.add_argument("--out", help="output directory for cdr.csv, mmtr.csv, roster.csv")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--n-subscribers", type=int, help="overrides the config population size")

    sub.add_parser("enumerate", help="print name,category for every feature descriptor")

    p = sub.add_parser("featurize", help="build features.csv from CDR/MMTR/roster CSVs")
    p.add_argument("--cdr", help="CDR CSV")
    p.add_argument("--mmtr", help="MMTR CSV")
    p.add_argument("--roster", help="roster CSV")
    p.add_argument("--out", help="output features.csv path")
    p.add_argument("--lenient", action="store_true", help="skip malformed rows instead of failing")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    _add_day_flags(p)

    for name, helptext in (("sample", "write one balanced per-stratum sample"),
                           ("train", "fit a model on one balanced sample and write it as JSON")):
        p = sub.add_parser(name, help=helptext)
        _add_experiment_flags(p)
        p.add_argument("--task", choices=[t.value for t in Task], help="classification task")
        p.add_argument("--stratum", choices=[s for _, s in SUITE_STRATA], help="stratum label")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("report", help="run the 2 tasks x 6 strata suite and write CSV reports")
    _add_experiment_flags(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")

    p = sub.add_parser("pipeline", help="synth (optional) -> featurize -> report")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--cdr")
    p.add_argument("--mmtr")
    p.add_argument("--roster")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed threaded through every stage")
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--min-n", type=int)
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    _add_gbm_flags(p)
    _add_day_flags(p)
    return parser


def _require(args, stage: str, *names: str) -> None:
    for n in names:
        if getattr(args, n, None) is None:
            raise StageError(stage, f"missing required flag --{n.replace('_', '-')}")


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    for flag, attr in (("seed", "seed"), ("folds", "folds"), ("repeats", "repeats"), ("min_n", "min_n"),
                       ("threads", "threads"), ("cdr", "cdr"), ("mmtr", "mmtr"), ("roster", "roster"),
                       ("out", "out"), ("weekend", "weekend_days"), ("utc_offset", "utc_offset_minutes")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, attr, v)
    for flag in ("n_trees", "shrinkage", "max_depth", "min_leaf"):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg.gbm, flag, v)
    cfg.gbm = gbm.GBMParams(**asdict(cfg.gbm))
    return cfg


# ---------------------------------------------------------------- stages


def _stage_synth(pop_cfg: PopulationConfig, out) -> dict:
    _set_stage("synth")
    pop = generate(pop_cfg)
    paths = pop.write(out)
    log.info("wrote %d subscribers, %d events, %d money records to %s",
             len(pop.roster), len(pop.events), len(pop.money), out)
    return paths


def _stage_featurize(cfg: RunConfig, out_path, strict: bool = True) -> None:
    _set_stage("featurize")
    try:
        events, rep = ingest_events(cfg.cdr, strict)
        money, mrep = ingest_money(cfg.mmtr, strict)
        roster, _ = ingest_roster(cfg.roster, strict)
    except ValueError as exc:
        raise StageError("featurize", str(exc)) from exc
    for r in (rep, mrep):
        if r.rejected:
            log.warning("%s: %d rows rejected", r.path, r.rejected)
    days = cfg.days
    if rep.utc_offset_minutes is not None and cfg.utc_offset_minutes == 0:
        days = DayConvention(days.weekend_days, rep.utc_offset_minutes)
    classes = classify_roster(roster, money)
    m = build_matrix(events, roster, days=days, classes=classes, threads=cfg.n_threads)
    write_features_csv(out_path, m)
    log.info("wrote %d x %d feature matrix to %s", *m.values.shape, out_path)


def _stage_report(cfg: RunConfig, features_path, out_dir) -> None:
    _set_stage("report")
    m = read_features_csv(features_path)
    wanted = set(cfg.strata)
    suite = run_suite(m, seed=cfg.seed, params=cfg.gbm, k=cfg.folds, repeats=cfg.repeats, min_n=cfg.min_n,
                      tasks=[Task(t) for t in cfg.tasks],
                      strata=[(a, s) for a, s in SUITE_STRATA if s in wanted],
                      threads=cfg.n_threads)
    suite.write(out_dir)
    log.info("wrote %d reports (%d skipped) to %s", len(suite.reports), len(suite.skipped), out_dir)


def _experiment_spec(args, stage: str) -> tuple[RunConfig, ExperimentSpec]:
    _require(args, stage, "features", "task", "stratum", "out")
    cfg = _apply_flags(RunConfig(), args)
    axis = next(a for a, s in SUITE_STRATA if s == args.stratum)
    spec = ExperimentSpec(Task(args.task), axis, args.stratum, cfg.seed, cfg.gbm, cfg.folds, cfg.repeats, cfg.min_n)
    return cfg, spec


def cmd_synth(args) -> None:
    _require(args, "synth", "out")
    try:
        pop_cfg = PopulationConfig.from_json(args.config) if args.config else PopulationConfig()
        if args.seed is not None:
            pop_cfg.seed = args.seed
        if args.n_subscribers is not None:
            pop_cfg.n_subscribers = args.n_subscribers
        pop_cfg.validate()
    except (OSError, ValueError, TypeError) as exc:
        raise StageError("synth", str(exc)) from exc
    _stage_synth(pop_cfg, args.out)


def cmd_enumerate(args) -> None:
    w = csv.writer(sys.stdout, lineterminator="\n")
    for d in enumerate_descriptors():
        w.writerow([canonical_name(d), category_of(d).value])


def _write_resolved(path, resolved: dict) -> None:
    Path(path).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_featurize(args) -> None:
    _require(args, "featurize", "cdr", "mmtr", "roster", "out")
    cfg = _apply_flags(RunConfig(), args)
    _stage_featurize(cfg, args.out, strict=not args.lenient)
    out = Path(args.out)
    _write_resolved(out.with_name(out.stem + ".run_config.json"), cfg.resolved())


def cmd_sample(args) -> None:
    _, spec = _experiment_spec(args, "sample")
    _set_stage("sample")
    m = read_features_csv(args.features)
    idx = balanced_sample(m, spec)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subscriber_id", "label"])
        for i in idx:
            w.writerow([m.subscriber_ids[i], task_label(m.classes[i], spec.task)])
    log.info("sampled %d rows for %s/%s", len(idx), spec.task.value, spec.stratum)


def cmd_train(args) -> None:
    _, spec = _experiment_spec(args, "train")
    _set_stage("train")
    m = read_features_csv(args.features)
    idx = balanced_sample(m, spec)
    y = np.array([task_label(m.classes[i], spec.task) for i in idx])
    model = gbm.fit(m.values[idx], y, spec.params)
    Path(args.out).write_text(model.to_json(), encoding="utf-8")
    log.info("trained %d trees on %d rows; training accuracy %.3f",
             len(model.trees), len(idx), gbm.accuracy(model, m.values[idx], y))


def cmd_report(args) -> None:
    _require(args, "report", "features", "out")
    cfg = _apply_flags(RunConfig(), args)
    _stage_report(cfg, args.features, args.out)
    _write_resolved(Path(args.out) / "run_config.json", {**cfg.resolved(), "features": args.features})


def cmd_pipeline(args) -> None:
    _set_stage("pipeline")
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
        cfg = _apply_flags(RunConfig.from_dict(raw), args)
    except (OSError, ValueError, TypeError) as exc:
        raise StageError("pipeline", f"bad config: {exc}") from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synth is not None and cfg.cdr is None:
        try:
            pop_cfg = PopulationConfig.from_dict({**cfg.synth, "seed": cfg.seed})
        except (ValueError, TypeError) as exc:
            raise StageError("synth", str(exc)) from exc
        resolved = cfg.resolved()
        resolved["synth"] = pop_cfg.to_dict()
        paths = _stage_synth(pop_cfg, out / "data")
        cfg.cdr, cfg.mmtr, cfg.roster = (str(paths[k]) for k in ("cdr", "mmtr", "roster"))
    else:
        for flag in ("cdr", "mmtr", "roster"):
            if getattr(cfg, flag) is None:
                raise StageError("pipeline", f"missing required flag --{flag} (or a synth section in the config)")
        resolved = cfg.resolved()
    _write_resolved(out / "run_config.json", resolved)
    _stage_featurize(cfg, out / "features.csv")
    _stage_report(cfg, out / "features.csv", out / "reports")


COMMANDS = {
    "synth": cmd_synth,
    "enumerate": cmd_enumerate,
    "featurize": cmd_featurize,
    "sample": cmd_sample,
    "train": cmd_train,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def _configure_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s\t%(stage)s\t%(message)s"))
    handler.addFilter(_stage_filter)
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
        if args.command is None:
            raise StageError("cli", "no subcommand given; see --help")
        _set_stage(args.command)
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error\t{exc.stage}\t{exc}".replace("\n", " "), file=sys.stderr)
        return 2 if exc.stage == "cli" else 1
    except Exception as exc:  # any stage failure becomes a one-line error
        print(f"error\t{_stage_filter.stage}\t{type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
