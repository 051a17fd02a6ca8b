"""Command-line entry point: ``semloop <command> --config run.json [flags]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .checkpoint import Checkpoint, ToyPredictor
from .config import PREDICTOR_NAMES, RunConfig, load_config
from .errors import InvalidConfigError, SemloopError
from .evaluation import LinearBaseline, MeanBaseline, PipelinePredictor, format_table, run_loso
from .grpo import CURVE_COLUMNS, train
from .ingest import Dataset, SynthConfig, split_loso, write_dataset
from .policy import RemoteProvider, ToyPolicy
from .schema import TaskKind
from .toy_oracle import bucket_labels, expected_reward, optimal_expected_reward

log = logging.getLogger("semloop")

EXIT_ERROR = 1
EXIT_IO = 3


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, files: Sequence[Path]) -> None:
    manifest = {
        "command": command,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "config": cfg.raw,
        "files": {p.name: _file_digest(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _out_dir(args, cfg: RunConfig, sub: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif cfg.out_dir is not None:
        out = cfg.out_dir / sub
    else:
        raise InvalidConfigError("no output directory: pass --out or set 'out_dir' in the config")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_split(ds: Dataset, holdout: Sequence[str]) -> Dataset:
    missing = sorted(set(holdout) - set(ds.subsets))
    if missing:
        raise InvalidConfigError(f"train.holdout names unknown subset(s): {', '.join(missing)}")
    keep = [i for i, s in enumerate(ds.samples) if s.subset not in holdout]
    if not keep:
        raise InvalidConfigError("train.holdout leaves no training samples")
    return ds.subset(keep)


def _toy_trainer(cfg: RunConfig, steps: Optional[int] = None) -> Callable[[Dataset, TaskKind], ToyPolicy]:
    tc = cfg.train if steps is None else dataclasses.replace(cfg.train, steps=steps)

    def fit(train_ds: Dataset, task: TaskKind) -> ToyPolicy:
        policy = ToyPolicy(cfg.toy_config(), seed=tc.seed)
        train(train_ds, task, tc, cfg.reward, policy, require_tags=policy.cfg.think)
        return policy

    return fit


# --- commands ----------------------------------------------------------------

def cmd_gen_synth(args, cfg: RunConfig) -> int:
    if not isinstance(cfg.data, SynthConfig):
        raise InvalidConfigError("gen-synth needs a 'data.synth' section")
    out = _out_dir(args, cfg, "data")
    ds = cfg.load_data()
    files = list(write_dataset(ds, out))
    _write_manifest(out, "gen-synth", cfg, files)
    print(f"wrote {len(ds)} samples ({', '.join(ds.subsets)}) to {out}")
    return 0


def cmd_train_toy(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg, "train")
    ds = cfg.load_data()
    train_ds = _train_split(ds, cfg.holdout)
    tcfg = cfg.train if args.steps is None else dataclasses.replace(cfg.train, steps=args.steps)
    toy = cfg.toy_config()
    policy = ToyPolicy(toy, seed=tcfg.seed)
    result = train(train_ds, cfg.task, tcfg, cfg.reward, policy, require_tags=toy.think)
    steps = tcfg.total_steps(len(train_ds))
    ck = Checkpoint(result.params, toy, ds.schema, cfg.task, tuple(train_ds.subsets), tcfg.seed, cfg.hash, steps)
    ck_path = out / "checkpoint.json"
    ck.save(ck_path)
    curve_path = out / "learning_curve.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in result.curve:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]])
    _write_manifest(out, "train-toy", cfg, [ck_path, curve_path])

    buckets, labels = bucket_labels(policy, train_ds, cfg.task)
    exp = expected_reward(result.params, buckets, labels, toy, cfg.reward)
    opt = optimal_expected_reward(buckets, labels, toy, cfg.reward)
    tail = [r["mean_reward"] for r in result.curve[-20:]]
    sampled = sum(tail) / len(tail) if tail else float("nan")
    print(
        f"steps {steps}  final mean reward {exp:.4f} (sampled, last {len(tail)} steps: {sampled:.4f})  "
        f"optimum {opt:.4f}  ratio {exp / opt:.4f}"
    )
    print(f"checkpoint: {ck_path}")
    return 0


def _predictor_factories(names: Sequence[str], cfg: RunConfig, checkpoint: Optional[Path], failures: dict):
    factories = {}
    ck = Checkpoint.load(checkpoint) if checkpoint is not None else None
    for name in names:
        if name == "mean-baseline":
            factories[name] = MeanBaseline
        elif name == "linear-baseline":
            factories[name] = LinearBaseline
        elif name == "toy":
            trainer = None if ck is not None else _toy_trainer(cfg)
            factories[name] = (lambda: ToyPredictor(checkpoint=ck)) if ck is not None else (lambda: ToyPredictor(trainer=trainer))
        elif name == "remote-provider":
            pcfg = cfg.require_provider()
            client = RemoteProvider(pcfg)

            def make(pcfg=pcfg, client=client):
                p = PipelinePredictor(client, cfg.schema, pcfg.require_think_tags, pcfg.temperature, pcfg.max_tokens)
                failures.setdefault("remote-provider", []).append(p.failures)
                return p

            factories[name] = make
        else:
            raise InvalidConfigError(f"unknown predictor {name!r}; choose from {', '.join(PREDICTOR_NAMES)}")
    return factories


def _loso(args, cfg: RunConfig, names: Sequence[str], command: str) -> int:
    if len(set(names)) != len(names):
        raise InvalidConfigError("each predictor may be selected once")
    out = _out_dir(args, cfg, command)
    ds = cfg.load_data()
    folds = split_loso(ds)
    wanted = list(args.fold or cfg.eval.folds)
    if wanted:
        unknown = sorted(set(wanted) - {f.name for f in folds})
        if unknown:
            raise InvalidConfigError(f"unknown fold(s): {', '.join(unknown)}")
        folds = [f for f in folds if f.name in wanted]
    failures: dict[str, list] = {}
    checkpoint = Path(args.checkpoint) if getattr(args, "checkpoint", None) else None
    factories = _predictor_factories(names, cfg, checkpoint, failures)
    B = args.resamples if args.resamples is not None else cfg.eval.resamples
    report = run_loso(ds, folds, cfg.task, factories, B=B, seed=cfg.eval.seed, jobs=args.jobs)
    doc = report.to_dict()
    doc.update({"config_hash": cfg.hash, "seed": cfg.eval.seed, "resamples": B})
    if checkpoint is not None:
        doc["checkpoint"] = {"path": str(checkpoint), "config_hash": Checkpoint.load(checkpoint).config_hash}
    if failures:
        doc["failures"] = {m: [msg for lst in lists for msg in lst] for m, lists in failures.items()}
    report_path = out / "report.json"
    report_path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    files = [report_path]
    for method in report.methods:
        p = out / f"predictions_{method}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "subject_id", "label_date", "true", "pred"])
            for r in report.predictions:
                if r.method == method:
                    w.writerow([r.fold, r.subject_id, r.label_date, r.true, "" if r.pred is None else r.pred])
        files.append(p)
    _write_manifest(out, command, cfg, files)
    print(format_table(doc))
    print(f"report: {report_path}")
    return 0


def cmd_run_loso(args, cfg: RunConfig) -> int:
    names = list(args.predictor or cfg.eval.predictors)
    return _loso(args, cfg, names, "loso")


def cmd_eval_provider(args, cfg: RunConfig) -> int:
    cfg.require_provider()
    extra = [p for p in (args.predictor or ["mean-baseline"]) if p != "remote-provider"]
    return _loso(args, cfg, ["remote-provider", *extra], "provider")


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        doc = json.load(fh)
    for k in ("task", "folds", "pooled"):
        if k not in doc:
            raise InvalidConfigError(f"{args.report}: not a report (missing key {k!r})")
    print(format_table(doc))
    if "config_hash" in doc:
        print(f"config hash: {doc['config_hash']}")
    return 0


# --- argument parsing ----------------------------------------------------------

def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration JSON")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="overrides every seed in the config")
    common.add_argument("--task", choices=[t.value for t in TaskKind], default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=_positive, default=argparse.SUPPRESS, help="parallel folds during evaluation")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="semloop", description="Two-stage summary-then-predict pipeline tools.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic cohort as features.csv + labels.csv")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("train-toy", parents=[common], help="train the toy policy with GRPO")
    p.add_argument("--out", help="output directory for checkpoint.json and learning_curve.csv")
    p.add_argument("--steps", type=_nonneg, help="number of updates (overrides train.steps)")

    p = sub.add_parser("run-loso", parents=[common], help="leave-one-subset-out evaluation")
    p.add_argument("--predictor", action="append", choices=PREDICTOR_NAMES, help="repeatable")
    p.add_argument("--checkpoint", help="toy checkpoint; without it the toy policy is trained per fold")
    p.add_argument("--fold", action="append", help="restrict to these held-out subsets (repeatable)")
    p.add_argument("--resamples", type=_positive, help="bootstrap resamples (overrides eval.resamples)")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("eval-provider", parents=[common], help="LOSO evaluation of a remote chat-completions model")
    p.add_argument("--predictor", action="append", choices=[n for n in PREDICTOR_NAMES if n != "toy"], help="extra comparison methods")
    p.add_argument("--fold", action="append")
    p.add_argument("--resamples", type=_positive)
    p.add_argument("--out")

    p = sub.add_parser("report", parents=[common], help="print a saved report.json as a table")
    p.add_argument("report", help="path to report.json")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("task", None), ("jobs", 1), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.config is None:
            raise InvalidConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config, seed=args.seed, task=args.task)
        handler = {
            "gen-synth": cmd_gen_synth,
            "train-toy": cmd_train_toy,
            "run-loso": cmd_run_loso,
            "eval-provider": cmd_eval_provider,
        }[args.command]
        return handler(args, cfg)
    except SemloopError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
