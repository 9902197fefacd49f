"""``nasgnn`` command line: synthetic data, training, prediction, reports, gradient check.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ExhaustedSpace, dumps_jsonl, gen_synthetic, load_jsonl, dataset_stats
from .graph import MAX_NODES, GraphValidationError, canonical_hash
from .io import atomic_write_text
from .layers import DimensionMismatch, EncoderConfig
from .predictor import MissingLabel, SurrogateModel
from .training import (
    EmptyPartition,
    EvalReport,
    NonFiniteGradient,
    NonFiniteLoss,
    RandomSplit,
    ZeroShotSplit,
    evaluate,
    predict_parallel,
    split,
    train,
    train_baseline_mlp,
)

RUNTIME_ERRORS = (
    OSError,
    ValueError,
    ArithmeticError,
    KeyError,
)


def default_seed() -> int:
    raw = os.environ.get("NASGNN_SEED")
    return int(raw) if raw not in (None, "") else 0


def parse_sizes(text: str) -> list[int]:
    """``"2,3,5"`` or ``"2-7"`` or a mix like ``"2-4,7"``."""
    sizes: set[int] = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-"))
                sizes.update(range(lo, hi + 1))
            elif part:
                sizes.add(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or any(not 2 <= s <= MAX_NODES for s in sizes):
        raise argparse.ArgumentTypeError(f"sizes must be within 2..{MAX_NODES}: {text!r}")
    return sorted(sizes)


@dataclass
class RunConfig:
    """Everything that, with the dataset file, determines a run."""

    command: str
    data: str
    split: str = "random"
    test_size: int | None = None
    train_sizes: list[int] = field(default_factory=list)
    d_n: int = 250
    d_g: int = 56
    rounds: int = 2
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-5
    seed: int = 0
    repeats: int = 1
    features: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        doc = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})

    def split_spec(self, seed: int):
        if self.split == "random":
            return RandomSplit(seed=seed)
        return ZeroShotSplit(frozenset(self.train_sizes), self.test_size, seed=seed)


# ---------------------------------------------------------------- commands


def cmd_gen_synthetic(args) -> int:
    try:
        dataset = gen_synthetic(args.n, args.seed, args.sizes)
    except ExhaustedSpace as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    atomic_write_text(args.out, dumps_jsonl(dataset, meta=dataset.provenance))
    labels = [g.val_acc for g in dataset]
    print(f"wrote {len(dataset)} cells to {args.out}; val_acc in [{min(labels):.4f}, {max(labels):.4f}]")
    return 0


def _split_config(args, command: str) -> RunConfig:
    if args.split == "zeroshot":
        if args.test_size is None:
            raise SystemExit("--test-size is required with --split zeroshot")
        train_sizes = args.train_sizes or [s for s in range(2, MAX_NODES + 1) if s != args.test_size]
        if args.test_size in train_sizes:
            raise SystemExit(f"--test-size {args.test_size} also listed in --train-sizes")
    else:
        train_sizes = []
    return RunConfig(
        command=command,
        data=str(args.data),
        split=args.split,
        test_size=args.test_size if args.split == "zeroshot" else None,
        train_sizes=train_sizes,
        epochs=args.epochs,
        batch=args.batch,
        lr=args.lr,
        seed=args.seed,
        repeats=args.repeats,
    )


def _write_run(out: Path, log_, report: EvalReport) -> None:
    atomic_write_text(out / "train_log.csv", log_.to_csv())
    atomic_write_text(out / "eval_report.json", report.to_json())
    atomic_write_text(out / "eval_bins.csv", report.bins_csv())


def _write_summary(out_dir: Path, rmses: list[float]) -> None:
    mean = float(np.mean(rmses))
    summary = {
        "rmse": rmses,
        "rmse_mean": mean,
        "rmse_relative_std": float(np.std(rmses) / mean) if mean else None,
    }
    atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"rmse over {len(rmses)} runs: mean {mean:.5f}")


def _run_dir(args) -> Path:
    return Path(args.out_dir) if args.out_dir else Path("runs") / time.strftime("%Y%m%d-%H%M%S")


def cmd_train(args) -> int:
    config = _split_config(args, "train")
    config.d_n, config.d_g, config.rounds = args.dn, args.dg, args.rounds
    enc = EncoderConfig(d_n=args.dn, d_g=args.dg, rounds=args.rounds)
    dataset = load_jsonl(args.data, dedup=args.dedup)
    out_dir = _run_dir(args)
    atomic_write_text(out_dir / "run_config.json", config.to_json())

    rmses = []
    for r in range(args.repeats):
        seed = args.seed + r
        out = out_dir if args.repeats == 1 else out_dir / f"repeat{r}"
        train_set, test_set, val_set = split(dataset, config.split_spec(seed))
        model = SurrogateModel.create(enc, seed=seed)
        log_ = train(model, train_set, val_set, epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=seed)
        model.save(out / "checkpoint_final.json")
        if log_.best_state is not None:
            best = SurrogateModel(enc, model.params.copy())
            best.params.load_state(log_.best_state)
            best.save(out / "checkpoint_best.json")
        report = evaluate(model, test_set, jobs=args.jobs)
        _write_run(out, log_, report)
        rmses.append(report.rmse)
        print(f"[seed {seed}] train {len(train_set)} / val {len(val_set)} / test {len(test_set)}: test rmse {report.rmse:.5f}")
    if args.repeats > 1:
        _write_summary(out_dir, rmses)
    return 0


def cmd_baseline(args) -> int:
    config = _split_config(args, "baseline")
    config.features = args.features
    dataset = load_jsonl(args.data, dedup=args.dedup)
    out_dir = _run_dir(args)
    atomic_write_text(out_dir / "run_config.json", config.to_json())
    rmses = []
    for r in range(args.repeats):
        seed = args.seed + r
        out = out_dir if args.repeats == 1 else out_dir / f"repeat{r}"
        train_set, test_set, val_set = split(dataset, config.split_spec(seed))
        _, log_, report = train_baseline_mlp(
            args.features, train_set, val_set, test_set, epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=seed
        )
        _write_run(out, log_, report)
        rmses.append(report.rmse)
        print(f"[seed {seed}] {args.features} baseline test rmse {report.rmse:.5f}")
    if args.repeats > 1:
        _write_summary(out_dir, rmses)
    return 0


def cmd_predict(args) -> int:
    model = SurrogateModel.load(args.checkpoint)
    for flag, have in (("dn", model.config.d_n), ("dg", model.config.d_g), ("rounds", model.config.rounds)):
        want = getattr(args, flag)
        if want is not None and want != have:
            raise DimensionMismatch(f"--{flag} {want} but checkpoint has {have}")
    graphs = list(load_jsonl(args.graphs, dedup=False))
    pred = predict_parallel(model, graphs, jobs=args.jobs)
    labeled = bool(graphs) and all(g.labeled for g in graphs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hash", "prediction", "label", "sq_error"] if labeled else ["hash", "prediction"])
    for g, p in zip(graphs, pred):
        row = [canonical_hash(g), repr(float(p))]
        if labeled:
            row += [repr(g.val_acc), repr(float((p - g.val_acc) ** 2))]
        w.writerow(row)
    atomic_write_text(args.out, buf.getvalue())
    print(f"wrote {len(graphs)} predictions to {args.out}")
    return 0


def cmd_report_bins(args) -> int:
    try:
        with open(args.eval_json, encoding="utf-8") as fh:
            report = EvalReport.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: malformed eval report {args.eval_json}: {exc}", file=sys.stderr)
        return 2
    atomic_write_text(args.out_csv, report.bins_csv())
    return 0


def cmd_stats(args) -> int:
    stats = dataset_stats(load_jsonl(args.data, dedup=args.dedup))
    text = stats.to_json()
    if args.out_json:
        atomic_write_text(args.out_json, text)
    else:
        sys.stdout.write(text)
    if args.out_csv:
        atomic_write_text(args.out_csv, stats.bins_csv())
    return 0


def gradcheck_batch(seed: int):
    return list(gen_synthetic(4, seed, size_distribution=range(4, MAX_NODES + 1)))


def cmd_gradcheck(args) -> int:
    config = EncoderConfig(d_n=args.dn, d_g=args.dg, rounds=args.rounds)
    model = SurrogateModel.create(config, seed=args.seed)
    batch = gradcheck_batch(args.seed)
    t0 = time.time()
    corrupt = args.corrupt_op or ()
    with ad.corrupt_backward(*corrupt):
        report = ad.finite_diff_check(lambda: model.loss(batch), model.params, step=args.step, tolerance=args.tolerance)
    elapsed = time.time() - t0
    print(
        f"checked {len(report.max_rel_error)} parameters ({model.params.num_scalars()} scalars) "
        f"in {elapsed:.1f}s; worst relative error {report.worst:.3e}"
    )
    if report.passed:
        print(f"PASS at tolerance {args.tolerance:g}")
        return 0
    for name, err in sorted(report.failures.items()):
        print(f"FAIL {name}: relative error {err:.3e}")
    return 1


# ---------------------------------------------------------------- parser


def _add_split_args(p: argparse.ArgumentParser, epochs: int, lr: float) -> None:
    p.add_argument("--data", required=True, help="JSONL dataset")
    p.add_argument("--split", choices=("random", "zeroshot"), default="random")
    p.add_argument("--test-size", type=int, help="held-out node count for --split zeroshot")
    p.add_argument("--train-sizes", type=parse_sizes, help="training node counts for zeroshot (default: all others)")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--repeats", type=int, default=1, help="independent runs with seeds seed..seed+k-1")
    p.add_argument("--out-dir", help="run directory (default runs/<timestamp>)")
    p.add_argument("--jobs", type=int, default=1, help="evaluation workers")
    p.add_argument("--dedup", action="store_true", help="drop duplicate cells instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nasgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="sample cells labeled by the synthetic oracle")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--sizes", type=parse_sizes, default=None, help="node counts, e.g. 2-7 or 5,6")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the encoder + regressor")
    _add_split_args(p, epochs=100, lr=1e-5)
    p.add_argument("--dn", type=int, default=250)
    p.add_argument("--dg", type=int, default=56)
    p.add_argument("--rounds", type=int, default=2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("baseline", help="train the MLP baseline on fixed features")
    _add_split_args(p, epochs=100, lr=1e-5)
    p.add_argument("--features", choices=("one_hot", "depth_width"), default="one_hot")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("predict", help="predict accuracies with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dn", type=int)
    p.add_argument("--dg", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report-bins", help="convert an eval report to the bins CSV")
    p.add_argument("--eval-json", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_report_bins)

    p = sub.add_parser("stats", help="label and size histograms of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--dedup", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--dn", type=int, default=6)
    p.add_argument("--dg", type=int, default=4)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--corrupt-op", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            parser.error(exc.code)
        raise
    except (
        GraphValidationError,
        MissingLabel,
        EmptyPartition,
        NonFiniteLoss,
        NonFiniteGradient,
        DimensionMismatch,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
