"""``mmfs`` command-line entry point.

Results go to stdout as JSON or CSV, diagnostics to stderr. Exit status is
0 on success, 1 when a verification or training step fails and 2 for
usage, configuration and I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load_checkpoint, read_sidecar, save_checkpoint
from .config import RunConfig, resolve_config
from .data import (
    SyntheticSpec,
    data_root,
    default_counts,
    generate_synthetic,
    label_histogram,
    load_manifest,
    load_samples,
    split_dataset,
)
from .exceptions import (
    BadMagicError,
    ConfigError,
    DuplicateIdError,
    KindMismatchError,
    ManifestParseError,
    MMFSError,
    TensorCountMismatchError,
    TruncatedPixelDataError,
    UnknownLabelError,
    UnsupportedMaxvalError,
    VersionMismatchError,
)
from .fusion import FusionKind
from .text import build_vocab
from .training import ModelBundle, compare_experiment, evaluate, train
from .verification import DEFAULT_TOLERANCE, SCOPES, run_gradchecks

logger = logging.getLogger("mmfs")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# errors that mean "bad input", as opposed to a failed computation
_USAGE_ERRORS = (ConfigError, KindMismatchError, OSError, ManifestParseError, UnknownLabelError,
                 DuplicateIdError, BadMagicError, TruncatedPixelDataError, UnsupportedMaxvalError,
                 TensorCountMismatchError, VersionMismatchError, json.JSONDecodeError)


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _overrides(args) -> dict:
    return {
        "profile": getattr(args, "profile", None),
        "seed": getattr(args, "seed", None),
        "epoch": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "freeze_encoders": getattr(args, "freeze_encoders", None),
        "max_steps": getattr(args, "max_steps", None),
        "data_dir": getattr(args, "data", None),
    }


def _resolve_data_dir(cfg: RunConfig) -> Path:
    root = data_root(cfg.data_dir)
    if root is None:
        raise UsageError("no dataset given: pass --data, set data_dir in the config, or set MMFS_DATA_ROOT")
    return root


def _load_dataset(cfg: RunConfig):
    root = _resolve_data_dir(cfg)
    manifest_path = root / "manifest.jsonl" if root.is_dir() else root
    manifest = load_manifest(manifest_path)
    samples = load_samples(manifest, cfg.image_size)
    counts = tuple(cfg.split) if cfg.split else default_counts(len(samples))
    seed = cfg.seed if cfg.split_seed is None else cfg.split_seed
    return split_dataset(samples, counts, seed), counts, seed


# ----------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = args.out or data_root()
    if out is None:
        raise UsageError("synth needs --out (or MMFS_DATA_ROOT)")
    spec = SyntheticSpec(num_samples=args.n, seed=args.seed, noise=args.noise, image_size=args.image_size)
    manifest = generate_synthetic(spec, out)
    hist = label_histogram(manifest)
    sys.stdout.write(_dump({"out": str(out), "n": len(manifest), "labels": hist}))
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        kind = FusionKind.parse(args.model)
    except KindMismatchError as exc:
        raise ConfigError(str(exc)) from None
    cfg = resolve_config(overrides=_overrides(args), path=args.config)
    dataset, counts, split_seed = _load_dataset(cfg)
    vocab = build_vocab([s.text for s in dataset.train])
    bundle = ModelBundle.from_run_config(kind, vocab, cfg)
    _, history = train(bundle, dataset, cfg.train_config())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{kind.value.lower()}.ckpt"
    save_checkpoint(bundle, ckpt, extra={"split": list(counts), "split_seed": split_seed,
                                         "data_dir": cfg.data_dir})
    val = evaluate(bundle, dataset.val, cfg.batch_size).to_dict()
    _write(out / "history.json", _dump(history.to_dict()))
    _write(out / "val_metrics.json", _dump(val))
    _write(out / "config.json", _dump(cfg.to_dict()))
    sys.stdout.write(_dump({"checkpoint": str(ckpt), "best_epoch": history.best_epoch, "val": val}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} does not exist")
    bundle = load_checkpoint(ckpt)
    extra = read_sidecar(ckpt).get("extra", {})
    overrides = {"data_dir": args.data or extra.get("data_dir"), "split": extra.get("split"),
                 "split_seed": extra.get("split_seed"), "image_size": bundle.image_config.image_size}
    cfg = resolve_config(path=args.config, overrides=overrides)
    dataset, _, _ = _load_dataset(cfg)
    if args.split == "all":
        samples = dataset.train + dataset.val + dataset.test
    else:
        samples = getattr(dataset, args.split)
    report = evaluate(bundle, samples, cfg.batch_size).to_dict()
    report["split"] = args.split
    report["model"] = bundle.kind.value
    sys.stdout.write(_dump(report))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(overrides=_overrides(args), path=args.config)
    dataset, _, _ = _load_dataset(cfg)
    kinds = [FusionKind.parse(k) for k in args.models.split(",")] if args.models else None
    report = compare_experiment(dataset, cfg, **({"kinds": kinds} if kinds else {}))
    out = Path(args.out)
    csv_text = report.to_csv()
    _write(out / "report.csv", csv_text)
    _write(out / "report.json", _dump(report.to_dict()))
    # wall time is kept apart so the report files stay byte-reproducible
    _write(out / "timing.json", _dump({r.kind.value: round(r.wall_time, 3) for r in report.results}))
    sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.scope, args.tol)
    for r in results:
        sys.stdout.write(r.row(args.tol) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        sys.stderr.write(f"gradcheck: {len(failed)} of {len(results)} failed: {', '.join(failed)}\n")
        return EXIT_FAILURE
    sys.stderr.write(f"gradcheck: all {len(results)} passed\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config; keys as in the hyperparameter table")
    p.add_argument("--profile", choices=("desk", "paper"), help="base profile (default: desk)")
    p.add_argument("--data", metavar="DIR", help="dataset directory with manifest.jsonl (default: $MMFS_DATA_ROOT)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--freeze-encoders", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmfs", description="Multimodal text+image sentiment fusion models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="BLAS thread cap (default 1, keeps runs bitwise reproducible)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic (a+b) mod 3 dataset")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model kind and save its best checkpoint")
    p.add_argument("--model", required=True, metavar="KIND", help=", ".join(k.value for k in FusionKind))
    p.add_argument("--out", default="runs", metavar="DIR")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and test all seven model kinds")
    p.add_argument("--out", default="report", metavar="DIR")
    p.add_argument("--models", metavar="KINDS", help="comma-separated subset (default: all seven)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every registered gradient")
    p.add_argument("--scope", choices=SCOPES + ("all",), default="all")
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        sys.stderr.write("error: --threads must be at least 1\n")
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, *_USAGE_ERRORS) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except MMFSError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
