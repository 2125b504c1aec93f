"""Command line driving training, evaluation, speaking, and the probe service.

    emlang train --config cfg.json --out runs/a [--scale desk] [--seed 3]
    emlang eval  --checkpoint runs/a/checkpoint --suite guess
    emlang speak --checkpoint runs/a/checkpoint --image digit.pgm --length 12
    emlang serve --checkpoint runs/a/checkpoint --port 8080

The config file is JSON whose keys are TrainConfig fields; command-line
flags override file values. Exit codes: 0 success, 2 usage/config error,
1 runtime failure. Artifact-producing commands write a manifest.json
listing every file they created plus the hash of the effective config,
so any artifact can be reproduced from its recorded settings.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .corpus import CorpusError, Dataset, decode_pgm, resize_image, resolve_dataset
from .game import Checkpoint, CheckpointFormatError, TrainConfig, load_checkpoint, train
from .nets import LengthError, speak


class UsageError(Exception):
    """Bad flags, unreadable config, or inconsistent inputs: exit code 2."""


@dataclass(frozen=True)
class RunManifest:
    """What a command produced and the exact settings that produced it."""

    command: str
    config_hash: str
    seed: int
    started: str
    finished: str
    artifacts: tuple[str, ...]

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        payload = dataclasses.asdict(self)
        payload["artifacts"] = sorted(set(self.artifacts) | {"manifest.json"})
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _resolve(workdir: str, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _load_train_config(path: Path | None, scale: str | None, seed: int | None) -> TrainConfig:
    data: dict = {}
    if path is not None:
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    if scale is not None:
        data["scale"] = scale
    if seed is not None:
        data["seed"] = seed
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def _open_checkpoint(path: Path) -> Checkpoint:
    try:
        return load_checkpoint(path)
    except CheckpointFormatError as exc:
        raise UsageError(str(exc)) from exc


def _datasets_for(ckpt_or_name, override: str | None) -> tuple[Dataset, Dataset]:
    source = override
    if source is None:
        source = ckpt_or_name.config.dataset if hasattr(ckpt_or_name, "config") else str(ckpt_or_name)
    try:
        return resolve_dataset(source, "train"), resolve_dataset(source, "test")
    except CorpusError as exc:
        raise UsageError(str(exc)) from exc


def _write_report(rows: list[dict], out_dir: Path, stem: str) -> list[str]:
    """CSV plus an aligned text rendering; returns the file names."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ValueError("nothing to report")
    columns = list(rows[0])
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    rendered = [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row.values()]
        for row in rows
    ]
    widths = [
        max(len(columns[i]), *(len(r[i]) for r in rendered)) for i in range(len(columns))
    ]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rendered]
    (out_dir / f"{stem}.txt").write_text("\n".join(lines) + "\n")
    return [f"{stem}.csv", f"{stem}.txt"]


def cmd_train(args: argparse.Namespace) -> int:
    started = _utcnow()
    config = _load_train_config(
        _resolve(args.workdir, args.config), args.scale, args.seed
    ).resolved()
    out_dir = _resolve(args.workdir, args.out)
    data = _datasets_for(config.dataset, None)[0]
    ckpt = train(config, data, sink=out_dir, log=lambda m: print(m, flush=True))
    from .analysis.suites import config_hash

    manifest = RunManifest(
        command="train",
        config_hash=config_hash(config),
        seed=config.seed,
        started=started,
        finished=_utcnow(),
        artifacts=("metrics.ndjson", "checkpoint/meta.json", "checkpoint/tensors.bin"),
    )
    manifest.write(out_dir)
    final = ckpt.history[-1]
    print(f"done: train guess accuracy {final['train_guess_acc']:.4f} "
          f"after {ckpt.epoch} epochs -> {out_dir}")
    return 0


def _suite_guess(ckpt, train_data, test_data, out_dir, stem):
    from .analysis.classifiers import guess_accuracy

    cfg = ckpt.config
    rows = []
    for split, data in (("train", train_data), ("test", test_data)):
        rng = np.random.default_rng((cfg.seed, 101))
        acc = guess_accuracy(ckpt, data, cfg.eval_batches, rng)
        rows.append({"split": split, "batches": cfg.eval_batches, "accuracy": acc})
    if ckpt.history:
        rows.append({
            "split": "train(final epoch)",
            "batches": cfg.batches_per_epoch,
            "accuracy": ckpt.history[-1]["train_guess_acc"],
        })
    return _write_report(rows, out_dir, stem)


def _suite_semantics(ckpt, train_data, test_data, out_dir, stem):
    from .analysis.classifiers import speak_corpus, train_probe

    seed = ckpt.config.seed
    train_msgs, train_labels = speak_corpus(
        ckpt, train_data, np.random.default_rng((seed, 201)))
    test_msgs, test_labels = speak_corpus(
        ckpt, test_data, np.random.default_rng((seed, 202)))
    _, stats = train_probe(
        train_msgs, train_labels, test_msgs, test_labels,
        vocab_size=ckpt.config.vocab_size, seed=seed,
    )
    rows = [{"split": k.removesuffix("_acc"), "accuracy": v} for k, v in stats.items()]
    return _write_report(rows, out_dir, stem)


def _suite_patterns(ckpt, train_data, test_data, out_dir, stem, top=20, min_support=5):
    from .analysis.classifiers import speak_corpus
    from .analysis.patterns import correspondence_rate, mine_patterns

    seed = ckpt.config.seed
    msgs, labels = speak_corpus(ckpt, test_data, np.random.default_rng((seed, 301)))
    vocab = ckpt.nets.cfg.vocab
    rows = []
    for rule, support in mine_patterns(msgs, vocab, min_support=min_support)[:top]:
        matched = [int(labels[i]) for i, m in enumerate(msgs) if rule.matches(m, vocab)]
        majority = max(set(matched), key=matched.count)
        stat = correspondence_rate(
            rule, msgs, labels, lambda lab: int(lab) == majority, vocab,
            feature_tag=f"label=={majority}",
        )
        rows.append({
            "pattern": rule.display(), "support": support,
            "feature_tag": stat.feature_tag, "total": stat.total, "cr": stat.cr,
        })
    if not rows:
        rows = [{"pattern": "(none)", "support": 0, "feature_tag": "", "total": 0, "cr": 0.0}]
    return _write_report(rows, out_dir, stem)


def _suite_robustness(ckpt, train_data, test_data, out_dir, stem):
    from .analysis.suites import robustness_table

    cells = robustness_table(
        train_data, test_data, ckpt.config, seed=ckpt.config.seed,
        cache_dir=out_dir / "cache", log=lambda m: print(m, flush=True),
    )
    rows = [dataclasses.asdict(c) for c in cells]
    return _write_report(rows, out_dir, stem)


def _suite_transfer(ckpt, train_data, test_data, out_dir, stem):
    from .analysis.suites import transfer_suite

    report = transfer_suite(
        train_data, test_data, ckpt.config, seed=ckpt.config.seed,
        cache_dir=out_dir / "cache", log=lambda m: print(m, flush=True),
    )
    rows = [
        {"representation": "language", "known_acc": report.language_known,
         "new_acc": report.language_new, "backbone_frozen": report.backbones_frozen},
        {"representation": "feature", "known_acc": report.feature_known,
         "new_acc": report.feature_new, "backbone_frozen": report.backbones_frozen},
    ]
    return _write_report(rows, out_dir, stem)


_SUITES = {
    "guess": _suite_guess,
    "semantics": _suite_semantics,
    "patterns": _suite_patterns,
    "robustness": _suite_robustness,
    "transfer": _suite_transfer,
}


def cmd_eval(args: argparse.Namespace) -> int:
    started = _utcnow()
    ckpt = _open_checkpoint(_resolve(args.workdir, args.checkpoint))
    train_data, test_data = _datasets_for(ckpt, args.dataset)
    out_dir = _resolve(args.workdir, args.out)
    from .analysis.suites import config_hash

    stem = f"{args.suite}_{config_hash(ckpt.config)}_s{ckpt.config.seed}"
    artifacts = _SUITES[args.suite](ckpt, train_data, test_data, out_dir, stem)
    RunManifest(
        command=f"eval:{args.suite}",
        config_hash=config_hash(ckpt.config),
        seed=ckpt.config.seed,
        started=started,
        finished=_utcnow(),
        artifacts=tuple(artifacts),
    ).write(out_dir)
    for name in artifacts:
        if name.endswith(".txt"):
            print((out_dir / name).read_text(), end="")
    return 0


def _load_image_file(path: Path, size: int) -> np.ndarray:
    if not path.exists():
        raise UsageError(f"image file {path} does not exist")
    if path.suffix.lower() == ".pgm":
        img = decode_pgm(path.read_bytes())
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            gray = Image.open(path).convert("L")
        except UnidentifiedImageError as exc:
            raise UsageError(f"cannot read image {path}: {exc}") from exc
        img = np.asarray(gray, dtype=np.float32) / 255.0
    return resize_image(img, size)


def cmd_speak(args: argparse.Namespace) -> int:
    ckpt = _open_checkpoint(_resolve(args.workdir, args.checkpoint))
    if args.vocab is not None and args.vocab != ckpt.config.vocab_size:
        raise UsageError(
            f"checkpoint speaks a {ckpt.config.vocab_size}-symbol vocabulary, "
            f"--vocab asked for {args.vocab}"
        )
    image = _load_image_file(
        _resolve(args.workdir, args.image), ckpt.nets.cfg.image_size)
    try:
        msg, _ = speak(ckpt.nets.speaker, image, args.length)
    except LengthError as exc:
        raise UsageError(str(exc)) from exc
    print(ckpt.nets.cfg.vocab.decode(msg.symbols))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    ckpt = _open_checkpoint(_resolve(args.workdir, args.checkpoint))
    train_data, test_data = _datasets_for(ckpt, args.dataset)
    static = _resolve(args.workdir, args.static)
    if static is not None and not static.is_dir():
        raise UsageError(f"static directory {static} does not exist")
    app = create_app(
        ckpt, {"train": train_data, "test": test_data},
        max_sessions=args.max_sessions,
        static_dir=None if static is None else str(static),
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_workdir(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--workdir", default=".", help="base directory for relative paths")


def _add_serve_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="checkpoint directory")
    parser.add_argument("--port", type=int, default=8000, help="TCP port to bind")
    parser.add_argument("--host", default="127.0.0.1", help="interface to bind")
    parser.add_argument(
        "--dataset", default=None,
        help="dataset name or path (default: the one the checkpoint trained on)")
    parser.add_argument(
        "--static", default=None, help="directory of UI assets to serve at /")
    parser.add_argument(
        "--max-sessions", type=int, default=256,
        help="LRU cap on concurrently held candidate batches")
    _add_workdir(parser)
    parser.set_defaults(func=cmd_serve)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emlang",
        description="Train, evaluate, and probe the speak-guess-draw game.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a JSON config")
    p.add_argument("--config", default=None,
                   help="JSON file of TrainConfig fields (defaults apply if omitted)")
    p.add_argument("--out", required=True, help="output directory for the run")
    p.add_argument("--scale", choices=["paper", "desk"], default=None,
                   help="scale preset override")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    _add_workdir(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run one analysis suite over a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--suite", required=True, choices=sorted(_SUITES),
                   help="which analysis battery to run")
    p.add_argument("--out", default="reports", help="directory for report files")
    p.add_argument("--dataset", default=None,
                   help="dataset name or path (default: the checkpoint's)")
    _add_workdir(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("speak", help="describe one image file as a symbol string")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--image", required=True, help="PGM/PNG image file")
    p.add_argument("--length", type=int, required=True, help="message length")
    p.add_argument("--vocab", type=int, choices=[2, 10, 26], default=None,
                   help="assert the checkpoint's vocabulary size")
    _add_workdir(p)
    p.set_defaults(func=cmd_speak)

    p = sub.add_parser("serve", help="serve the HTTP probe API over a checkpoint")
    _add_serve_args(p)

    return parser


def _dispatch(parser: argparse.ArgumentParser, argv: list[str] | None) -> int:
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse prints its own message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:        # noqa: BLE001 -- boundary of the process
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    return _dispatch(build_parser(), argv)


def probe_serve_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="probe-serve",
        description="Serve the HTTP probe API over a trained checkpoint.",
    )
    _add_serve_args(parser)
    return _dispatch(parser, argv)


if __name__ == "__main__":
    sys.exit(main())
