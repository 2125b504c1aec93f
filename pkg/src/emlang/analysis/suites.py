"""Multi-run comparisons: noise robustness table and category transfer.

Both suites train the two representation pipelines (discrete messages
plus probe, continuous features plus head) on identical data slices and
compare them on identical, shared-seed perturbed test sets. Training is
cached by config identity so repeated evaluations are cheap.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import Dataset
from ..game import Checkpoint, TrainConfig, load_checkpoint, train
from .classifiers import (
    FeatureBaseline,
    MessageProbe,
    TransferReport,
    feature_accuracy,
    probe_accuracy,
    speak_corpus,
    train_feature_baseline,
    train_probe,
    transfer_eval,
)
from .perturb import perturb_dataset

PERTURB_PARAMS: dict[str, dict] = {
    "none": {},
    "gaussian": {"kernel_size": 11, "sigma": 2.0},
    "salt_pepper": {"density": 0.1},
}


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config.resolved().to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:8]


def cached_train(
    config: TrainConfig, data: Dataset, cache_dir: Path | str | None,
    name: str, log=None,
) -> Checkpoint:
    """Train, or reuse a finished cached run with the identical config."""
    config = config.resolved()
    if cache_dir is None:
        return train(config, data, log=log)
    run_dir = Path(cache_dir) / name
    ckpt_dir = run_dir / "checkpoint"
    if ckpt_dir.exists():
        try:
            ck = load_checkpoint(ckpt_dir)
            if ck.config == config and ck.epoch == config.epochs:
                return ck
        except Exception:
            pass
    return train(config, data, sink=run_dir, log=log)


def stratified_fraction(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Per-class deterministic subsample keeping every category present."""
    if data.labels is None:
        raise ValueError("fraction sampling needs labels")
    rng = np.random.default_rng((seed, int(round(fraction * 10000))))
    keep: list[np.ndarray] = []
    for cls in data.categories:
        idx = np.flatnonzero(data.labels == cls)
        take = max(1, int(round(len(idx) * fraction)))
        keep.append(rng.choice(idx, size=take, replace=False))
    return data.subset(np.sort(np.concatenate(keep)))


@dataclass(frozen=True)
class RobustnessCell:
    fraction: float
    perturbation: str
    representation: str
    accuracy: float


def _train_pipelines(
    subset: Dataset,
    base_config: TrainConfig,
    seed: int,
    cache_dir,
    name: str,
    log=None,
) -> tuple[Checkpoint, MessageProbe, FeatureBaseline]:
    """Game + probe + feature baseline on one data slice."""
    import dataclasses

    config = dataclasses.replace(base_config, seed=seed).resolved()
    ckpt = cached_train(config, subset, cache_dir, name, log=log)
    rng = np.random.default_rng(seed + 7)
    msgs, labels = speak_corpus(ckpt, subset, rng)
    probe, _ = train_probe(
        msgs, labels, vocab_size=config.vocab_size, seed=seed, log=log)
    baseline = train_feature_baseline(
        subset, config.net_config, epochs=30, seed=seed, log=log)
    return ckpt, probe, baseline


def robustness_table(
    train_data: Dataset,
    test_data: Dataset,
    base_config: TrainConfig,
    fractions: tuple[float, ...] = (0.01, 0.05, 0.10),
    perturbations: tuple[str, ...] = ("none", "gaussian", "salt_pepper"),
    seed: int = 0,
    perturb_seed: int = 1234,
    cache_dir: Path | str | None = None,
    out_dir: Path | str | None = None,
    log=None,
) -> list[RobustnessCell]:
    """Accuracy matrix over (data fraction, perturbation, representation).

    Both representations are trained on the same stratified slice and
    evaluated on byte-identical perturbed test sets (one perturb_seed).
    """
    unknown = set(perturbations) - set(PERTURB_PARAMS)
    if unknown:
        raise ValueError(f"unknown perturbations: {sorted(unknown)}")
    cells: list[RobustnessCell] = []
    for fraction in fractions:
        subset = stratified_fraction(train_data, fraction, seed)
        if log is not None:
            log(f"fraction {fraction:.0%}: {len(subset)} training images")
        name = f"rob_f{int(round(fraction * 100))}_s{seed}"
        ckpt, probe, baseline = _train_pipelines(
            subset, base_config, seed, cache_dir, name, log=log)
        for kind in perturbations:
            noisy = perturb_dataset(
                test_data, kind, seed=perturb_seed, **PERTURB_PARAMS[kind])
            lang_rng = np.random.default_rng(perturb_seed + 1)
            msgs, labels = speak_corpus(ckpt, noisy, lang_rng)
            lang_acc = probe_accuracy(probe, msgs, labels)
            feat_acc = feature_accuracy(baseline, noisy)
            cells.append(RobustnessCell(fraction, kind, "language", lang_acc))
            cells.append(RobustnessCell(fraction, kind, "feature", feat_acc))
            if log is not None:
                log(f"  {kind}: language={lang_acc:.4f} feature={feat_acc:.4f}")
    if out_dir is not None:
        stem = f"robustness_{config_hash(base_config)}_s{seed}"
        write_robustness_reports(cells, Path(out_dir), stem)
    return cells


def write_robustness_reports(
    cells: list[RobustnessCell], out_dir: Path, stem: str
) -> tuple[Path, Path]:
    """CSV (one row per cell) plus an aligned text table."""
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    lines = ["fraction,perturbation,representation,accuracy"]
    for c in cells:
        lines.append(f"{c.fraction},{c.perturbation},{c.representation},{c.accuracy:.6f}")
    csv_path.write_text("\n".join(lines) + "\n")

    perts = list(dict.fromkeys(c.perturbation for c in cells))
    width = max(len(p) for p in perts) + 2
    rows = ["fraction  representation  " + "".join(p.ljust(width) for p in perts)]
    for fraction in dict.fromkeys(c.fraction for c in cells):
        for rep in ("language", "feature"):
            vals = {
                c.perturbation: c.accuracy for c in cells
                if c.fraction == fraction and c.representation == rep
            }
            rows.append(
                f"{fraction:<9.2%} {rep:<15} "
                + "".join(f"{vals.get(p, float('nan')):<{width}.4f}" for p in perts)
            )
    txt_path.write_text("\n".join(rows) + "\n")
    return csv_path, txt_path


def transfer_suite(
    train_data: Dataset,
    test_data: Dataset,
    base_config: TrainConfig,
    known_classes: tuple[int, ...] = (0, 1, 2, 3, 4),
    new_classes: tuple[int, ...] = (5, 6, 7, 8, 9),
    seed: int = 0,
    cache_dir: Path | str | None = None,
    log=None,
) -> TransferReport:
    """Train on known classes, freeze, fit new-class heads, compare."""
    import dataclasses

    known_train = train_data.subset(np.isin(train_data.labels, known_classes))
    config = dataclasses.replace(base_config, seed=seed).resolved()
    ckpt = cached_train(config, known_train, cache_dir, f"transfer_s{seed}", log=log)

    rng = np.random.default_rng(seed + 13)
    msgs, labels = speak_corpus(ckpt, known_train, rng)
    probe, _ = train_probe(
        msgs, labels, vocab_size=config.vocab_size, seed=seed, log=log)
    baseline = train_feature_baseline(
        known_train, config.net_config, epochs=30, seed=seed, log=log)
    return transfer_eval(
        ckpt, probe, baseline, train_data, test_data,
        known_classes=tuple(known_classes), new_classes=tuple(new_classes),
        seed=seed,
    )
