"""Score-only adversarial attack via coordinate-wise finite differences.

The attacker sees nothing but a scorer mapping image batches to class
score rows. Each iteration estimates a gradient on a random subset of
pixels from symmetric score differences, takes a signed step on the
perturbation, and projects back into the L-infinity ball and the pixel
box. The untargeted objective is the margin of the true class over the
best other class; the attack succeeds once that margin goes negative
(the argmax leaves the true class).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..game import Checkpoint
from ..nets import speak_many
from .classifiers import FeatureBaseline, MessageProbe, _pad_messages

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AttackResult:
    image: np.ndarray          # best adversarial candidate found
    success: bool
    queries: int
    objective_trace: tuple[float, ...]   # best margin so far, non-increasing


def _margin(scores: np.ndarray, label: int) -> np.ndarray:
    """scores (N, C) -> margin of `label` over the best other class."""
    others = np.delete(scores, label, axis=1)
    return scores[:, label] - others.max(axis=1)


def zoo_attack(
    scorer: Scorer,
    image: np.ndarray,
    label: int,
    eps_inf: float = 0.2,
    max_queries: int = 20000,
    rng: np.random.Generator | None = None,
    coords_per_iter: int = 32,
    step_size: float = 0.05,
    fd_h: float = 0.01,
) -> AttackResult:
    """Drive the true-class margin negative within a query budget.

    label is the column index of the true class in the scorer's output.
    The returned image always satisfies max|adv - image| <= eps_inf and
    stays inside [0, 1].
    """
    if rng is None:
        rng = np.random.default_rng()
    orig = np.array(image, dtype=np.float32, copy=True)
    flat_size = orig.size
    queries = 0

    scores = scorer(orig[None])
    queries += 1
    best_obj = float(_margin(scores, label)[0])
    trace = [best_obj]
    if int(scores[0].argmax()) != label:
        return AttackResult(orig, True, queries, tuple(trace))

    delta = np.zeros_like(orig)
    best_adv = orig.copy()
    while queries + 2 * coords_per_iter + 1 <= max_queries:
        current = np.clip(orig + delta, 0.0, 1.0)
        coords = rng.choice(flat_size, size=coords_per_iter, replace=False)
        probes = np.repeat(current[None], 2 * coords_per_iter, axis=0)
        flat = probes.reshape(2 * coords_per_iter, -1)
        for k, c in enumerate(coords):
            flat[2 * k, c] = min(1.0, flat[2 * k, c] + fd_h)
            flat[2 * k + 1, c] = max(0.0, flat[2 * k + 1, c] - fd_h)
        margins = _margin(scorer(probes), label)
        queries += 2 * coords_per_iter
        grad = (margins[0::2] - margins[1::2]) / (2.0 * fd_h)
        moved = grad != 0.0
        if moved.any():
            upd = np.zeros(flat_size, dtype=np.float32)
            upd[coords[moved]] = np.sign(grad[moved]).astype(np.float32) * step_size
            delta = np.clip(delta - upd.reshape(orig.shape), -eps_inf, eps_inf)
        candidate = np.clip(orig + delta, 0.0, 1.0)
        scores = scorer(candidate[None])
        queries += 1
        obj = float(_margin(scores, label)[0])
        if obj < best_obj:
            best_obj = obj
            best_adv = candidate
        trace.append(best_obj)
        if int(scores[0].argmax()) != label:
            return AttackResult(candidate, True, queries, tuple(trace))
    return AttackResult(best_adv, False, queries, tuple(trace))


def attack_accuracy(
    scorer: Scorer,
    images: np.ndarray,
    label_columns: np.ndarray,
    seed: int = 0,
    **budget,
) -> dict[str, float]:
    """Accuracy that survives the attack, with mean queries spent."""
    survived = 0
    total_queries = 0
    for i, (img, lab) in enumerate(zip(images, label_columns)):
        res = zoo_attack(
            scorer, img, int(lab), rng=np.random.default_rng(seed * 100003 + i),
            **budget,
        )
        survived += not res.success
        total_queries += res.queries
    n = len(images)
    return {
        "accuracy_under_attack": survived / n,
        "mean_queries": total_queries / n,
    }


def language_scorer(
    ckpt: Checkpoint, probe: MessageProbe, message_length: int
) -> tuple[Scorer, list[int]]:
    """Image batch -> probe logits via the speaker, at a fixed length."""
    ckpt.nets.cfg.lengths.validate(message_length)

    def scorer(images: np.ndarray) -> np.ndarray:
        msgs = speak_many(
            ckpt.nets.speaker, np.asarray(images, dtype=np.float32),
            [message_length] * len(images),
        )
        probe.eval()
        with torch.no_grad():
            padded, lengths = _pad_messages(msgs)
            return probe(padded, lengths).numpy()

    return scorer, list(probe.classes)


def feature_scorer(baseline: FeatureBaseline) -> tuple[Scorer, list[int]]:
    """Image batch -> baseline logits."""

    def scorer(images: np.ndarray) -> np.ndarray:
        baseline.eval()
        with torch.no_grad():
            block = torch.as_tensor(np.array(images, dtype=np.float32, copy=True))
            return baseline(block).numpy()

    return scorer, list(baseline.classes)
