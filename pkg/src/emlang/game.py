"""Loss functions, the self-supervised training loop, and checkpoints.

One optimization step consumes one game round: the speaker describes its
view of the target at a couple of requested lengths, the listener turns
each description into a query, and three objectives pull on the result.
Guessing is cross-entropy over query/candidate similarities, drawing is
mean SmoothL1 between the rendered image and the listener-side target,
and the consistency term penalizes spread between the queries for the
same image. The total is guess + lambda1 * draw + lambda2 * consistency,
verified on every step.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .corpus import Dataset, GameBatch, sample_game_batch
from .nets import Message, NetBundle, NetConfig, build_nets

CHECKPOINT_VERSION = 1

SCALE_PRESETS = {
    # batches per training epoch, evaluation batches, epochs
    "paper": (5000, 200, 40),
    "desk": (2000, 400, 15),
}


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite."""


class CheckpointFormatError(Exception):
    """Raised when a checkpoint directory is malformed or truncated."""


@dataclass(frozen=True)
class LossBreakdown:
    guess: float
    draw: float
    regularization: float
    lambda1: float
    lambda2: float
    total: float

    def __post_init__(self):
        parts = (self.guess, self.draw, self.regularization, self.total)
        if not all(math.isfinite(v) for v in parts):
            raise TrainingDiverged(f"non-finite loss component: {self}")
        if min(self.guess, self.draw, self.regularization) < 0:
            raise TrainingDiverged(f"negative loss component: {self}")
        expected = self.guess + self.lambda1 * self.draw + self.lambda2 * self.regularization
        if abs(self.total - expected) > 1e-6 * max(1.0, abs(expected)):
            raise TrainingDiverged(
                f"total {self.total} does not match weighted sum {expected}"
            )


def guess_loss(
    query: torch.Tensor, candidate_features: torch.Tensor, target_index: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy of the softmax over query/candidate dot products.

    Returns (loss, distribution); the distribution sums to one and the
    loss is -log of its target entry.
    """
    query = torch.as_tensor(query)
    candidate_features = torch.as_tensor(candidate_features)
    if candidate_features.ndim != 2 or candidate_features.shape[1] != query.shape[-1]:
        raise ValueError(
            f"feature shape {tuple(candidate_features.shape)} incompatible "
            f"with query of width {query.shape[-1]}"
        )
    if not (0 <= target_index < len(candidate_features)):
        raise ValueError(f"target_index {target_index} out of range")
    sims = candidate_features @ query.reshape(-1)
    logp = torch.log_softmax(sims, dim=-1)
    return -logp[target_index], torch.exp(logp)


def draw_loss(drawn: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel SmoothL1: 0.5 d^2 below |d| = 1, |d| - 0.5 above."""
    drawn = torch.as_tensor(drawn)
    target = torch.as_tensor(target, dtype=drawn.dtype)
    if drawn.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(drawn.shape)} vs {tuple(target.shape)}")
    diff = (drawn - target).abs()
    per_pixel = torch.where(diff < 1.0, 0.5 * diff * diff, diff - 0.5)
    return per_pixel.mean()


def reg_loss(queries: torch.Tensor) -> torch.Tensor:
    """Mean squared distance of each query from the elementwise mean query."""
    queries = torch.as_tensor(queries)
    if queries.ndim != 2 or len(queries) == 0:
        raise ValueError("need a nonempty (N, width) stack of queries")
    center = queries.mean(dim=0)
    return ((center - queries) ** 2).sum(dim=-1).mean()


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs, with per-scale defaults.

    epochs, batches_per_epoch, and eval_batches default to the values of
    the chosen scale preset when left unset.
    """

    vocab_size: int = 26
    min_len: int = 8
    max_len: int = 16
    batch_size: int = 5
    lambda1: float = 30.0
    lambda2: float = 10.0
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    n_lengths: int = 2
    seed: int = 0
    dataset: str = "digits"
    scale: str = "desk"
    epochs: int | None = None
    batches_per_epoch: int | None = None
    eval_batches: int | None = None
    enc_channels: tuple[int, ...] = (16, 32, 64, 128)
    feat_dim: int = 128
    embed_dim: int = 128
    speaker_hidden: int = 256
    listener_hidden: int = 256
    listener_layers: int = 2
    tau: float = 1.0
    image_size: int = 64
    enc_strides: tuple[int, ...] = (2, 2, 2, 2)
    drawer_channels: tuple[int, ...] = (64, 32, 16, 8)
    listener_embed_scale: float = 0.05

    def __post_init__(self):
        if self.scale not in SCALE_PRESETS:
            raise ValueError(f"unknown scale preset {self.scale!r}")
        if self.n_lengths < 1 or self.batch_size < 1:
            raise ValueError("n_lengths and batch_size must be positive")

    def resolved(self) -> "TrainConfig":
        """Fill scale-preset defaults into any unset schedule field."""
        batches, evals, epochs = SCALE_PRESETS[self.scale]
        return dataclasses.replace(
            self,
            epochs=self.epochs if self.epochs is not None else epochs,
            batches_per_epoch=self.batches_per_epoch or batches,
            eval_batches=self.eval_batches or evals,
        )

    @property
    def net_config(self) -> NetConfig:
        return NetConfig(
            vocab_size=self.vocab_size, min_len=self.min_len, max_len=self.max_len,
            image_size=self.image_size, enc_channels=tuple(self.enc_channels),
            enc_strides=tuple(self.enc_strides), feat_dim=self.feat_dim,
            embed_dim=self.embed_dim, speaker_hidden=self.speaker_hidden,
            listener_hidden=self.listener_hidden, listener_layers=self.listener_layers,
            tau=self.tau,
            drawer_channels=tuple(self.drawer_channels),
            listener_embed_scale=self.listener_embed_scale,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        kwargs = dict(data)
        for key in ("betas", "enc_channels", "enc_strides", "drawer_channels"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class StepResult:
    loss: torch.Tensor
    breakdown: LossBreakdown
    distribution: torch.Tensor
    messages: list[Message]
    lengths: list[int]


def total_loss(
    batch: GameBatch,
    nets: NetBundle,
    config: TrainConfig,
    rng: np.random.Generator,
    mode: str = "hard",
) -> StepResult:
    """Run one game round and combine the three objectives.

    The speaker describes the speaker view at n_lengths random lengths;
    the first length is the primary one whose query drives guessing and
    drawing, while all queries enter the consistency term. Drawing
    reconstructs the view the speaker described (the image-message-query
    round trip is an autoencoder), not the listener's candidate copy.
    """
    cfg = nets.cfg
    dtype = nets.speaker.head.weight.dtype
    lengths = [cfg.lengths.sample(rng) for _ in range(config.n_lengths)]
    view = torch.as_tensor(np.array(batch.speaker_view, copy=True), dtype=dtype)
    paths, _, _ = nets.speaker.emit(view, lengths, mode=mode)
    queries = nets.listener.queries_from_paths(paths, lengths)
    feats = nets.listener.candidate_encoder(
        torch.as_tensor(np.array(batch.candidates, copy=True), dtype=dtype)
    )
    l_guess, dist = guess_loss(queries[0], feats, batch.target_index)
    drawn = nets.drawer(queries[0].unsqueeze(0))[0]
    l_draw = draw_loss(drawn, view)
    l_reg = reg_loss(queries)
    loss = l_guess + config.lambda1 * l_draw + config.lambda2 * l_reg
    breakdown = LossBreakdown(
        guess=float(l_guess.detach()), draw=float(l_draw.detach()),
        regularization=float(l_reg.detach()),
        lambda1=config.lambda1, lambda2=config.lambda2,
        total=float(loss.detach()),
    )
    messages = [
        Message(tuple(int(i) for i in paths[k, :lengths[k]].argmax(dim=-1)))
        for k in range(len(lengths))
    ]
    return StepResult(loss, breakdown, dist.detach(), messages, lengths)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from base_lr at step 0 to zero at the final step."""
    if total_steps <= 1:
        return base_lr
    t = min(step, total_steps - 1)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * t / (total_steps - 1)))


@dataclass
class Checkpoint:
    """Trained parameters, their config, and the per-epoch metric history."""

    config: TrainConfig
    nets: NetBundle
    epoch: int
    history: list[dict] = field(default_factory=list)


def train(
    config: TrainConfig,
    data: Dataset,
    sink: Path | str | None = None,
    log: Callable[[str], None] | None = None,
) -> Checkpoint:
    """Optimize the three nets with AdamW under a per-step cosine schedule.

    Deterministic for a fixed config: batch sampling, length draws, and
    parameter init all derive from config.seed. Writes metrics.ndjson
    and a checkpoint directory under sink when given.

    Each epoch record carries two accuracies: train_guess_acc is the
    running mean over that epoch's optimization steps, eval_guess_acc
    re-measures the finished epoch over eval_batches fresh batches.
    """
    config = config.resolved()
    torch.manual_seed(config.seed * 2654435761 % (2**31))
    rng = np.random.default_rng(config.seed)
    nets = build_nets(config.net_config, config.seed)
    nets.train()
    params = list(nets.parameters())
    opt = torch.optim.AdamW(
        params, lr=config.lr, betas=config.betas,
        weight_decay=config.weight_decay, foreach=True,
    )
    total_steps = config.epochs * config.batches_per_epoch
    sink_dir = Path(sink) if sink is not None else None
    if sink_dir is not None:
        sink_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = sink_dir / "metrics.ndjson"
        metrics_path.write_text("")
    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        hits = 0
        sums = {"guess": 0.0, "draw": 0.0, "regularization": 0.0, "total": 0.0}
        lr_now = config.lr
        for b in range(config.batches_per_epoch):
            batch = sample_game_batch(data, config.batch_size, rng)
            lr_now = cosine_lr(step, total_steps, config.lr)
            for group in opt.param_groups:
                group["lr"] = lr_now
            opt.zero_grad()
            try:
                result = total_loss(batch, nets, config, rng)
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"epoch {epoch} batch {b}: {exc}"
                ) from exc
            result.loss.backward()
            opt.step()
            step += 1
            hits += int(result.distribution.argmax()) == batch.target_index
            bd = result.breakdown
            sums["guess"] += bd.guess
            sums["draw"] += bd.draw
            sums["regularization"] += bd.regularization
            sums["total"] += bd.total
            del result
        # Fresh end-of-epoch measurement in eval mode. The running mean
        # above lags it whenever accuracy is still climbing, so both go
        # into the record. A dedicated generator keeps the training
        # stream byte-identical whether or not eval_batches changes.
        eval_rng = np.random.default_rng((config.seed, 8191 + epoch))
        nets.eval()
        eval_hits = 0
        with torch.no_grad():
            for _ in range(config.eval_batches):
                probe = sample_game_batch(data, config.batch_size, eval_rng)
                res = total_loss(probe, nets, config, eval_rng)
                eval_hits += int(res.distribution.argmax()) == probe.target_index
        nets.train()
        n = config.batches_per_epoch
        record = {
            "epoch": epoch,
            "train_guess_acc": hits / n,
            "eval_guess_acc": eval_hits / config.eval_batches,
            "guess": sums["guess"] / n,
            "draw": sums["draw"] / n,
            "regularization": sums["regularization"] / n,
            "total": sums["total"] / n,
            "lr": lr_now,
        }
        history.append(record)
        if log is not None:
            log(
                f"epoch {epoch}: guess_acc={record['train_guess_acc']:.3f} "
                f"eval_acc={record['eval_guess_acc']:.3f} "
                f"total={record['total']:.4f} lr={record['lr']:.2e}"
            )
        if sink_dir is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(
                Checkpoint(config, nets, epoch + 1, history), sink_dir / "checkpoint"
            )
    ckpt = Checkpoint(config, nets, config.epochs, history)
    if sink_dir is not None:
        save_checkpoint(ckpt, sink_dir / "checkpoint")
    nets.eval()
    return ckpt


def save_checkpoint(ckpt: Checkpoint, directory: Path | str) -> None:
    """Write meta.json plus tensors.bin (concatenated little-endian f32)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in ckpt.nets.named_tensors().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        blob = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "manifest": manifest,
        "total_bytes": offset,
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":"))
    )
    (directory / "tensors.bin").write_bytes(b"".join(blobs))


def load_checkpoint(directory: Path | str) -> Checkpoint:
    """Rebuild a Checkpoint; inference after reload is bit-identical."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    bin_path = directory / "tensors.bin"
    if not meta_path.exists() or not bin_path.exists():
        raise CheckpointFormatError(f"{directory} is not a checkpoint directory")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"unreadable meta.json: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint version {meta.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    config = TrainConfig.from_dict(meta["config"])
    raw = bin_path.read_bytes()
    if len(raw) != meta["total_bytes"]:
        raise CheckpointFormatError(
            f"tensors.bin holds {len(raw)} bytes, manifest promises {meta['total_bytes']}"
        )
    nets = build_nets(config.net_config, seed=0)
    expected = nets.named_tensors()
    if set(e["name"] for e in meta["manifest"]) != set(expected):
        raise CheckpointFormatError("tensor manifest does not match this architecture")
    loaded: dict[str, dict[str, torch.Tensor]] = {"speaker": {}, "listener": {}, "drawer": {}}
    for entry in meta["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise CheckpointFormatError(f"tensor {entry['name']} extends past blob end")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        prefix, _, rest = entry["name"].partition(".")
        loaded[prefix][rest] = torch.from_numpy(arr.copy())
    for prefix, module in nets.modules().items():
        module.load_state_dict(loaded[prefix])
    nets.eval()
    return Checkpoint(config, nets, meta["epoch"], list(meta["history"]))
