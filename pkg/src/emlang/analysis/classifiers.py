"""Evaluation models: guess accuracy, the message-only probe classifier,
the continuous-feature baseline, and transfer to unseen categories.

The probe answers "how much class semantics do the symbols alone carry":
it never sees pixels, only symbol ids. The feature baseline is the
conventional alternative: the same conv topology as the speaker's
encoder, trained supervised, classifying its pooled features.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..corpus import Dataset, sample_game_batch
from ..game import Checkpoint, TrainConfig, total_loss
from ..nets import ConvEncoder, Message, NetConfig, build_nets, speak_many


class DegenerateTaskError(ValueError):
    """A classification task was posed with fewer than two classes."""


def guess_accuracy(
    ckpt: Checkpoint, data: Dataset, n_batches: int, rng: np.random.Generator
) -> float:
    """Fraction of game rounds whose guess distribution peaks on the target."""
    if n_batches < 1:
        raise ValueError("n_batches must be positive")
    if ckpt.config.batch_size == 1:
        return 1.0
    nets = ckpt.nets
    nets.eval()
    cfg = ckpt.config
    hits = 0
    with torch.no_grad():
        for _ in range(n_batches):
            batch = sample_game_batch(data, cfg.batch_size, rng)
            res = total_loss(batch, nets, cfg, rng)
            hits += int(res.distribution.argmax()) == batch.target_index
    return hits / n_batches


def speak_corpus(
    ckpt: Checkpoint, data: Dataset, rng: np.random.Generator
) -> tuple[list[Message], np.ndarray]:
    """One message per image at a length sampled from the trained range."""
    lengths = [ckpt.nets.cfg.lengths.sample(rng) for _ in range(len(data))]
    messages = speak_many(ckpt.nets.speaker, data.images, lengths)
    if data.labels is None:
        raise DegenerateTaskError("corpus speaking for probes needs labels")
    return messages, np.asarray(data.labels)


class MessageProbe(nn.Module):
    """Symbol-only classifier: embedding, 2-layer biLSTM, linear head.

    The recurrent encoder is the transferable representation; `encode`
    exposes it so new class heads can be fitted without touching it.
    """

    def __init__(self, vocab_size: int, classes: list[int],
                 embed_dim: int = 128, hidden: int = 128, layers: int = 2):
        super().__init__()
        if len(classes) < 2:
            raise DegenerateTaskError("probe needs at least two classes")
        self.vocab_size = vocab_size
        self.classes = list(classes)
        self.embed = nn.Embedding(vocab_size, embed_dim)
        self.rnn = nn.LSTM(embed_dim, hidden, num_layers=layers, bidirectional=True)
        self.head = nn.Linear(2 * hidden, len(classes))

    def encode(self, padded: torch.Tensor, lengths: list[int]) -> torch.Tensor:
        seq = self.embed(padded)                      # (B, T, E)
        packed = nn.utils.rnn.pack_padded_sequence(
            seq.transpose(0, 1), torch.tensor(lengths), enforce_sorted=False
        )
        _, (h_n, _) = self.rnn(packed)
        return torch.cat([h_n[-2], h_n[-1]], dim=-1)  # (B, 2H)

    def forward(self, padded: torch.Tensor, lengths: list[int]) -> torch.Tensor:
        return self.head(self.encode(padded, lengths))


def _pad_messages(messages: list[Message]) -> tuple[torch.Tensor, list[int]]:
    lengths = [len(m) for m in messages]
    t_max = max(lengths)
    padded = torch.zeros(len(messages), t_max, dtype=torch.long)
    for i, m in enumerate(messages):
        padded[i, : len(m)] = torch.tensor(m.symbols, dtype=torch.long)
    return padded, lengths


def _class_index(labels: np.ndarray, classes: list[int]) -> torch.Tensor:
    lookup = {c: i for i, c in enumerate(classes)}
    return torch.tensor([lookup[int(l)] for l in labels], dtype=torch.long)


def probe_predict(probe: MessageProbe, messages: list[Message]) -> np.ndarray:
    """Predicted original class ids, batched, no gradients."""
    probe.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(messages), 256):
            block = messages[lo:lo + 256]
            padded, lengths = _pad_messages(block)
            logits = probe(padded, lengths)
            out.append(logits.argmax(dim=-1).numpy())
    idx = np.concatenate(out)
    return np.asarray(probe.classes)[idx]


def probe_accuracy(probe: MessageProbe, messages: list[Message], labels) -> float:
    return float(np.mean(probe_predict(probe, messages) == np.asarray(labels)))


def train_probe(
    train_messages: list[Message],
    train_labels,
    test_messages: list[Message] | None = None,
    test_labels=None,
    vocab_size: int = 26,
    epochs: int = 12,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    log=None,
) -> tuple[MessageProbe, dict[str, float]]:
    """Fit the probe with cross-entropy on symbols only; report both splits."""
    train_labels = np.asarray(train_labels)
    if len(train_messages) != len(train_labels):
        raise ValueError("messages and labels must align")
    classes = sorted(int(c) for c in np.unique(train_labels))
    if len(classes) < 2:
        raise DegenerateTaskError("training labels contain a single class")
    torch.manual_seed(seed)
    probe = MessageProbe(vocab_size, classes)
    opt = torch.optim.AdamW(probe.parameters(), lr=lr)
    padded, lengths = _pad_messages(train_messages)
    targets = _class_index(train_labels, classes)
    order_rng = np.random.default_rng(seed)
    n = len(train_messages)
    probe.train()
    for epoch in range(epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            opt.zero_grad()
            logits = probe(padded[idx], [lengths[i] for i in idx])
            loss = F.cross_entropy(logits, targets[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if log is not None:
            log(f"probe epoch {epoch}: loss={total / n:.4f}")
    stats = {"train_acc": probe_accuracy(probe, train_messages, train_labels)}
    if test_messages is not None:
        stats["test_acc"] = probe_accuracy(
            probe, test_messages, np.asarray(test_labels))
    probe.eval()
    return probe, stats


class FeatureBaseline(nn.Module):
    """Speaker-topology conv encoder with a linear class head on its pooled
    features; the pixels-in, logits-out counterpart to the probe."""

    def __init__(self, net_cfg: NetConfig, classes: list[int]):
        super().__init__()
        if len(classes) < 2:
            raise DegenerateTaskError("baseline needs at least two classes")
        self.net_cfg = net_cfg
        self.classes = list(classes)
        self.encoder = ConvEncoder(net_cfg, norm="batch")
        self.head = nn.Linear(net_cfg.feat_dim, len(classes))

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


def feature_predict(model: FeatureBaseline, images: np.ndarray) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(images), 256):
            block = torch.as_tensor(np.array(images[lo:lo + 256], copy=True))
            out.append(model(block).argmax(dim=-1).numpy())
    idx = np.concatenate(out)
    return np.asarray(model.classes)[idx]


def feature_accuracy(model: FeatureBaseline, data: Dataset) -> float:
    return float(np.mean(feature_predict(model, data.images) == data.labels))


def train_feature_baseline(
    data: Dataset,
    net_cfg: NetConfig,
    epochs: int = 8,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    log=None,
) -> FeatureBaseline:
    """Supervised cross-entropy training of the conv encoder plus head."""
    if data.labels is None:
        raise DegenerateTaskError("feature baseline needs labels")
    classes = sorted(int(c) for c in np.unique(data.labels))
    torch.manual_seed(seed)
    model = FeatureBaseline(net_cfg, classes)
    # reuse the game's seeded init so both pipelines start from the
    # same family of weights
    from ..nets import init_parameters
    init_parameters(model, torch.Generator().manual_seed(seed))
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    images = torch.as_tensor(np.array(data.images, copy=True))
    targets = _class_index(np.asarray(data.labels), classes)
    order_rng = np.random.default_rng(seed)
    n = len(data)
    model.train()
    for epoch in range(epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            opt.zero_grad()
            logits = model(images[idx])
            loss = F.cross_entropy(logits, targets[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if log is not None:
            log(f"baseline epoch {epoch}: loss={total / n:.4f}")
    model.eval()
    return model


def fit_linear_head(
    reps: torch.Tensor,
    labels,
    classes: list[int],
    epochs: int = 60,
    lr: float = 1e-2,
    seed: int = 0,
) -> nn.Linear:
    """Train only a linear head on precomputed representation vectors."""
    if len(classes) < 2:
        raise DegenerateTaskError("head fitting needs at least two classes")
    torch.manual_seed(seed)
    head = nn.Linear(reps.shape[1], len(classes))
    opt = torch.optim.AdamW(head.parameters(), lr=lr)
    targets = _class_index(np.asarray(labels), classes)
    reps = reps.detach()
    for _ in range(epochs):
        opt.zero_grad()
        loss = F.cross_entropy(head(reps), targets)
        loss.backward()
        opt.step()
    head.eval()
    return head


def _module_bytes(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(t.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class TransferReport:
    language_known: float
    language_new: float
    feature_known: float
    feature_new: float
    language_backbone_before: str
    language_backbone_after: str
    feature_backbone_before: str
    feature_backbone_after: str

    @property
    def backbones_frozen(self) -> bool:
        return (
            self.language_backbone_before == self.language_backbone_after
            and self.feature_backbone_before == self.feature_backbone_after
        )


def transfer_eval(
    ckpt: Checkpoint,
    probe: MessageProbe,
    baseline: FeatureBaseline,
    train_data: Dataset,
    test_data: Dataset,
    known_classes: tuple[int, ...],
    new_classes: tuple[int, ...],
    seed: int = 0,
    head_epochs: int = 60,
) -> TransferReport:
    """Freeze both backbones, fit new-class linear heads, report all splits.

    ckpt/probe/baseline must have been trained on known_classes only; the
    new-class heads see precomputed representations, so backbone bytes
    cannot change.
    """
    known_test = test_data.subset(np.isin(test_data.labels, known_classes))
    new_train = train_data.subset(np.isin(train_data.labels, new_classes))
    new_test = test_data.subset(np.isin(test_data.labels, new_classes))

    lang_before = _module_bytes(probe) + _module_bytes(ckpt.nets.speaker)
    feat_before = _module_bytes(baseline.encoder)

    rng = np.random.default_rng(seed)
    known_msgs, known_labels = speak_corpus(ckpt, known_test, rng)
    language_known = probe_accuracy(probe, known_msgs, known_labels)
    feature_known = feature_accuracy(baseline, known_test)

    new_train_msgs, new_train_labels = speak_corpus(ckpt, new_train, rng)
    new_test_msgs, new_test_labels = speak_corpus(ckpt, new_test, rng)
    classes = sorted(int(c) for c in new_classes)

    probe.eval()
    baseline.eval()
    with torch.no_grad():
        padded, lengths = _pad_messages(new_train_msgs)
        lang_train_reps = probe.encode(padded, lengths)
        padded, lengths = _pad_messages(new_test_msgs)
        lang_test_reps = probe.encode(padded, lengths)
        feat_train_reps = baseline.features(
            torch.as_tensor(np.array(new_train.images, copy=True)))
        feat_test_reps = baseline.features(
            torch.as_tensor(np.array(new_test.images, copy=True)))

    lang_head = fit_linear_head(
        lang_train_reps, new_train_labels, classes, epochs=head_epochs, seed=seed)
    feat_head = fit_linear_head(
        feat_train_reps, new_train.labels, classes, epochs=head_epochs, seed=seed)

    with torch.no_grad():
        lang_pred = np.asarray(classes)[lang_head(lang_test_reps).argmax(dim=-1).numpy()]
        feat_pred = np.asarray(classes)[feat_head(feat_test_reps).argmax(dim=-1).numpy()]
    language_new = float(np.mean(lang_pred == new_test_labels))
    feature_new = float(np.mean(feat_pred == np.asarray(new_test.labels)))

    return TransferReport(
        language_known=language_known,
        language_new=language_new,
        feature_known=feature_known,
        feature_new=feature_new,
        language_backbone_before=lang_before,
        language_backbone_after=_module_bytes(probe) + _module_bytes(ckpt.nets.speaker),
        feature_backbone_before=feat_before,
        feature_backbone_after=_module_bytes(baseline.encoder),
    )
