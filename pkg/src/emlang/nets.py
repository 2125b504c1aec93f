"""Speaker, listener, and drawer networks plus the discrete-symbol bridge.

The speaker turns an image into a symbol sequence of a requested length,
one greedy argmax per step. Gradients cross the discrete boundary through
a straight-through estimator: the forward value is the hard one-hot, the
backward path is the softmax relaxation. In "relaxed" mode the softmax
itself flows forward, which makes the whole game differentiable for
gradient verification.

Networks are ordinary torch modules; inference entry points (speak,
listen, draw, encode_candidates) switch to eval mode and run without
gradients, so a shared parameter set is safe for concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class VocabularyError(ValueError):
    """A symbol id or character falls outside the vocabulary."""


class LengthError(ValueError):
    """A requested message length falls outside the configured range."""


_DIGITS = "0123456789"
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class Vocabulary:
    """Symbol inventory with a printable display alphabet.

    Sizes up to 10 display as digits (so binary is 0/1), sizes 11..26 as
    uppercase letters, larger sizes as digits followed by letters.
    """

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise VocabularyError("vocabulary needs at least 2 symbols")
        if self.size > 36:
            raise VocabularyError("display alphabet supports at most 36 symbols")

    @property
    def alphabet(self) -> str:
        if self.size <= 10:
            return _DIGITS[: self.size]
        if self.size <= 26:
            return _LETTERS[: self.size]
        return (_DIGITS + _LETTERS)[: self.size]

    def decode(self, symbols) -> str:
        alpha = self.alphabet
        for s in symbols:
            if not (0 <= int(s) < self.size):
                raise VocabularyError(f"symbol id {s} outside vocabulary of {self.size}")
        return "".join(alpha[int(s)] for s in symbols)

    def encode(self, text: str) -> "Message":
        alpha = self.alphabet
        ids = []
        for ch in text:
            pos = alpha.find(ch)
            if pos < 0:
                raise VocabularyError(f"character {ch!r} not in display alphabet {alpha!r}")
            ids.append(pos)
        return Message(tuple(ids))


@dataclass(frozen=True)
class LengthRange:
    min_len: int = 8
    max_len: int = 16

    def __post_init__(self):
        if not (1 <= self.min_len <= self.max_len):
            raise LengthError(f"invalid length range {self.min_len}..{self.max_len}")

    def validate(self, r: int) -> int:
        if not (self.min_len <= r <= self.max_len):
            raise LengthError(f"length {r} outside range {self.min_len}..{self.max_len}")
        return r

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.min_len, self.max_len + 1))

    def __iter__(self):
        return iter(range(self.min_len, self.max_len + 1))


@dataclass(frozen=True)
class Message:
    """A variable-length sequence of discrete symbol ids."""

    symbols: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)

    def replace(self, position: int, symbol: int) -> "Message":
        if not (0 <= position < len(self.symbols)):
            raise IndexError(f"position {position} outside message of length {len(self)}")
        edited = list(self.symbols)
        edited[position] = int(symbol)
        return Message(tuple(edited))


@dataclass(frozen=True)
class NetConfig:
    """Shapes shared by all three networks.

    The defaults follow the reference dimensions (symbol embedding 128,
    decoder hidden 256, two bidirectional listener layers, query width
    128); encoder channels are a narrow variant of the nominal widths so
    the game trains in reasonable time on a plain CPU. Stage count and
    total downsampling are preserved regardless of width.
    """

    vocab_size: int = 26
    min_len: int = 8
    max_len: int = 16
    image_size: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 64, 128)
    enc_strides: tuple[int, ...] = (2, 2, 2, 2)
    feat_dim: int = 128
    embed_dim: int = 128
    speaker_hidden: int = 256
    listener_hidden: int = 256
    listener_layers: int = 2
    tau: float = 1.0
    drawer_channels: tuple[int, ...] = (64, 32, 16, 8)
    listener_embed_scale: float = 0.05

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    @property
    def lengths(self) -> LengthRange:
        return LengthRange(self.min_len, self.max_len)

    @classmethod
    def tiny(cls) -> "NetConfig":
        """A width-8 model on 8x8 images, small enough for finite differences."""
        return cls(
            vocab_size=4, min_len=2, max_len=3, image_size=8,
            enc_channels=(8, 8, 8, 8), enc_strides=(2, 2, 1, 1),
            feat_dim=8, embed_dim=8, speaker_hidden=8, listener_hidden=8,
            listener_layers=2, drawer_channels=(8, 8),
        )


def discretize_straight_through(
    logits: torch.Tensor, tau: float = 1.0
) -> tuple[torch.Tensor, torch.Tensor]:
    """One-hot of argmax with a straight-through softmax gradient.

    Returns (one_hot, soft): the forward value of one_hot is exactly the
    argmax indicator (ties break to the lowest index), while its backward
    Jacobian equals that of softmax(logits / tau). soft is the relaxed
    distribution itself.
    """
    soft = F.softmax(logits / tau, dim=-1)
    index = torch.argmax(logits, dim=-1, keepdim=True)
    hard = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    # grouping matters: (soft - soft.detach()) is exactly zero elementwise,
    # so the forward value is the unperturbed one-hot
    return hard + (soft - soft.detach()), soft


class _InstanceNorm(nn.Module):
    """Per-image, per-channel normalization over spatial positions.

    The same function as batch normalization applied to a one-image
    batch (biased variance, same eps), but independent of batching, so
    grouped forwards match one-image forwards exactly. Unlike the
    framework's instance norm it accepts a 1x1 spatial map, which
    normalizes to zero and passes the bias through.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        var, mean = torch.var_mean(x, dim=(2, 3), keepdim=True, unbiased=False)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


def _norm2d(kind: str, channels: int) -> nn.Module:
    """Channel normalization with explicitly chosen statistics.

    "instance" normalizes each image by itself, so results never depend
    on what else shares the forward pass. "set" normalizes across the
    batch with no running averages: the batch IS the reference set, in
    training and at inference alike. "batch" is the classic flavor that
    accumulates running statistics for inference.
    """
    if kind == "instance":
        return _InstanceNorm(channels)
    if kind == "set":
        return nn.BatchNorm2d(channels, track_running_stats=False)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    raise ValueError(f"unknown norm kind {kind!r}")


class _ResidualStage(nn.Module):
    """Strided downsample conv followed by one residual block."""

    def __init__(self, cin: int, cout: int, stride: int, norm: str):
        super().__init__()
        self.down = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = _norm2d(norm, cout)
        self.conv = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = _norm2d(norm, cout)

    def forward(self, x):
        x = F.gelu(self.norm1(self.down(x)))
        return F.gelu(x + self.norm2(self.conv(x)))


class ConvEncoder(nn.Module):
    """Four-stage residual image encoder pooled to a flat feature vector.

    The norm kind is load-bearing, not a style choice. The listener's
    candidate encoder uses "set": normalizing each channel across the
    candidates stops their features from collapsing onto a shared
    vector (which would zero the guessing gradient and freeze the game
    at chance), and skipping running averages keeps inference identical
    to the trained behavior. The speaker uses "instance" because it
    only ever describes one image; per-image statistics make batched
    message generation match the one-image path bit for bit. Supervised
    classifiers built on this encoder use "batch".
    """

    def __init__(self, cfg: NetConfig, norm: str = "instance"):
        super().__init__()
        chans = [1, *cfg.enc_channels]
        self.stages = nn.ModuleList(
            _ResidualStage(chans[i], chans[i + 1], cfg.enc_strides[i], norm)
            for i in range(len(cfg.enc_channels))
        )
        self.proj = nn.Conv2d(cfg.enc_channels[-1], cfg.feat_dim, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images.unsqueeze(1) if images.ndim == 3 else images
        for stage in self.stages:
            x = stage(x)
        return self.proj(x).mean(dim=(2, 3))


class SpeakerNet(nn.Module):
    """Image encoder plus an autoregressive symbol decoder.

    The decoder sees the image feature at every step, concatenated with
    the embedding of the previously emitted symbol. The requested length
    conditions it through a per-length embedding added to the initial
    hidden state; decoding then runs exactly that many steps.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConvEncoder(cfg, norm="instance")
        self.init_hidden = nn.Linear(cfg.feat_dim, cfg.speaker_hidden)
        self.length_embed = nn.Embedding(cfg.max_len - cfg.min_len + 1, cfg.speaker_hidden)
        self.symbol_embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.start_embed = nn.Parameter(torch.zeros(cfg.embed_dim))
        self.cell = nn.LSTMCell(cfg.embed_dim + cfg.feat_dim, cfg.speaker_hidden)
        self.head = nn.Linear(cfg.speaker_hidden, cfg.vocab_size)

    def _decode(
        self, feat: torch.Tensor, lengths: list[int], mode: str
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Run the symbol loop for a (rows, feat_dim) stack of features."""
        if mode not in ("hard", "relaxed"):
            raise ValueError(f"unknown emission mode {mode!r}")
        for r in lengths:
            self.cfg.lengths.validate(r)
        n = len(lengths)
        r_max = max(lengths)
        length_ids = torch.tensor([r - self.cfg.min_len for r in lengths])
        h = torch.tanh(self.init_hidden(feat)) + self.length_embed(length_ids)
        c = torch.zeros_like(h)
        prev = self.start_embed.to(feat.dtype).expand(n, -1)
        mask = torch.zeros(n, r_max, dtype=feat.dtype)
        for i, r in enumerate(lengths):
            mask[i, :r] = 1.0
        paths, softs = [], []
        for t in range(r_max):
            h, c = self.cell(torch.cat([prev, feat], dim=-1), (h, c))
            logits = self.head(h)
            hot, soft = discretize_straight_through(logits, self.cfg.tau)
            step = soft if mode == "relaxed" else hot
            step = step * mask[:, t:t + 1]
            paths.append(step)
            softs.append(soft * mask[:, t:t + 1])
            prev = step @ self.symbol_embed.weight
        return torch.stack(paths, dim=1), torch.stack(softs, dim=1), mask

    def emit(
        self, image: torch.Tensor, lengths: list[int], mode: str = "hard"
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Describe one image at several lengths in a single batched pass.

        Returns (paths, softs, mask): paths is (L, r_max, V) holding the
        symbol vectors the listener consumes (straight-through one-hots in
        hard mode, softmax rows in relaxed mode), softs the per-step
        distributions, and mask marks steps within each requested length.
        Steps past a sequence's length are zeroed.
        """
        feat = self.encoder(image.reshape(1, 1, *image.shape[-2:]))
        return self._decode(feat.expand(len(lengths), -1), lengths, mode)

    def emit_many(
        self, images: torch.Tensor, lengths: list[int], mode: str = "hard"
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Describe a (B, H, W) stack of images, one length per image."""
        if len(images) != len(lengths):
            raise ValueError(f"{len(images)} images but {len(lengths)} lengths")
        feat = self.encoder(images.unsqueeze(1))
        return self._decode(feat, lengths, mode)


def speak(
    net: SpeakerNet, image: np.ndarray, r: int, mode: str = "hard"
) -> tuple[Message, np.ndarray]:
    """Emit a length-r message for an image; pure in (params, image, r).

    Returns the Message and the per-step symbol distributions (r, V).
    """
    net.cfg.lengths.validate(r)
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            dtype = net.head.weight.dtype
            img = torch.as_tensor(np.array(image, copy=True), dtype=dtype)
            paths, softs, _ = net.emit(img, [r], mode=mode)
        ids = tuple(int(i) for i in paths[0].argmax(dim=-1))
        return Message(ids), softs[0].numpy()
    finally:
        net.train(was_training)


def speak_many(
    net: SpeakerNet, images: np.ndarray, lengths: list[int], chunk: int = 128
) -> list[Message]:
    """Emit one message per image (lengths aligned with images)."""
    if len(images) != len(lengths):
        raise ValueError(f"{len(images)} images but {len(lengths)} lengths")
    was_training = net.training
    net.eval()
    out: list[Message] = []
    try:
        dtype = net.head.weight.dtype
        with torch.no_grad():
            for lo in range(0, len(images), chunk):
                hi = min(lo + chunk, len(images))
                block = torch.as_tensor(
                    np.array(images[lo:hi], copy=True), dtype=dtype
                )
                ls = [int(r) for r in lengths[lo:hi]]
                paths, _, _ = net.emit_many(block, ls, mode="hard")
                ids = paths.argmax(dim=-1)
                for row, r in zip(ids, ls):
                    out.append(Message(tuple(int(s) for s in row[:r])))
    finally:
        net.train(was_training)
    return out


class ListenerNet(nn.Module):
    """Symbol-sequence encoder producing a fixed-width query, plus the
    candidate image encoder it is matched against."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.symbol_embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.rnn = nn.LSTM(
            cfg.embed_dim, cfg.listener_hidden,
            num_layers=cfg.listener_layers, bidirectional=True,
        )
        self.query_proj = nn.Linear(2 * cfg.listener_hidden, cfg.feat_dim)
        self.candidate_encoder = ConvEncoder(cfg, norm="set")

    def queries_from_paths(self, paths: torch.Tensor, lengths: list[int]) -> torch.Tensor:
        """Decode (L, r_max, V) symbol vectors into (L, feat_dim) queries."""
        seq = paths @ self.symbol_embed.weight          # (L, r_max, E)
        packed = nn.utils.rnn.pack_padded_sequence(
            seq.transpose(0, 1), torch.tensor(lengths), enforce_sorted=False
        )
        _, (h_n, _) = self.rnn(packed)
        final = torch.cat([h_n[-2], h_n[-1]], dim=-1)   # last layer, both directions
        return self.query_proj(final)


def _message_to_onehots(msg: Message, vocab_size: int, dtype: torch.dtype) -> torch.Tensor:
    for s in msg.symbols:
        if not (0 <= s < vocab_size):
            raise VocabularyError(f"symbol id {s} outside vocabulary of {vocab_size}")
    return F.one_hot(torch.tensor(msg.symbols), vocab_size).to(dtype)


def listen(net: ListenerNet, msg: Message) -> np.ndarray:
    """Decode a message into its query vector; pure in (params, msg)."""
    if len(msg) == 0:
        raise VocabularyError("cannot decode an empty message")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            hots = _message_to_onehots(msg, net.cfg.vocab_size, net.query_proj.weight.dtype)
            q = net.queries_from_paths(hots.unsqueeze(0), [len(msg)])
        return q[0].numpy()
    finally:
        net.train(was_training)


def encode_candidates(net: ListenerNet, images: np.ndarray) -> np.ndarray:
    """Encode candidate images to feature vectors, order preserved."""
    if len(images) == 0:
        raise ValueError("candidate list must be nonempty")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            dtype = net.query_proj.weight.dtype
            batch = torch.as_tensor(np.array(images, copy=True), dtype=dtype)
            return net.candidate_encoder(batch).numpy()
    finally:
        net.train(was_training)


class DrawerNet(nn.Module):
    """Transposed-convolution decoder from a query to a bounded image."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.drawer_channels
        self.base = cfg.image_size // 2 ** len(chans)
        if self.base < 1:
            raise ValueError("drawer has more upsampling stages than the image allows")
        self.fc = nn.Linear(cfg.feat_dim, chans[0] * self.base * self.base)
        self.ups = nn.ModuleList()
        for i in range(len(chans)):
            cout = chans[i + 1] if i + 1 < len(chans) else 1
            self.ups.append(nn.ConvTranspose2d(chans[i], cout, 4, stride=2, padding=1))

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.fc(q)).view(-1, self.cfg.drawer_channels[0], self.base, self.base)
        for i, up in enumerate(self.ups):
            x = up(x)
            if i + 1 < len(self.ups):
                x = F.gelu(x)
        return torch.sigmoid(x).squeeze(1)   # sigmoid keeps every pixel in (0, 1)


def draw(net: DrawerNet, query: np.ndarray) -> np.ndarray:
    """Render a query into a [0, 1] grayscale image."""
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            q = torch.as_tensor(np.array(query, copy=True), dtype=net.fc.weight.dtype).reshape(1, -1)
            return net(q)[0].numpy()
    finally:
        net.train(was_training)


@dataclass
class NetBundle:
    """The three trainable parties plus their shared shape config."""

    cfg: NetConfig
    speaker: SpeakerNet
    listener: ListenerNet
    drawer: DrawerNet

    def modules(self) -> dict[str, nn.Module]:
        return {"speaker": self.speaker, "listener": self.listener, "drawer": self.drawer}

    def parameters(self):
        for m in self.modules().values():
            yield from m.parameters()

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, m in self.modules().items():
            for name, p in m.state_dict().items():
                out[f"{prefix}.{name}"] = p
        return out

    def train(self, flag: bool = True):
        for m in self.modules().values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def to_dtype(self, dtype: torch.dtype) -> "NetBundle":
        for m in self.modules().values():
            m.to(dtype)
        return self


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded re-init reproducing each layer type's framework default.

    Embeddings draw N(0, 1); recurrent cells draw all parameters from
    U(+-1/sqrt(hidden)); convolutions and linear maps draw weights and
    biases from U(+-1/sqrt(fan_in)); normalization layers reset to the
    identity. Keeping the default magnitudes matters: shrinking the
    embeddings starves the recurrent stacks of signal at the start of
    training and the game never leaves chance.
    """
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Embedding):
                m.weight.normal_(0.0, 1.0, generator=generator)
            elif isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
                fan_in = m.weight.numel() // m.weight.shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(m, (nn.LSTM, nn.LSTMCell)):
                bound = 1.0 / math.sqrt(m.hidden_size)
                for p in m.parameters():
                    p.uniform_(-bound, bound, generator=generator)
            elif isinstance(m, (nn.GroupNorm, nn.BatchNorm2d, _InstanceNorm)):
                m.weight.fill_(1.0)
                m.bias.zero_()
                if isinstance(m, nn.BatchNorm2d) and m.track_running_stats:
                    m.reset_running_stats()
        for name, p in module.named_parameters(recurse=False):
            if name == "start_embed":
                p.normal_(0.0, 1.0, generator=generator)


def build_nets(cfg: NetConfig, seed: int) -> NetBundle:
    """Construct and seed the three networks, ready for joint training.

    After the generic per-layer init, the listener's symbol embedding is
    shrunk by cfg.listener_embed_scale, so queries start nearly blind to
    messages. The length-consistency penalty then starts near silent
    instead of fighting the random code from the first step: two random
    descriptions of one image disagree, and the cheapest fix the penalty
    can find is a listener that ignores messages entirely (constant
    queries, chance accuracy, a dead game). The guessing and drawing
    losses regrow the embedding from there, only along directions that
    already carry information about the image. The scale is small but
    nonzero, and everything downstream of the embedding keeps its full
    init, so every gradient path into the speaker stays open while the
    embedding regrows.
    """
    gen = torch.Generator().manual_seed(seed)
    bundle = NetBundle(cfg, SpeakerNet(cfg), ListenerNet(cfg), DrawerNet(cfg))
    for m in bundle.modules().values():
        init_parameters(m, gen)
    with torch.no_grad():
        bundle.listener.symbol_embed.weight.mul_(cfg.listener_embed_scale)
    return bundle
