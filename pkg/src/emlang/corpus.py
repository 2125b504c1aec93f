"""Dataset ingestion and game-batch sampling.

Images are plain numpy arrays of shape (64, 64), float32, values in [0, 1].
All sampling takes an explicit numpy Generator so that batch sequences are
reproducible across processes; nothing in this module touches global RNG
state. Datasets are immutable after construction and safe to share between
workers.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SIZE = 64

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class CorpusError(Exception):
    """Base class for ingestion and sampling failures."""


class IdxFormatError(CorpusError):
    """Raised when an IDX file is malformed or has the wrong magic."""


class ConsistencyError(CorpusError):
    """Raised when images and labels disagree in length or coverage."""


class SamplingError(CorpusError):
    """Raised when a dataset cannot support the requested batch."""


@dataclass(frozen=True)
class Dataset:
    """A stack of grayscale images with optional integer category labels."""

    images: np.ndarray          # (N, 64, 64) float32 in [0, 1]
    labels: np.ndarray | None   # (N,) int64, or None for unlabeled data
    split: str                  # "train" or "test"

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ConsistencyError(f"expected (N, 64, 64) images, got {self.images.shape}")
        if len(self.images) == 0:
            raise ConsistencyError("dataset must contain at least one image")
        if not np.isfinite(self.images).all():
            raise ConsistencyError("images contain non-finite values")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ConsistencyError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        self.images.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def categories(self) -> np.ndarray:
        if self.labels is None:
            raise ConsistencyError("dataset has no labels")
        return np.unique(self.labels)

    def subset(self, indices: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices].copy()
        return Dataset(self.images[indices].copy(), labels, self.split)


@dataclass(frozen=True)
class GameBatch:
    """One round of the game: B candidate images and the speaker's view.

    The speaker view shows the same category as candidates[target_index]
    but is never the identical pixel array, mirroring the asymmetry
    between what the two agents see.
    """

    candidates: np.ndarray            # (B, 64, 64)
    target_index: int
    speaker_view: np.ndarray          # (64, 64)
    candidate_labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        b = len(self.candidates)
        if not (0 <= self.target_index < b):
            raise SamplingError(f"target_index {self.target_index} out of range for B={b}")
        if self.candidate_labels is not None:
            if len(np.unique(self.candidate_labels)) != b:
                raise SamplingError("candidate categories must be pairwise distinct")

    @property
    def batch_size(self) -> int:
        return len(self.candidates)

    @property
    def target_image(self) -> np.ndarray:
        return self.candidates[self.target_index]


def resize_image(pixels: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear resize to size x size, clamped back into [0, 1]."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.shape == (size, size):
        return arr.copy()
    img = Image.fromarray(arr, mode="F").resize((size, size), Image.BILINEAR)
    return np.clip(np.asarray(img, dtype=np.float32), 0.0, 1.0)


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}i", raw[4:header_len])
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    expected = int(np.prod(dims))
    if payload.size != expected:
        raise IdxFormatError(
            f"{path}: payload has {payload.size} bytes, header promises {expected}"
        )
    return payload.reshape(dims)


def load_mnist_idx(image_path: str | Path, label_path: str | Path, split: str) -> Dataset:
    """Parse a pair of IDX files (big-endian, uint8) into a Dataset.

    Source images of any resolution are bilinearly resized to 64x64 and
    scaled into [0, 1].
    """
    images_u8 = _read_idx(Path(image_path), IDX_IMAGE_MAGIC)
    labels_u8 = _read_idx(Path(label_path), IDX_LABEL_MAGIC)
    if len(images_u8) != len(labels_u8):
        raise ConsistencyError(
            f"{len(images_u8)} images but {len(labels_u8)} labels"
        )
    scaled = images_u8.astype(np.float32) / 255.0
    images = np.stack([resize_image(img) for img in scaled])
    return Dataset(images, labels_u8.astype(np.int64), split)


def load_digits_dataset(split: str, test_fraction: float = 0.2) -> Dataset:
    """Offline handwritten-digit dataset built from scikit-learn's bundled digits.

    Used as the stand-in corpus when the full IDX files are not on disk.
    The split is deterministic: within each class the last test_fraction of
    instances (by original order) form the test set.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    pixels = bunch.images.astype(np.float32) / 16.0
    labels = bunch.target.astype(np.int64)
    keep = np.zeros(len(labels), dtype=bool)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        cut = int(round(len(idx) * (1.0 - test_fraction)))
        keep[idx[:cut] if split == "train" else idx[cut:]] = True
    images = np.stack([resize_image(img) for img in pixels[keep]])
    return Dataset(images, labels[keep].copy(), split)


def sequence_category_id(digits: list[int]) -> int:
    """Category id of a digit string; a leading 1 keeps '023' distinct from '23'."""
    return int("1" + "".join(str(d) for d in digits))


def compose_sequence_dataset(
    source: Dataset, counts: dict[int, int], rng_seed: int
) -> Dataset:
    """Compose multi-digit images by rendering source digits side by side.

    counts maps digit-count k (2..4) to the number of images to produce.
    Each composition draws k source digits uniformly, shrinks them into a
    horizontal strip on a blank 64x64 canvas, and labels the result with
    the digit string's category id. Deterministic under rng_seed.
    """
    if source.labels is None:
        raise ConsistencyError("sequence composition needs a labeled source")
    bad = [k for k in counts if k < 2 or k > 4]
    if bad:
        raise SamplingError(f"digit counts must be in 2..4, got {bad}")
    if any(n < 0 for n in counts.values()):
        raise SamplingError("image counts must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    images, labels = [], []
    for k in sorted(counts):
        cell = IMAGE_SIZE // k
        x0 = (IMAGE_SIZE - cell * k) // 2
        y0 = (IMAGE_SIZE - cell) // 2
        for _ in range(counts[k]):
            picks = rng.integers(0, len(source), size=k)
            canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
            for j, idx in enumerate(picks):
                tile = resize_image(source.images[idx], cell)
                canvas[y0:y0 + cell, x0 + j * cell:x0 + (j + 1) * cell] = tile
            images.append(canvas)
            labels.append(sequence_category_id([int(source.labels[i]) for i in picks]))
    if not images:
        raise SamplingError("requested an empty sequence dataset")
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), source.split)


def load_image_folder(folder: str | Path, split: str) -> Dataset:
    """Load a directory of PNG/PGM files, optionally labeled by labels.csv.

    labels.csv rows are `filename,category`; when present it must cover
    every image in the folder. Color sources are converted to luminance.
    """
    folder = Path(folder)
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".png", ".pgm"))
    if not paths:
        raise ConsistencyError(f"no PNG/PGM images under {folder}")
    label_file = folder / "labels.csv"
    label_map: dict[str, int] | None = None
    if label_file.exists():
        label_map = {}
        with open(label_file, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() == "filename":
                    continue
                label_map[row[0].strip()] = int(row[1])
    images, labels = [], []
    for p in paths:
        if p.suffix.lower() == ".pgm":
            img = decode_pgm(p.read_bytes())
        else:
            gray = Image.open(p).convert("L")
            img = resize_image(np.asarray(gray, dtype=np.float32) / 255.0)
        images.append(img)
        if label_map is not None:
            if p.name not in label_map:
                raise ConsistencyError(f"labels.csv has no row for {p.name}")
            labels.append(label_map[p.name])
    return Dataset(
        np.stack(images),
        np.asarray(labels, dtype=np.int64) if label_map is not None else None,
        split,
    )


def resolve_dataset(source: str | Path, split: str) -> Dataset:
    """Load a dataset by name or path.

    "digits" selects the bundled handwritten-digit corpus; a directory
    holding the conventional IDX pairs (train-/t10k-images-idx3-ubyte and
    matching labels) loads those; any other directory is treated as an
    image folder.
    """
    if str(source) == "digits":
        return load_digits_dataset(split)
    folder = Path(source)
    if folder.is_dir():
        prefix = "train" if split == "train" else "t10k"
        images = folder / f"{prefix}-images-idx3-ubyte"
        labels = folder / f"{prefix}-labels-idx1-ubyte"
        if images.exists() and labels.exists():
            return load_mnist_idx(images, labels, split)
        return load_image_folder(folder, split)
    raise CorpusError(f"cannot resolve dataset {str(source)!r}: not a known name or directory")


def jitter_image(image: np.ndarray, scale: float, shift: float) -> np.ndarray:
    """Rescale image content by `scale` and add a uniform intensity `shift`.

    scale 1.0 and shift 0.0 return the image unchanged; output is clamped
    to [0, 1].
    """
    out = np.asarray(image, dtype=np.float32)
    if scale != 1.0:
        m = max(1, round(IMAGE_SIZE * scale))
        scaled = np.asarray(
            Image.fromarray(out, mode="F").resize((m, m), Image.BILINEAR),
            dtype=np.float32,
        )
        canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
        if m >= IMAGE_SIZE:
            off = (m - IMAGE_SIZE) // 2
            canvas[:] = scaled[off:off + IMAGE_SIZE, off:off + IMAGE_SIZE]
        else:
            off = (IMAGE_SIZE - m) // 2
            canvas[off:off + m, off:off + m] = scaled
        out = canvas
    else:
        out = out.copy()
    if shift != 0.0:
        out = out + np.float32(shift)
    return np.clip(out, 0.0, 1.0)


def make_variant(
    image: np.ndarray,
    mode: str,
    rng: np.random.Generator,
    pool: Dataset | None = None,
    category: int | None = None,
    scale_range: tuple[float, float] = (0.9, 1.1),
    shift_range: tuple[float, float] = (-0.1, 0.1),
) -> np.ndarray:
    """Produce the speaker-side view of a target image.

    "class_resample" picks a different instance of `category` from `pool`
    (falling back to jitter when the class has no other instance);
    "scale_color_jitter" rescales the content and shifts its intensity.
    """
    if mode == "class_resample":
        if pool is None or pool.labels is None or category is None:
            raise SamplingError("class_resample needs a labeled pool and a category")
        candidates = np.flatnonzero(pool.labels == category)
        others = [i for i in candidates if not np.array_equal(pool.images[i], image)]
        if not others:
            return make_variant(image, "scale_color_jitter", rng,
                                scale_range=scale_range, shift_range=shift_range)
        return pool.images[others[rng.integers(0, len(others))]].copy()
    if mode == "scale_color_jitter":
        scale = float(rng.uniform(*scale_range))
        shift = float(rng.uniform(*shift_range))
        return jitter_image(image, scale, shift)
    raise SamplingError(f"unknown variant mode {mode!r}")


def sample_game_batch(
    data: Dataset, batch_size: int, rng: np.random.Generator
) -> GameBatch:
    """Draw one game round: B candidates, a uniform target, a speaker view.

    Labeled datasets guarantee pairwise-distinct candidate categories and
    resample the speaker view from the target's class when possible;
    unlabeled datasets fall back to distinct images plus content jitter.
    """
    if batch_size < 1:
        raise SamplingError("batch_size must be >= 1")
    if data.labels is not None:
        classes = data.categories
        if len(classes) < batch_size:
            raise SamplingError(
                f"need {batch_size} distinct categories, dataset has {len(classes)}"
            )
        chosen = rng.choice(classes, size=batch_size, replace=False)
        indices = np.array(
            [rng.choice(np.flatnonzero(data.labels == c)) for c in chosen]
        )
        target = int(rng.integers(0, batch_size))
        view = make_variant(
            data.images[indices[target]], "class_resample", rng,
            pool=data, category=int(chosen[target]),
        )
        return GameBatch(
            candidates=data.images[indices].copy(),
            target_index=target,
            speaker_view=view,
            candidate_labels=chosen.astype(np.int64),
        )
    if len(data) < batch_size:
        raise SamplingError(f"need {batch_size} images, dataset has {len(data)}")
    indices = rng.choice(len(data), size=batch_size, replace=False)
    target = int(rng.integers(0, batch_size))
    view = make_variant(data.images[indices[target]], "scale_color_jitter", rng)
    return GameBatch(
        candidates=data.images[indices].copy(),
        target_index=target,
        speaker_view=view,
    )


def encode_pgm(image: np.ndarray) -> bytes:
    """Serialize a [0, 1] grayscale image as binary PGM (P5, maxval 255)."""
    arr = np.asarray(image, dtype=np.float32)
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape
    return f"P5\n{w} {h}\n255\n".encode() + u8.tobytes()


def decode_pgm(blob: bytes) -> np.ndarray:
    """Parse a binary PGM into a 64x64 float image (resizing if needed)."""
    if not blob.startswith(b"P5"):
        raise IdxFormatError("not a binary PGM (missing P5 header)")
    fh = io.BytesIO(blob)
    tokens: list[bytes] = []
    fh.read(2)
    while len(tokens) < 3:
        ch = fh.read(1)
        if not ch:
            raise IdxFormatError("truncated PGM header")
        if ch == b"#":
            while fh.read(1) not in (b"\n", b""):
                pass
        elif ch.isspace():
            continue
        else:
            tok = ch
            while True:
                nxt = fh.read(1)
                if not nxt or nxt.isspace():
                    break
                tok += nxt
            tokens.append(tok)
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise IdxFormatError(f"unsupported PGM maxval {maxval}")
    payload = fh.read(w * h)
    if len(payload) != w * h:
        raise IdxFormatError("truncated PGM payload")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float32) / 255.0
    return resize_image(img)
