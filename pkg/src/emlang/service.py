"""HTTP probe API for interactively editing messages against a checkpoint.

The service loads one checkpoint and exposes the judge half of the game
over JSON: sample a candidate batch, describe an image, then mutate the
description one symbol at a time and watch the listener's confidence
move. Images travel as base64-encoded binary PGM. Errors come back as
{code, message} with conventional status codes (400 undecodable input,
404 missing resource, 422 contract violation).

Model parameters are read-only here; the only server-side state is an
LRU-capped table of candidate batches and their judgment histories.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .corpus import (
    Dataset,
    GameBatch,
    IdxFormatError,
    decode_pgm,
    encode_pgm,
    resize_image,
    sample_game_batch,
)
from .game import Checkpoint
from .nets import (
    LengthError,
    Message,
    VocabularyError,
    draw,
    encode_candidates,
    listen,
    speak,
)

DEFAULT_MAX_SESSIONS = 256


class ApiError(Exception):
    """An error with a wire representation: status, short code, message."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ProbeSession:
    """One candidate batch plus the append-only record of its judgments."""

    batch_id: str
    batch: GameBatch
    features: np.ndarray                       # (B, feat_dim), fixed per batch
    history: list[tuple[Message, np.ndarray]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """Thread-safe LRU table of ProbeSessions, capped in size."""

    def __init__(self, cap: int = DEFAULT_MAX_SESSIONS):
        if cap < 1:
            raise ValueError("session cap must be positive")
        self._cap = cap
        self._lock = threading.Lock()
        self._table: OrderedDict[str, ProbeSession] = OrderedDict()

    def get(self, batch_id: str) -> ProbeSession | None:
        with self._lock:
            session = self._table.get(batch_id)
            if session is not None:
                self._table.move_to_end(batch_id)
            return session

    def put(self, session: ProbeSession) -> None:
        with self._lock:
            self._table[session.batch_id] = session
            self._table.move_to_end(session.batch_id)
            while len(self._table) > self._cap:
                self._table.popitem(last=False)

    def items(self) -> list[ProbeSession]:
        with self._lock:
            return list(self._table.values())


class SpeakRequest(BaseModel):
    image: str = Field(description="base64-encoded binary PGM")
    length: int


class SpeakResponse(BaseModel):
    symbols: str


class JudgeRequest(BaseModel):
    symbols: str
    batch_id: str


class JudgeResponse(BaseModel):
    probabilities: list[float]
    drawn: str


class MutateRequest(BaseModel):
    symbols: str
    position: int
    new_symbol: str
    batch_id: str


class MutateResponse(JudgeResponse):
    delta: list[float]


class BatchRequest(BaseModel):
    dataset: str = "test"
    seed: int = 0


class BatchInfo(BaseModel):
    batch_id: str
    thumbnails: list[str]


class BatchList(BaseModel):
    batches: list[BatchInfo]


class MetaResponse(BaseModel):
    vocabulary: str
    min_length: int
    max_length: int
    batch_size: int
    image_size: int
    datasets: list[str]


def _b64_pgm(image: np.ndarray) -> str:
    return base64.b64encode(encode_pgm(image)).decode("ascii")


def _image_from_b64(blob: str, size: int) -> np.ndarray:
    try:
        raw = base64.b64decode(blob, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ApiError(400, "bad_image", f"image is not valid base64: {exc}") from exc
    try:
        img = decode_pgm(raw)
    except IdxFormatError as exc:
        raise ApiError(400, "bad_image", str(exc)) from exc
    return resize_image(img, size) if img.shape != (size, size) else img


def _batch_rng(dataset: str, seed: int) -> np.random.Generator:
    # stable across restarts: the dataset name is digested, not hash()ed
    tag = int.from_bytes(hashlib.sha256(dataset.encode()).digest()[:4], "big")
    return np.random.default_rng((tag, seed))


def create_app(
    ckpt: Checkpoint,
    datasets: dict[str, Dataset],
    max_sessions: int = DEFAULT_MAX_SESSIONS,
    static_dir: str | None = None,
) -> FastAPI:
    """Wire one checkpoint and its datasets into a FastAPI application.

    static_dir, when given, is served at the site root (the browser UI);
    the JSON API lives under /api/v1 either way.
    """
    cfg = ckpt.nets.cfg
    vocab = cfg.vocab
    store = SessionStore(max_sessions)
    app = FastAPI(title="emlang probe service", docs_url=None, redoc_url=None)
    app.state.checkpoint = ckpt
    app.state.sessions = store

    def wire_error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse({"code": code, "message": message}, status_code=status)

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return wire_error(exc.status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        detail = "; ".join(
            f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()
        )
        return wire_error(422, "validation_error", detail)

    def encode_message(symbols: str) -> Message:
        if not symbols:
            raise ApiError(422, "unknown_symbol", "message must not be empty")
        try:
            return vocab.encode(symbols)
        except VocabularyError as exc:
            raise ApiError(422, "unknown_symbol", str(exc)) from exc

    def judge(session: ProbeSession, msg: Message) -> tuple[list[float], str]:
        query = listen(ckpt.nets.listener, msg)
        sims = torch.as_tensor(session.features) @ torch.as_tensor(query)
        probs = torch.softmax(sims, dim=-1).numpy()
        drawn = draw(ckpt.nets.drawer, query)
        return [float(p) for p in probs], _b64_pgm(drawn)

    def session_or_404(batch_id: str) -> ProbeSession:
        session = store.get(batch_id)
        if session is None:
            raise ApiError(404, "unknown_batch", f"no batch {batch_id!r}")
        return session

    @app.get("/api/v1/meta", response_model=MetaResponse)
    def meta_endpoint() -> MetaResponse:
        # everything a client needs to validate input before calling us
        return MetaResponse(
            vocabulary=vocab.alphabet,
            min_length=cfg.lengths.min_len,
            max_length=cfg.lengths.max_len,
            batch_size=ckpt.config.batch_size,
            image_size=cfg.image_size,
            datasets=sorted(datasets),
        )

    @app.post("/api/v1/speak", response_model=SpeakResponse)
    def speak_endpoint(req: SpeakRequest) -> SpeakResponse:
        image = _image_from_b64(req.image, cfg.image_size)
        try:
            msg, _ = speak(ckpt.nets.speaker, image, req.length)
        except LengthError as exc:
            raise ApiError(422, "invalid_length", str(exc)) from exc
        return SpeakResponse(symbols=vocab.decode(msg.symbols))

    @app.post("/api/v1/judge", response_model=JudgeResponse)
    def judge_endpoint(req: JudgeRequest) -> JudgeResponse:
        session = session_or_404(req.batch_id)
        msg = encode_message(req.symbols)
        probs, drawn = judge(session, msg)
        with session.lock:
            session.history.append((msg, np.array(probs)))
        return JudgeResponse(probabilities=probs, drawn=drawn)

    @app.post("/api/v1/mutate", response_model=MutateResponse)
    def mutate_endpoint(req: MutateRequest) -> MutateResponse:
        session = session_or_404(req.batch_id)
        msg = encode_message(req.symbols)
        if not (0 <= req.position < len(msg)):
            raise ApiError(
                422, "bad_position",
                f"position {req.position} outside message of length {len(msg)}",
            )
        replacement = encode_message(req.new_symbol)
        if len(replacement) != 1:
            raise ApiError(422, "bad_position", "new_symbol must be one character")
        edited = msg.replace(req.position, replacement.symbols[0])
        # delta is computed from the request alone, so identical requests
        # always produce identical responses regardless of prior traffic
        before, _ = judge(session, msg)
        probs, drawn = judge(session, edited)
        with session.lock:
            session.history.append((edited, np.array(probs)))
        delta = [p - q for p, q in zip(probs, before)]
        return MutateResponse(probabilities=probs, drawn=drawn, delta=delta)

    def batch_info(session: ProbeSession) -> BatchInfo:
        return BatchInfo(
            batch_id=session.batch_id,
            thumbnails=[_b64_pgm(img) for img in session.batch.candidates],
        )

    @app.post("/api/v1/batches", response_model=BatchInfo)
    def create_batch(req: BatchRequest) -> BatchInfo:
        if req.dataset not in datasets:
            raise ApiError(
                404, "unknown_dataset",
                f"dataset {req.dataset!r} not loaded (have {sorted(datasets)})",
            )
        batch_id = f"{req.dataset}-{req.seed}"
        session = store.get(batch_id)
        if session is None:
            batch = sample_game_batch(
                datasets[req.dataset], ckpt.config.batch_size,
                _batch_rng(req.dataset, req.seed),
            )
            feats = encode_candidates(ckpt.nets.listener, batch.candidates)
            session = ProbeSession(batch_id, batch, feats)
            store.put(session)
        return batch_info(session)

    @app.get("/api/v1/batches", response_model=BatchList)
    def list_batches() -> BatchList:
        return BatchList(batches=[batch_info(s) for s in store.items()])

    @app.get("/api/v1/batches/{batch_id}", response_model=BatchInfo)
    def get_batch(batch_id: str) -> BatchInfo:
        return batch_info(session_or_404(batch_id))

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True))

    return app
