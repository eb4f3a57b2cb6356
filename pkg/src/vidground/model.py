"""Joint embedding model.

Both modalities map into one unit-sphere space scored by dot product:

  text:   token ids -> word-table rows -> elementwise max -> gated unit(s) -> L2 norm
  visual: per-second feature rows      -> elementwise max -> gated unit(s) -> L2 norm

A gated unit computes ``h * sigmoid(h @ W2 + b2)`` with ``h = x @ W1 + b1``.

Parameters live in float64 for training. Scoring (similarity matrices, step
localization) always goes through an :class:`EmbeddingView`, a snapshot of
the parameters rounded to float32 -- the checkpoint storage dtype -- so
similarities are bit-identical before saving and after loading a checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, EmptyInputError, FormatError, VocabMismatchError

CHECKPOINT_MAGIC = b"GCK1"
NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class GatedUnitParams:
    """One gated feedforward unit; shapes (d_in,d_out), (d_out,), (d_out,d_out), (d_out,)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W1.shape[1]


@dataclass
class ModelConfig:
    feature_dim: int
    vocab_size: int
    d_word: int = 300
    d_joint: int = 256
    text_hidden: tuple[int, ...] = ()
    visual_hidden: tuple[int, ...] = ()
    window_len_s: float = 5.0
    vocab_hash: str = ""

    def text_dims(self) -> list[tuple[int, int]]:
        """(d_in, d_out) per text-tower unit; the last unit ends in d_joint."""
        dims = [self.d_word, *self.text_hidden, self.d_joint]
        return list(zip(dims[:-1], dims[1:]))

    def visual_dims(self) -> list[tuple[int, int]]:
        dims = [self.feature_dim, *self.visual_hidden, self.d_joint]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "vocab_size": self.vocab_size,
            "d_word": self.d_word,
            "d_joint": self.d_joint,
            "text_hidden": list(self.text_hidden),
            "visual_hidden": list(self.visual_hidden),
            "window_len_s": self.window_len_s,
            "vocab_hash": self.vocab_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            feature_dim=int(d["feature_dim"]),
            vocab_size=int(d["vocab_size"]),
            d_word=int(d["d_word"]),
            d_joint=int(d["d_joint"]),
            text_hidden=tuple(d["text_hidden"]),
            visual_hidden=tuple(d["visual_hidden"]),
            window_len_s=float(d["window_len_s"]),
            vocab_hash=str(d["vocab_hash"]),
        )


@dataclass
class JointEmbeddingModel:
    config: ModelConfig
    word_table: np.ndarray  # (vocab_size, d_word)
    text_tower: list[GatedUnitParams]
    visual_tower: list[GatedUnitParams]
    step_count: int = 0

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in declared (checkpoint) order."""
        out: list[tuple[str, np.ndarray]] = [("word_table", self.word_table)]
        for tower_name, tower in (("text_tower", self.text_tower),
                                  ("visual_tower", self.visual_tower)):
            for i, u in enumerate(tower):
                out.append((f"{tower_name}.{i}.W1", u.W1))
                out.append((f"{tower_name}.{i}.b1", u.b1))
                out.append((f"{tower_name}.{i}.W2", u.W2))
                out.append((f"{tower_name}.{i}.b2", u.b2))
        return out

    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.named_parameters())

    def view(self) -> "EmbeddingView":
        return EmbeddingView(self)


def _init_unit(rng: np.random.Generator, d_in: int, d_out: int) -> GatedUnitParams:
    # uniform [-1/sqrt(rows), +1/sqrt(rows)] per matrix, zero biases
    return GatedUnitParams(
        W1=rng.uniform(-1.0, 1.0, size=(d_in, d_out)) / np.sqrt(d_in),
        b1=np.zeros(d_out),
        W2=rng.uniform(-1.0, 1.0, size=(d_out, d_out)) / np.sqrt(d_out),
        b2=np.zeros(d_out),
    )


def init_model(config: ModelConfig, seed: int = 0) -> JointEmbeddingModel:
    """Seeded random initialization; draw order is fixed so a given
    (config, seed) always produces the same parameters."""
    rng = np.random.default_rng(seed)
    word_table = rng.uniform(
        -1.0, 1.0, size=(config.vocab_size, config.d_word)
    ) / np.sqrt(config.d_word)
    text = [_init_unit(rng, di, do) for di, do in config.text_dims()]
    visual = [_init_unit(rng, di, do) for di, do in config.visual_dims()]
    return JointEmbeddingModel(
        config=config, word_table=word_table, text_tower=text, visual_tower=visual
    )


def import_word_table(model: JointEmbeddingModel, table: np.ndarray) -> None:
    """Replace the word table with externally trained vectors (rows must
    align with the model's vocabulary indices)."""
    expected = (model.config.vocab_size, model.config.d_word)
    if tuple(table.shape) != expected:
        raise DimensionError(f"word table shape {table.shape} != {expected}")
    model.word_table = np.asarray(table, dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def gated_forward(x: np.ndarray, p: GatedUnitParams) -> np.ndarray:
    """h * sigmoid(h @ W2 + b2) with h = x @ W1 + b1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.d_in:
        raise DimensionError(f"input dim {x.shape[-1]} != unit d_in {p.d_in}")
    h = x @ p.W1 + p.b1
    return h * expit(h @ p.W2 + p.b2)


def _normalize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; degenerate norms get a tiny additive floor."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    denom = np.where(n < NORM_EPS, n + NORM_EPS, n)
    return v / denom, denom


def _tower_apply(x: np.ndarray, tower: Sequence[GatedUnitParams]) -> np.ndarray:
    for u in tower:
        x = gated_forward(x, u)
    return x


def _pool_rows(rows: np.ndarray) -> np.ndarray:
    return rows.max(axis=0)


class EmbeddingView:
    """Float32-rounded snapshot of the parameters used for all scoring.

    Rounding to the checkpoint dtype up front makes every similarity
    bit-identical whether it is computed before a save or after a load.
    """

    def __init__(self, model: JointEmbeddingModel):
        self.config = model.config
        round32 = lambda a: a.astype("<f4").astype(np.float64)
        self.word_table = round32(model.word_table)
        self.text_tower = [
            GatedUnitParams(round32(u.W1), round32(u.b1), round32(u.W2), round32(u.b2))
            for u in model.text_tower
        ]
        self.visual_tower = [
            GatedUnitParams(round32(u.W1), round32(u.b1), round32(u.W2), round32(u.b2))
            for u in model.visual_tower
        ]

    def embed_text(self, token_ids: Sequence[int]) -> np.ndarray:
        if len(token_ids) == 0:
            raise EmptyInputError("cannot embed an empty token list")
        pooled = _pool_rows(self.word_table[np.asarray(token_ids, dtype=np.intp)])
        out, _ = _normalize_rows(_tower_apply(pooled, self.text_tower))
        return out

    def embed_visual(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window)
        if window.ndim != 2 or window.shape[0] == 0:
            raise EmptyInputError("visual window must have at least one feature row")
        if window.shape[1] != self.config.feature_dim:
            raise DimensionError(
                f"feature dim {window.shape[1]} != configured {self.config.feature_dim}"
            )
        pooled = _pool_rows(window.astype(np.float64))
        out, _ = _normalize_rows(_tower_apply(pooled, self.visual_tower))
        return out

    def embed_text_many(self, id_lists: Sequence[Sequence[int]]) -> np.ndarray:
        pooled = np.empty((len(id_lists), self.config.d_word))
        for i, ids in enumerate(id_lists):
            if len(ids) == 0:
                raise EmptyInputError(f"caption {i} has no tokens")
            pooled[i] = _pool_rows(self.word_table[np.asarray(ids, dtype=np.intp)])
        out, _ = _normalize_rows(_tower_apply(pooled, self.text_tower))
        return out

    def embed_visual_many(self, windows: Sequence[np.ndarray]) -> np.ndarray:
        pooled = np.empty((len(windows), self.config.feature_dim))
        for i, w in enumerate(windows):
            if w.shape[0] == 0:
                raise EmptyInputError(f"window {i} has no feature rows")
            pooled[i] = _pool_rows(np.asarray(w, dtype=np.float64))
        out, _ = _normalize_rows(_tower_apply(pooled, self.visual_tower))
        return out


def _as_view(model_or_view) -> EmbeddingView:
    return model_or_view.view() if isinstance(model_or_view, JointEmbeddingModel) else model_or_view


def embed_text(model: JointEmbeddingModel | EmbeddingView, token_ids: Sequence[int]) -> np.ndarray:
    return _as_view(model).embed_text(token_ids)


def embed_visual(model: JointEmbeddingModel | EmbeddingView, window: np.ndarray) -> np.ndarray:
    return _as_view(model).embed_visual(window)


def similarity(clip_embedding: np.ndarray, caption_embedding: np.ndarray) -> float:
    """Dot product; equals cosine similarity because inputs are unit-norm."""
    return float(np.dot(clip_embedding, caption_embedding))


def similarity_matrix(model_or_view, windows: Sequence[np.ndarray],
                      id_lists: Sequence[Sequence[int]]) -> np.ndarray:
    """Entry (i, j) = similarity(clip i, caption j); the diagonal holds the
    temporally aligned pairs."""
    if len(windows) != len(id_lists):
        raise DimensionError("need one caption per clip")
    view = _as_view(model_or_view)
    clips = view.embed_visual_many(windows)
    caps = view.embed_text_many(id_lists)
    return clips @ caps.T


# ---------------------------------------------------------------------------
# Training forward/backward (float64, exact subgradients)
# ---------------------------------------------------------------------------

@dataclass
class _UnitCache:
    x: np.ndarray
    h: np.ndarray
    g: np.ndarray


@dataclass
class BatchCache:
    """Everything the backward pass needs for one modality batch."""

    tower_caches: list[_UnitCache]
    prenorm: np.ndarray
    denom: np.ndarray
    emb: np.ndarray
    # text only: per row, the token id that won the max for each word dim
    pool_sel: list[np.ndarray] = field(default_factory=list)


def _tower_forward(x: np.ndarray, tower: Sequence[GatedUnitParams]) -> tuple[np.ndarray, list[_UnitCache]]:
    caches = []
    for u in tower:
        h = x @ u.W1 + u.b1
        g = expit(h @ u.W2 + u.b2)
        caches.append(_UnitCache(x=x, h=h, g=g))
        x = h * g
    return x, caches


def _tower_backward(
    d_out: np.ndarray,
    tower: Sequence[GatedUnitParams],
    caches: Sequence[_UnitCache],
    grads: dict[str, np.ndarray],
    prefix: str,
) -> np.ndarray:
    for i in reversed(range(len(tower))):
        u, c = tower[i], caches[i]
        # y = h*g, z = h@W2+b2, g = sigmoid(z)
        s = d_out * c.h * c.g * (1.0 - c.g)  # dL/dz
        grads[f"{prefix}.{i}.W2"] += c.h.T @ s
        grads[f"{prefix}.{i}.b2"] += s.sum(axis=0)
        dh = d_out * c.g + s @ u.W2.T
        grads[f"{prefix}.{i}.W1"] += c.x.T @ dh
        grads[f"{prefix}.{i}.b1"] += dh.sum(axis=0)
        d_out = dh @ u.W1.T
    return d_out


def text_batch_forward(
    model: JointEmbeddingModel, id_lists: Sequence[Sequence[int]]
) -> tuple[np.ndarray, BatchCache]:
    pooled = np.empty((len(id_lists), model.config.d_word))
    sel: list[np.ndarray] = []
    for i, ids in enumerate(id_lists):
        if len(ids) == 0:
            raise EmptyInputError(f"caption {i} has no tokens")
        ids_arr = np.asarray(ids, dtype=np.intp)
        rows = model.word_table[ids_arr]
        winner = rows.argmax(axis=0)  # first index on ties
        pooled[i] = rows[winner, np.arange(rows.shape[1])]
        sel.append(ids_arr[winner])
    prenorm, caches = _tower_forward(pooled, model.text_tower)
    emb, denom = _normalize_rows(prenorm)
    return emb, BatchCache(tower_caches=caches, prenorm=prenorm, denom=denom, emb=emb, pool_sel=sel)


def visual_batch_forward(
    model: JointEmbeddingModel, windows: Sequence[np.ndarray]
) -> tuple[np.ndarray, BatchCache]:
    pooled = np.empty((len(windows), model.config.feature_dim))
    for i, w in enumerate(windows):
        if w.shape[0] == 0:
            raise EmptyInputError(f"window {i} has no feature rows")
        pooled[i] = np.asarray(w, dtype=np.float64).max(axis=0)
    prenorm, caches = _tower_forward(pooled, model.visual_tower)
    emb, denom = _normalize_rows(prenorm)
    return emb, BatchCache(tower_caches=caches, prenorm=prenorm, denom=denom, emb=emb)


def _normalize_backward(d_emb: np.ndarray, cache: BatchCache) -> np.ndarray:
    # y = v/n: dv = (dy - y * <y, dy>) / n
    inner = np.sum(cache.emb * d_emb, axis=-1, keepdims=True)
    return (d_emb - cache.emb * inner) / cache.denom


def text_batch_backward(
    model: JointEmbeddingModel,
    cache: BatchCache,
    d_emb: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    d_prenorm = _normalize_backward(d_emb, cache)
    d_pooled = _tower_backward(d_prenorm, model.text_tower, cache.tower_caches, grads, "text_tower")
    cols = np.arange(model.config.d_word)
    gw = grads["word_table"]
    for i, winners in enumerate(cache.pool_sel):
        np.add.at(gw, (winners, cols), d_pooled[i])


def visual_batch_backward(
    model: JointEmbeddingModel,
    cache: BatchCache,
    d_emb: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    d_prenorm = _normalize_backward(d_emb, cache)
    _tower_backward(d_prenorm, model.visual_tower, cache.tower_caches, grads, "visual_tower")


def zero_grads(model: JointEmbeddingModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in model.named_parameters()}


# ---------------------------------------------------------------------------
# Checkpoint IO (GCK1: magic | u32 json_len | config JSON | f32 LE blocks)
# ---------------------------------------------------------------------------

def save_checkpoint(model: JointEmbeddingModel, path: str | Path) -> None:
    """Atomic write (temp then rename); parameters stored as little-endian f32."""
    path = Path(path)
    params = model.named_parameters()
    header = {
        "format_version": 1,
        "config": model.config.to_dict(),
        "step_count": model.step_count,
        "params": [[name, list(arr.shape)] for name, arr in params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in params:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expected_vocab_hash: str | None = None) -> JointEmbeddingModel:
    """Read a GCK1 checkpoint.

    When ``expected_vocab_hash`` is given it must match the hash recorded at
    save time, otherwise the checkpoint belongs to a different vocabulary.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (json_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + json_len:
        raise FormatError(f"{path}: truncated config block")
    try:
        header = json.loads(raw[8 : 8 + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable config block: {e}") from e
    config = ModelConfig.from_dict(header["config"])
    if expected_vocab_hash is not None and config.vocab_hash != expected_vocab_hash:
        raise VocabMismatchError(
            f"{path}: checkpoint vocab hash {config.vocab_hash[:12]}... does not match "
            f"expected {expected_vocab_hash[:12]}..."
        )

    offset = 8 + json_len
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated parameter block {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after parameter blocks")

    def unit(prefix: str, i: int) -> GatedUnitParams:
        return GatedUnitParams(
            W1=arrays[f"{prefix}.{i}.W1"],
            b1=arrays[f"{prefix}.{i}.b1"],
            W2=arrays[f"{prefix}.{i}.W2"],
            b2=arrays[f"{prefix}.{i}.b2"],
        )

    model = JointEmbeddingModel(
        config=config,
        word_table=arrays["word_table"],
        text_tower=[unit("text_tower", i) for i in range(len(config.text_dims()))],
        visual_tower=[unit("visual_tower", i) for i in range(len(config.visual_dims()))],
        step_count=int(header["step_count"]),
    )
    if model.word_table.shape != (config.vocab_size, config.d_word):
        raise FormatError(f"{path}: word table shape does not match config")
    return model
