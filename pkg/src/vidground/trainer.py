"""Max-margin training of the joint embedding.

Each step samples temporally aligned (clip, caption) positives and, per
positive, mismatched negatives drawn half from the same video and half from
other videos. The hinge loss

    sum_j max(0, margin + s_ij - s_ii) + max(0, margin + s_ji - s_ii)

is minimized with Adam; gradients are computed analytically through both
towers and the word table (see ``model.text_batch_backward`` and friends).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Segment, segment_feature_window
from .errors import DataError, VidgroundError
from .model import (
    JointEmbeddingModel,
    save_checkpoint,
    text_batch_backward,
    text_batch_forward,
    visual_batch_backward,
    visual_batch_forward,
    zero_grads,
)


class SamplingError(VidgroundError):
    """Batch construction impossible (e.g. single-video corpus)."""


class NumericError(VidgroundError):
    """Loss or gradients became non-finite."""


@dataclass
class TrainConfig:
    margin: float = 0.1
    learning_rate: float = 0.001
    total_steps: int = 300_000
    negatives_per_positive: int = 32  # half intra-video, half inter-video
    batch_positives: int = 128
    checkpoint_every: int = 10_000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives_per_positive % 2 != 0:
            raise ValueError("negatives_per_positive must be even (intra/inter split)")


@dataclass
class PairExample:
    """One (clip, caption) pair: the feature rows of a window plus token ids."""

    window: np.ndarray
    token_ids: list[int]
    segment: Segment | None = None  # provenance, so negatives can be audited


@dataclass
class Batch:
    positives: list[PairExample]
    intra_negatives: list[list[PairExample]]  # per positive, same video
    inter_negatives: list[list[PairExample]]  # per positive, other videos


def _pair(corpus_video, segment: Segment) -> PairExample:
    return PairExample(
        window=segment_feature_window(corpus_video.feature_track, segment),
        token_ids=list(segment.token_ids or []),
        segment=segment,
    )


def sample_batch(corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw positives uniformly over segments of videos with >= 2 segments;
    negatives never coincide with their positive's segment."""
    if len(corpus.videos) < 2:
        raise SamplingError("need at least 2 videos to sample inter-video negatives")
    eligible = [v for v in corpus.videos if len(v.segments) >= 2]
    if not eligible:
        raise SamplingError("no video has >= 2 segments; cannot sample intra-video negatives")

    pool = [(vi, si) for vi, v in enumerate(eligible) for si in range(len(v.segments))]
    k_each = cfg.negatives_per_positive // 2
    all_videos = corpus.videos

    positives: list[PairExample] = []
    intra: list[list[PairExample]] = []
    inter: list[list[PairExample]] = []
    for _ in range(cfg.batch_positives):
        vi, si = pool[rng.integers(len(pool))]
        video = eligible[vi]
        positives.append(_pair(video, video.segments[si]))

        neg_intra = []
        for _ in range(k_each):
            # skip over the positive's own index
            j = int(rng.integers(len(video.segments) - 1))
            if j >= si:
                j += 1
            neg_intra.append(_pair(video, video.segments[j]))
        intra.append(neg_intra)

        neg_inter = []
        for _ in range(k_each):
            w = int(rng.integers(len(all_videos) - 1))
            other = all_videos[w] if all_videos[w] is not video else all_videos[-1]
            j = int(rng.integers(len(other.segments)))
            neg_inter.append(_pair(other, other.segments[j]))
        inter.append(neg_inter)
    return Batch(positives=positives, intra_negatives=intra, inter_negatives=inter)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def hinge_loss(
    sim_pos: float,
    sims_clip_to_negcaption: Sequence[float],
    sims_negclip_to_caption: Sequence[float],
    margin: float,
) -> float:
    """Two-sided ranking hinge for one positive against its negatives."""
    total = 0.0
    for s in sims_clip_to_negcaption:
        total += max(0.0, margin + s - sim_pos)
    for s in sims_negclip_to_caption:
        total += max(0.0, margin + s - sim_pos)
    return total


def loss_and_gradients(
    model: JointEmbeddingModel, batch: Batch, margin: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss and exact subgradients (zero branch taken at hinge kinks).

    The whole batch runs as one vectorized forward/backward: positives first,
    then all negatives in positive-major order.
    """
    b = len(batch.positives)
    negs = [batch.intra_negatives[p] + batch.inter_negatives[p] for p in range(b)]
    k = len(negs[0]) if b else 0

    windows = [ex.window for ex in batch.positives]
    id_lists = [ex.token_ids for ex in batch.positives]
    for per_pos in negs:
        windows.extend(ex.window for ex in per_pos)
        id_lists.extend(ex.token_ids for ex in per_pos)
    # positives occupy [0, b); negatives [b, b + b*k) in positive-major order
    clip_emb, clip_cache = visual_batch_forward(model, windows)
    cap_emb, cap_cache = text_batch_forward(model, id_lists)

    ev_pos, et_pos = clip_emb[:b], cap_emb[:b]
    d = ev_pos.shape[1]
    ev_neg = clip_emb[b:].reshape(b, k, d)
    et_neg = cap_emb[b:].reshape(b, k, d)

    s_ii = np.sum(ev_pos * et_pos, axis=1)                    # (b,)
    s_ij = np.einsum("bd,bkd->bk", ev_pos, et_neg)            # pos clip vs neg caption
    s_ji = np.einsum("bkd,bd->bk", ev_neg, et_pos)            # neg clip vs pos caption

    term_a = margin + s_ij - s_ii[:, None]
    term_b = margin + s_ji - s_ii[:, None]
    loss = float(np.maximum(0.0, term_a).sum() + np.maximum(0.0, term_b).sum())
    if not np.isfinite(loss):
        bad = np.argwhere(~np.isfinite(term_a) | ~np.isfinite(term_b))
        where = f"positive {bad[0][0]}, negative {bad[0][1]}" if bad.size else "unknown pair"
        raise NumericError(f"non-finite loss ({where})")

    act_a = (term_a > 0).astype(np.float64)
    act_b = (term_b > 0).astype(np.float64)
    c = (act_a + act_b).sum(axis=1)                           # d loss / d (-s_ii)

    d_ev_pos = np.einsum("bk,bkd->bd", act_a, et_neg) - c[:, None] * et_pos
    d_et_pos = np.einsum("bk,bkd->bd", act_b, ev_neg) - c[:, None] * ev_pos
    d_et_neg = act_a[:, :, None] * ev_pos[:, None, :]
    d_ev_neg = act_b[:, :, None] * et_pos[:, None, :]

    d_clip = np.concatenate([d_ev_pos, d_ev_neg.reshape(b * k, d)], axis=0)
    d_cap = np.concatenate([d_et_pos, d_et_neg.reshape(b * k, d)], axis=0)

    grads = zero_grads(model)
    visual_batch_backward(model, clip_cache, d_clip, grads)
    text_batch_backward(model, cap_cache, d_cap, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: JointEmbeddingModel) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a) for name, a in model.named_parameters()},
            v={name: np.zeros_like(a) for name, a in model.named_parameters()},
        )


def adam_step(
    model: JointEmbeddingModel,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, param in model.named_parameters():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint_paths: list[Path]
    loss_curve: list[tuple[int, float]]  # (step, loss)
    final_model: JointEmbeddingModel


def write_loss_csv(path: str | Path, curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in curve:
            w.writerow([step, repr(float(loss))])


def train(
    corpus: Corpus,
    model: JointEmbeddingModel,
    cfg: TrainConfig,
    out_dir: str | Path,
) -> TrainResult:
    """Run the optimization; checkpoints land in ``out_dir`` at every
    ``checkpoint_every`` steps and at termination, the loss curve in
    ``loss.csv``. A non-finite loss aborts with the last checkpoint intact."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if any(seg.token_ids is None for seg in corpus.iter_segments()):
        raise DataError("corpus segments have no token ids; build the vocabulary first")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_model(model)
    curve: list[tuple[int, float]] = []
    paths: list[Path] = []

    def checkpoint(step: int) -> None:
        model.step_count = step
        p = out_dir / f"checkpoint_{step:08d}.gck"
        save_checkpoint(model, p)
        paths.append(p)

    if cfg.total_steps == 0:
        checkpoint(0)
        write_loss_csv(out_dir / "loss.csv", curve)
        return TrainResult(checkpoint_paths=paths, loss_curve=curve, final_model=model)

    for step in range(1, cfg.total_steps + 1):
        batch = sample_batch(corpus, cfg, rng)
        try:
            loss, grads = loss_and_gradients(model, batch, cfg.margin)
        except NumericError:
            write_loss_csv(out_dir / "loss.csv", curve)
            last = paths[-1] if paths else None
            raise NumericError(
                f"aborted at step {step}; last good checkpoint: {last}"
            ) from None
        adam_step(model, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
        curve.append((step, loss))
        if cfg.checkpoint_every > 0 and step % cfg.checkpoint_every == 0:
            checkpoint(step)
    if not paths or paths[-1].name != f"checkpoint_{cfg.total_steps:08d}.gck":
        checkpoint(cfg.total_steps)
    write_loss_csv(out_dir / "loss.csv", curve)
    return TrainResult(checkpoint_paths=paths, loss_curve=curve, final_model=model)
