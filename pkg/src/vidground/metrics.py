"""Grounding diagnostics: intra-video and segment-level AUC, category
aggregates, correlation statistics and model-vs-model win rates.

AUC here is the plain rank statistic -- the fraction of (positive, negative)
score pairs won, ties counted 0.5 -- computed via average ranks, which agrees
exactly with brute-force pair counting.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps
from scipy.stats import rankdata

from .corpus import VideoRecord, segment_feature_window
from .errors import UndefinedMetricError, VidgroundError
from .model import similarity_matrix


class ReportMismatchError(VidgroundError):
    """Two reports cover different video sets; message lists the offenders."""


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

def auc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Fraction of (positive, negative) pairs with pos > neg; ties count 0.5.

    Computed from average ranks (Mann-Whitney U), which is exactly equal to
    the O(|P|*|N|) pair count.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def intra_video_auc(sim: np.ndarray) -> float:
    """AUC of the diagonal (temporally aligned pairs) against all
    off-diagonal entries of a clip x caption similarity matrix."""
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    if sim.ndim != 2 or sim.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if n < 2:
        raise UndefinedMetricError("intra-video AUC needs >= 2 segments")
    mask = ~np.eye(n, dtype=bool)
    return auc(np.diag(sim), sim[mask])


def segment_auc(sim: np.ndarray, j: int, transpose: bool = False) -> float:
    """How well caption j's true clip outranks the other clips of its video:
    AUC of s_jj against {s_ij : i != j}. With ``transpose`` the roles flip
    (clip j ranked against the other captions)."""
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    if n < 2:
        raise UndefinedMetricError("segment AUC needs >= 2 segments")
    line = sim[j, :] if transpose else sim[:, j]
    negatives = np.delete(line, j)
    return auc([sim[j, j]], negatives)


# ---------------------------------------------------------------------------
# Per-video grounding report
# ---------------------------------------------------------------------------

@dataclass
class SegmentGrounding:
    index: int
    start_s: float
    token_count: int
    relative_position: float  # window midpoint / video duration
    segment_auc: float
    token_types: tuple[str, ...]  # distinct token texts, for lexical analysis


@dataclass
class VideoGrounding:
    video_id: str
    n_segments: int
    intra_auc: float | None  # None when the video was skipped (< 2 segments)
    segments: list[SegmentGrounding]


@dataclass
class GroundingReport:
    videos: list[VideoGrounding]
    n_skipped: int

    def intra_by_video(self) -> dict[str, float]:
        return {v.video_id: v.intra_auc for v in self.videos if v.intra_auc is not None}

    def iter_segments(self) -> Iterable[tuple[VideoGrounding, SegmentGrounding]]:
        for v in self.videos:
            for s in v.segments:
                yield v, s


def _video_grounding(view, video: VideoRecord, transpose: bool) -> VideoGrounding:
    n = len(video.segments)
    if n < 2:
        return VideoGrounding(video.video_id, n, None, [])
    windows = [segment_feature_window(video.feature_track, s) for s in video.segments]
    ids = [s.token_ids for s in video.segments]
    sim = similarity_matrix(view, windows, ids)
    duration = video.feature_track.duration_s
    segments = []
    for j, seg in enumerate(video.segments):
        segments.append(
            SegmentGrounding(
                index=j,
                start_s=seg.start_s,
                token_count=len(seg.tokens),
                relative_position=(seg.start_s + seg.window_len_s / 2.0) / duration,
                segment_auc=segment_auc(sim, j, transpose=transpose),
                token_types=tuple(dict.fromkeys(t.text for t in seg.tokens)),
            )
        )
    return VideoGrounding(video.video_id, n, intra_video_auc(sim), segments)


def compute_grounding(
    model_or_view,
    videos: Sequence[VideoRecord],
    workers: int = 1,
    transpose_segment_auc: bool = False,
) -> GroundingReport:
    """Score every video; embarrassingly parallel over videos with results
    collected in input order, so any worker count gives identical output."""
    from .model import _as_view

    view = _as_view(model_or_view)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda v: _video_grounding(view, v, transpose_segment_auc), videos))
    else:
        rows = [_video_grounding(view, v, transpose_segment_auc) for v in videos]
    return GroundingReport(videos=rows, n_skipped=sum(1 for r in rows if r.intra_auc is None))


# ---------------------------------------------------------------------------
# Category aggregation
# ---------------------------------------------------------------------------

@dataclass
class CategoryReport:
    category_id: str
    mean_auc: float
    n_videos: int
    vertical_id: str | None = None


def aggregate_by_category(
    report: GroundingReport,
    labels: Mapping[str, Sequence[str]],
    verticals: Mapping[str, str] | None = None,
    min_videos: int = 1,
) -> list[CategoryReport]:
    """Unweighted mean of per-video intra AUC per category; a video with
    several labels contributes to each of them."""
    per_cat: dict[str, list[float]] = defaultdict(list)
    for v in report.videos:
        if v.intra_auc is None:
            continue
        for cat in labels.get(v.video_id, []):
            per_cat[cat].append(v.intra_auc)
    out = []
    for cat in sorted(per_cat):
        scores = per_cat[cat]
        if len(scores) < min_videos:
            continue
        out.append(
            CategoryReport(
                category_id=cat,
                mean_auc=float(np.mean(scores)),
                n_videos=len(scores),
                vertical_id=(verticals or {}).get(cat),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------

def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise UndefinedMetricError("correlation undefined: zero variance input")
    return float((xc @ yc) / denom)


def correlations(
    x: Sequence[float],
    y: Sequence[float],
    kind: str = "spearman",
    permutations: int = 0,
    seed: int = 0,
) -> tuple[float, float]:
    """Correlation coefficient and p-value.

    Spearman is Pearson on average ranks. The default p-value uses the
    t-approximation with n-2 degrees of freedom; ``permutations > 0`` switches
    to an exact-style permutation p-value (slower).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    if kind == "spearman":
        xs, ys = rankdata(x), rankdata(y)
    elif kind == "pearson":
        xs, ys = x, y
    else:
        raise ValueError(f"unknown correlation kind {kind!r}")
    r = _pearson(xs, ys)

    if permutations > 0:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(permutations):
            rp = _pearson(xs, rng.permutation(ys))
            if abs(rp) >= abs(r):
                hits += 1
        return r, (1 + hits) / (permutations + 1)

    if abs(r) >= 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * sps.t.sf(abs(t), df=n - 2))


# ---------------------------------------------------------------------------
# Model-vs-model win rates
# ---------------------------------------------------------------------------

def instructional_majority(
    votes: Mapping[str, tuple[int, int, int]], want_instructional: bool
) -> Callable[[str], bool]:
    """Predicate keeping videos whose 3 binary votes have the given majority
    (>= 2 of 3); videos without votes are excluded."""

    def keep(video_id: str) -> bool:
        v = votes.get(video_id)
        if v is None:
            return False
        return (sum(v) >= 2) == want_instructional

    return keep


def win_rate(
    reports_a: GroundingReport | Mapping[str, float],
    reports_b: GroundingReport | Mapping[str, float],
    include: Callable[[str], bool] | None = None,
) -> float:
    """Fraction of videos where model A's intra AUC beats model B's
    (ties count 0.5). Both reports must cover the same video set."""
    a = reports_a.intra_by_video() if isinstance(reports_a, GroundingReport) else dict(reports_a)
    b = reports_b.intra_by_video() if isinstance(reports_b, GroundingReport) else dict(reports_b)
    only_a = sorted(set(a) - set(b))
    only_b = sorted(set(b) - set(a))
    if only_a or only_b:
        raise ReportMismatchError(
            f"video sets differ: only in A: {only_a[:10]}, only in B: {only_b[:10]}"
        )
    vids = sorted(a)
    if include is not None:
        vids = [v for v in vids if include(v)]
    if not vids:
        raise UndefinedMetricError("no videos left after filtering")
    score = 0.0
    for v in vids:
        if a[v] > b[v]:
            score += 1.0
        elif a[v] == b[v]:
            score += 0.5
    return score / len(vids)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_grounding_csv(path: str | Path, report: GroundingReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["video_id", "n_segments", "intra_auc"])
        for v in report.videos:
            w.writerow([v.video_id, v.n_segments, "" if v.intra_auc is None else repr(float(v.intra_auc))])


def write_segments_csv(path: str | Path, report: GroundingReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["video_id", "start_s", "token_count", "relative_position", "segment_auc"])
        for v, s in report.iter_segments():
            w.writerow(
                [v.video_id, repr(float(s.start_s)), s.token_count,
                 repr(float(s.relative_position)), repr(float(s.segment_auc))]
            )


def write_categories_csv(path: str | Path, cats: Sequence[CategoryReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["category_id", "n_videos", "vertical_id", "mean_auc"])
        for c in cats:
            w.writerow([c.category_id, c.n_videos, c.vertical_id or "", repr(float(c.mean_auc))])


def read_grounding_csv(path: str | Path) -> dict[str, float]:
    """Inverse of :func:`write_grounding_csv`, keeping only scored videos."""
    out: dict[str, float] = {}
    with open(path, "r", newline="") as f:
        for row in csv.DictReader(f):
            if row["intra_auc"]:
                out[row["video_id"]] = float(row["intra_auc"])
    return out
