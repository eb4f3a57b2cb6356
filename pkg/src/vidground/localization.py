"""Procedural step localization.

A fixed-length window slides over the video at 1 s stride; every ordered step
text is scored against every window position. Dynamic programming picks one
time per step under a strictly-increasing-in-time constraint, and recall
counts a step as hit only when the predicted time lands inside
[floor(gt_start), ceil(gt_end)) -- the ceiling bound is strict.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import FeatureTrack, Vocabulary, normalize_token
from .errors import DataError, InfeasibleAlignmentError, ParseError
from .model import _as_view


@dataclass
class TaskSteps:
    task_id: str
    step_texts: list[str]
    step_token_ids: list[list[int]]


@dataclass
class StepAnnotation:
    """Ground-truth windows for one (task, video): (step index, start_s, end_s)."""

    task_id: str
    video_id: str
    entries: list[tuple[int, float, float]]


@dataclass
class ScoreGrid:
    scores: np.ndarray  # (n_steps, n_window_positions)
    window_len_s: float
    stride_s: float = 1.0

    @property
    def n_steps(self) -> int:
        return self.scores.shape[0]

    @property
    def n_positions(self) -> int:
        return self.scores.shape[1]


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

def load_tasks(path: str | Path, vocab: Vocabulary) -> dict[str, TaskSteps]:
    """``tasks.tsv``: ``task_id<TAB>step_index<TAB>step text``; indices per
    task must form 0..K-1."""
    rows: dict[str, dict[int, str]] = defaultdict(dict)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected task_id<TAB>step_index<TAB>text")
            try:
                idx = int(parts[1])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-integer step index") from e
            if idx in rows[parts[0]]:
                raise ParseError(f"{path}:{lineno}: duplicate step {idx} for task {parts[0]}")
            rows[parts[0]][idx] = parts[2]
    out: dict[str, TaskSteps] = {}
    for task_id, steps in rows.items():
        if sorted(steps) != list(range(len(steps))):
            raise ParseError(f"{path}: task {task_id} step indices are not contiguous from 0")
        texts = [steps[i] for i in range(len(steps))]
        ids = []
        for i, text in enumerate(texts):
            toks = [normalize_token(t) for t in text.split()]
            toks = [t for t in toks if t]
            if not toks:
                raise ParseError(f"{path}: task {task_id} step {i} has no usable tokens")
            ids.append(vocab.encode(toks))
        out[task_id] = TaskSteps(task_id=task_id, step_texts=texts, step_token_ids=ids)
    return out


def load_annotations(path: str | Path) -> list[StepAnnotation]:
    """``annotations.tsv``: ``task_id<TAB>video_id<TAB>step_index<TAB>start_s<TAB>end_s``."""
    grouped: dict[tuple[str, str], list[tuple[int, float, float]]] = defaultdict(list)
    order: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 tab-separated fields")
            try:
                idx = int(parts[2])
                start_s, end_s = float(parts[3]), float(parts[4])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: bad step index or timestamp") from e
            if start_s > end_s:
                raise ParseError(f"{path}:{lineno}: start_s {start_s} > end_s {end_s}")
            key = (parts[0], parts[1])
            if key not in grouped:
                order.append(key)
            grouped[key].append((idx, start_s, end_s))
    return [
        StepAnnotation(task_id=t, video_id=v, entries=grouped[(t, v)]) for t, v in order
    ]


# ---------------------------------------------------------------------------
# Scoring and alignment
# ---------------------------------------------------------------------------

def score_grid(
    model_or_view,
    track: FeatureTrack,
    step_token_ids: Sequence[Sequence[int]],
    window_len_s: float,
) -> ScoreGrid:
    """Similarity of every step text to the window starting at each integer
    second; column count is duration - window_len + 1."""
    view = _as_view(model_or_view)
    duration = track.duration_s
    rows_per_window = int(math.ceil(window_len_s))
    if duration >= window_len_s:
        n_cols = int(math.floor(duration - window_len_s)) + 1
        windows = [track.features[t : t + rows_per_window] for t in range(n_cols)]
    elif duration >= 1:
        windows = [track.features]  # best effort: one clipped window at t=0
    else:
        raise DataError(f"{track.video_id}: video shorter than 1 s cannot be scored")
    step_embs = view.embed_text_many(step_token_ids)
    win_embs = view.embed_visual_many(windows)
    return ScoreGrid(scores=step_embs @ win_embs.T, window_len_s=window_len_s)


def dp_align(grid: ScoreGrid) -> list[tuple[int, int]]:
    """Assign each step one window time, times strictly increasing with step
    order, maximizing the total score; ties resolve to the earliest times."""
    scores = np.asarray(grid.scores, dtype=np.float64)
    k, t = scores.shape
    if k < 1:
        raise DataError("alignment needs at least one step")
    if k > t:
        raise InfeasibleAlignmentError(f"{k} steps cannot fit in {t} window positions")

    # best[s][c]: max total for steps s.. with step s exactly at column c;
    # tail[s][c]: max of best[s][c'] over c' >= c (suffix cummax)
    best = np.full((k, t), -np.inf)
    tail = np.full((k, t), -np.inf)
    best[k - 1] = scores[k - 1]
    tail[k - 1] = np.maximum.accumulate(best[k - 1][::-1])[::-1]
    for s in range(k - 2, -1, -1):
        nxt = np.full(t, -np.inf)
        nxt[:-1] = tail[s + 1][1:]
        best[s] = scores[s] + nxt
        tail[s] = np.maximum.accumulate(best[s][::-1])[::-1]

    assignment: list[tuple[int, int]] = []
    prev = -1
    for s in range(k):
        target = tail[s][prev + 1]
        # earliest column achieving the optimum; cummax guarantees a hit
        col = prev + 1 + int(np.argmax(best[s][prev + 1 :] == target))
        assignment.append((s, col))
        prev = col
    return assignment


def recall(
    predictions: Sequence[tuple[int, int]],
    ground_truth: Sequence[tuple[int, float, float]],
) -> float:
    """Fraction of annotated steps hit: floor(start) <= t_pred < ceil(end),
    the upper bound strict. Annotated steps without a prediction are misses."""
    if not ground_truth:
        raise DataError("recall needs at least one annotated step")
    pred = dict(predictions)
    hits = 0
    for step_idx, start_s, end_s in ground_truth:
        t = pred.get(step_idx)
        if t is None:
            warnings.warn(f"step {step_idx} annotated but not predicted; counted as miss")
            continue
        if math.floor(start_s) <= t < math.ceil(end_s):
            hits += 1
    return hits / len(ground_truth)


# ---------------------------------------------------------------------------
# Task-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class LocalizationReport:
    per_task: list[tuple[str, float]]  # (task_id, mean recall over its videos)
    macro_average: float
    n_skipped: int = 0  # annotations whose video or task was unavailable


def evaluate_localization(
    model_or_view,
    tracks: Mapping[str, FeatureTrack],
    tasks: Mapping[str, TaskSteps],
    annotations: Sequence[StepAnnotation],
    window_len_s: float,
) -> LocalizationReport:
    view = _as_view(model_or_view)
    by_task: dict[str, list[float]] = defaultdict(list)
    skipped = 0
    for ann in annotations:
        task = tasks.get(ann.task_id)
        track = tracks.get(ann.video_id)
        if task is None or track is None:
            warnings.warn(f"skipping annotation ({ann.task_id}, {ann.video_id}): unknown task or video")
            skipped += 1
            continue
        grid = score_grid(view, track, task.step_token_ids, window_len_s)
        preds = dp_align(grid)
        by_task[ann.task_id].append(recall(preds, ann.entries))
    per_task = [(tid, float(np.mean(by_task[tid]))) for tid in sorted(by_task)]
    macro = float(np.mean([r for _, r in per_task])) if per_task else float("nan")
    return LocalizationReport(per_task=per_task, macro_average=macro, n_skipped=skipped)


def write_recall_csv(path: str | Path, report: LocalizationReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task_id", "recall"])
        for task_id, r in report.per_task:
            w.writerow([task_id, repr(float(r))])
        w.writerow(["macro_average", repr(float(report.macro_average))])
