"""Regression attribution of segment-level AUC.

Within one category, per-segment AUC is regressed on contextual controls
(relative position, its square, token count) plus unigram indicator features,
and a nested-model F-test asks whether the lexical features add predictive
capacity over the controls alone.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import stats as sps

from .errors import DataError, DegenerateDesignError
from .metrics import GroundingReport, SegmentGrounding

CONTROL_COLUMNS = ["intercept", "relative_position", "relative_position_sq", "token_count"]
UNIGRAM_PREFIX = "unigram:"


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    dropped_columns: list[str] = field(default_factory=list)  # constant-zero
    reduced_top_k: int | None = None  # set when top_k had to shrink


@dataclass
class OlsFit:
    columns: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    rss: float
    dof: int
    n_rows: int
    rank: int
    dropped_columns: list[str] = field(default_factory=list)  # linearly dependent

    def coefficient(self, column: str) -> float:
        return float(self.coefficients[self.columns.index(column)])

    def std_error(self, column: str) -> float:
        return float(self.std_errors[self.columns.index(column)])


# ---------------------------------------------------------------------------
# Design matrix
# ---------------------------------------------------------------------------

def category_segment_rows(
    report: GroundingReport, labels: Mapping[str, Sequence[str]], category: str
) -> list[SegmentGrounding]:
    """All segment rows of videos labeled with ``category``."""
    rows: list[SegmentGrounding] = []
    for v in report.videos:
        if category in labels.get(v.video_id, []):
            rows.extend(v.segments)
    return rows


def build_design(
    rows: Sequence[SegmentGrounding],
    top_k_unigrams: int = 500,
    min_doc_freq: int = 10,
) -> DesignMatrix:
    """Controls plus indicators for the ``top_k_unigrams`` most frequent
    token types (by segment document frequency, ties lexicographic).

    The indicator is 1 iff the token type occurs in the segment. ``top_k`` is
    reduced with a warning whenever rows would not outnumber columns.
    """
    if not rows:
        raise DataError("design matrix needs at least one segment")
    n = len(rows)

    doc_freq: Counter[str] = Counter()
    for r in rows:
        doc_freq.update(set(r.token_types))
    candidates = [(tok, c) for tok, c in doc_freq.items() if c >= min_doc_freq]
    candidates.sort(key=lambda item: (-item[1], item[0]))

    reduced = None
    max_k = n - len(CONTROL_COLUMNS) - 1  # keep rows > columns
    k = min(top_k_unigrams, len(candidates))
    if k > max_k:
        reduced = max(0, max_k)
        warnings.warn(
            f"top_k_unigrams reduced from {k} to {reduced} so rows ({n}) exceed columns"
        )
        k = reduced
    chosen = [tok for tok, _ in candidates[:k]]

    columns = list(CONTROL_COLUMNS) + [UNIGRAM_PREFIX + t for t in chosen]
    X = np.zeros((n, len(columns)))
    y = np.empty(n)
    tok_col = {tok: 4 + i for i, tok in enumerate(chosen)}
    for i, r in enumerate(rows):
        X[i, 0] = 1.0
        X[i, 1] = r.relative_position
        X[i, 2] = r.relative_position**2
        X[i, 3] = r.token_count
        for tok in r.token_types:
            j = tok_col.get(tok)
            if j is not None:
                X[i, j] = 1.0
        y[i] = r.segment_auc

    nonzero = np.any(X != 0.0, axis=0)
    dropped = [c for c, keep in zip(columns, nonzero) if not keep]
    if dropped:
        warnings.warn(f"dropping constant-zero columns: {dropped}")
        X = X[:, nonzero]
        columns = [c for c, keep in zip(columns, nonzero) if keep]
    return DesignMatrix(X=X, y=y, columns=columns, dropped_columns=dropped, reduced_top_k=reduced)


# ---------------------------------------------------------------------------
# OLS via pivoted QR
# ---------------------------------------------------------------------------

def ols_fit(X: np.ndarray, y: np.ndarray, columns: Sequence[str] | None = None) -> OlsFit:
    """Least squares through a rank-revealing QR; linearly dependent columns
    are dropped (with a warning) rather than producing an unstable solve."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n < p:
        raise DataError(f"need rows >= columns, got {n} x {p}")
    names = list(columns) if columns is not None else [f"x{j}" for j in range(p)]

    q, r, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank == 0:
        raise DegenerateDesignError("design matrix has rank zero")
    kept_piv = piv[:rank]
    dropped = sorted(names[j] for j in piv[rank:])
    if dropped:
        warnings.warn(f"dropping linearly dependent columns: {dropped}")

    r1 = r[:rank, :rank]
    qty = q.T @ y
    beta_piv = sla.solve_triangular(r1, qty[:rank])

    # residuals against the kept columns only
    resid = y - X[:, kept_piv] @ beta_piv
    rss = float(resid @ resid)
    dof = n - rank

    r1_inv = sla.solve_triangular(r1, np.eye(rank))
    xtx_inv_diag = np.sum(r1_inv * r1_inv, axis=1)
    sigma2 = rss / dof if dof > 0 else float("nan")
    se_piv = np.sqrt(sigma2 * xtx_inv_diag)

    # report in original column order, restricted to kept columns
    order = np.argsort(kept_piv)
    kept_sorted = kept_piv[order]
    return OlsFit(
        columns=[names[j] for j in kept_sorted],
        coefficients=beta_piv[order],
        std_errors=se_piv[order],
        rss=rss,
        dof=dof,
        n_rows=n,
        rank=rank,
        dropped_columns=dropped,
    )


def fit_design(design: DesignMatrix) -> OlsFit:
    return ols_fit(design.X, design.y, design.columns)


# ---------------------------------------------------------------------------
# Nested-model F-test
# ---------------------------------------------------------------------------

def f_test_nested(fit_restricted: OlsFit, fit_full: OlsFit) -> tuple[float, float]:
    """F = ((RSS_r - RSS_f)/d1) / (RSS_f/d2); upper-tail p via the F
    distribution (regularized incomplete beta)."""
    if fit_restricted.n_rows != fit_full.n_rows:
        raise DataError("nested fits must use the same rows")
    if not set(fit_restricted.columns) <= set(fit_full.columns):
        raise DataError("restricted model columns must be a subset of the full model's")
    d1 = fit_restricted.dof - fit_full.dof
    if d1 == 0:
        return 0.0, 1.0
    d2 = fit_full.dof
    if d2 <= 0:
        raise DataError("full model has no residual degrees of freedom")
    if fit_full.rss == 0.0:
        return float("inf"), 0.0
    num = max(0.0, fit_restricted.rss - fit_full.rss) / d1
    f_stat = num / (fit_full.rss / d2)
    return float(f_stat), float(sps.f.sf(f_stat, d1, d2))


# ---------------------------------------------------------------------------
# Coefficient reporting
# ---------------------------------------------------------------------------

def report_coefficients(fit: OlsFit, top_n: int | None = None) -> list[tuple[str, float, float]]:
    """Unigram terms ranked by signed coefficient, descending; ties break
    lexicographically. Falls back to all non-intercept terms when the fit has
    no unigram columns."""
    rows = [
        (name, float(c), float(se))
        for name, c, se in zip(fit.columns, fit.coefficients, fit.std_errors)
        if name.startswith(UNIGRAM_PREFIX)
    ]
    if not rows:
        rows = [
            (name, float(c), float(se))
            for name, c, se in zip(fit.columns, fit.coefficients, fit.std_errors)
            if name != "intercept"
        ]
    rows.sort(key=lambda r: (-r[1], r[0]))
    if top_n is not None:
        rows = rows[:top_n]
    return rows


def write_analysis_csv(path: str | Path, fit: OlsFit) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["term", "coefficient", "std_error"])
        for name, c, se in zip(fit.columns, fit.coefficients, fit.std_errors):
            w.writerow([name, repr(float(c)), repr(float(se))])


def write_ftest_json(path: str | Path, f_stat: float, d1: int, d2: int, p: float) -> None:
    with open(path, "w") as f:
        json.dump({"F": f_stat, "df1": d1, "df2": d2, "p": p}, f, sort_keys=True, indent=2)
        f.write("\n")
