"""Evaluation statistics: rank AUC, probit, Thurstone Case V scaling,
per-item score normalization, stratified k-fold evaluation of the linear head,
and percentile-ranked reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .realnet import fit_linear_head


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with average ranks for ties; label 1 is positive."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1 or s.size < 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------- probit

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def probit(p: float) -> float:
    """Inverse standard-normal CDF, refined by one Newton step."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probit needs 0 < p < 1, got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    density = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return x - (normal_cdf(x) - p) / density


# ---------------------------------------------------------------- paired comparisons

@dataclass
class PairwiseTable:
    """``counts[i][j]`` = judgments preferring item i over item j."""

    counts: np.ndarray
    items: list | None = None

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("counts must be square")
        if np.any(np.diag(c) != 0):
            raise ValueError("counts[i][i] must be 0")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        self.counts = c

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "PairwiseTable":
        """Build from ``{item_a, item_b, wins_a, wins_b}`` rows; items are sorted."""
        items = sorted({r["item_a"] for r in rows} | {r["item_b"] for r in rows}, key=str)
        pos = {it: i for i, it in enumerate(items)}
        counts = np.zeros((len(items), len(items)))
        for r in rows:
            a, b = pos[r["item_a"]], pos[r["item_b"]]
            counts[a, b] += r["wins_a"]
            counts[b, a] += r["wins_b"]
        return cls(counts, items)


def thurstone_case_v(table: PairwiseTable) -> np.ndarray:
    """Case V interval scores (zero mean) by least squares on probit win rates.

    Win rates on a pair with ``m`` judgments are clamped to
    ``[1/(2m), 1 - 1/(2m)]`` before the probit.
    """
    n = table.n
    if n < 2:
        raise ValueError("need at least two items")
    c = table.counts
    missing = [(i, j) for i, j in combinations(range(n), 2) if c[i, j] + c[j, i] == 0]
    if missing:
        raise ValueError(f"pairs without judgments: {missing}")
    rows, rhs = [], []
    for i, j in combinations(range(n), 2):
        m = c[i, j] + c[j, i]
        p = min(max(c[i, j] / m, 1.0 / (2 * m)), 1.0 - 1.0 / (2 * m))
        row = np.zeros(n)
        row[i], row[j] = 1.0, -1.0
        rows.append(row)
        rhs.append(probit(p))
    a = np.asarray(rows)
    b = np.asarray(rhs)
    # normal equations with the zero-mean gauge as an extra row
    lhs = a.T @ a + np.ones((n, n))
    s = np.linalg.solve(lhs, a.T @ b)
    return s - s.mean()


def normalize_per_item(scores) -> np.ndarray:
    """Scale each item column (methods x items) to unit population std."""
    m = np.array(scores, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a methods x items matrix")
    std = m.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return m / scale


# ---------------------------------------------------------------- cross-validation

@dataclass
class KFoldResult:
    fold_auc: list[float]
    mean_auc: float
    folds: list[np.ndarray]


def stratified_folds(labels, folds: int, seed: int) -> list[np.ndarray]:
    y = np.asarray(labels)
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise ValueError(f"class {cls!r} has {len(idx)} samples, fewer than {folds} folds")
        perm = rng.permutation(idx)
        assign[perm] = np.arange(len(perm)) % folds
    if len(np.unique(y)) < 2:
        raise ValueError("need both classes")
    return [np.flatnonzero(assign == k) for k in range(folds)]


def kfold_eval(features, labels, folds: int = 10, seed: int = 0, C: float = 1.0) -> KFoldResult:
    """Stratified k-fold AUC of the linear head."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    parts = stratified_folds(y, folds, seed)
    aucs = []
    for k, test in enumerate(parts):
        train = np.setdiff1d(np.arange(len(y)), test)
        head = fit_linear_head(x[train], y[train], C=C, seed=seed + k)
        aucs.append(roc_auc(head.decision_function(x[test]), y[test]))
    return KFoldResult(aucs, float(np.mean(aucs)), parts)


# ---------------------------------------------------------------- reports

DEFAULT_BANDS = (10, 25, 50, 75, 90, 100)


def rank_report(scores, metadata: Sequence[dict] | None = None, percentiles=DEFAULT_BANDS) -> list[dict]:
    """Rows sorted by descending score with percentile and band.

    ``percentile`` = 100 * (n - rank + 1) / n (top item = 100); ``band`` is the
    smallest configured percentile at or above it. Ties sort by the row's
    canonical metadata JSON, so input order never matters.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    meta = list(metadata) if metadata is not None else [{} for _ in range(len(s))]
    if len(meta) != len(s):
        raise ValueError("one metadata entry per score")
    bands = sorted(percentiles)
    keyed = sorted(range(len(s)), key=lambda i: (-s[i], json.dumps(meta[i], sort_keys=True)))
    n = len(s)
    rows = []
    for rank, i in enumerate(keyed, start=1):
        pct = 100.0 * (n - rank + 1) / n
        band = next((b for b in bands if b >= pct - 1e-9), bands[-1])
        rows.append({"rank": rank, "score": float(s[i]), "percentile": pct, "band": band, **meta[i]})
    return rows


def write_jsonl(path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def format_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Plain-text, fixed-width rendering of report rows."""
    if not rows:
        return "(empty)\n"
    cols = list(columns) if columns else list(rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return json.dumps(v) if isinstance(v, (dict, list)) else str(v)

    body = [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[k]) for b in body)) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
