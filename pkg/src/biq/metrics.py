"""Correlation coefficients and the level-vs-score evaluation harness.

Kendall and Spearman follow the tie-free textbook formulas exactly. Tied
inputs, like zero-variance inputs to Pearson, raise ``UndefinedCorrelation``
rather than silently switching to a tie-corrected variant.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from biq.distortions import FAMILIES, PRISTINE, Manifest

COEFFICIENTS = ("pearson", "kendall", "spearman")


class UndefinedCorrelation(ValueError):
    """Coefficient does not exist for this input (ties or zero variance)."""

    def __init__(self, message: str, ties: int = 0):
        super().__init__(message)
        self.ties = ties


def _pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"series must be 1-D and of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("series must be finite")
    return x, y


def _tie_count(v: np.ndarray) -> int:
    _, counts = np.unique(v, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _require_no_ties(x: np.ndarray, y: np.ndarray) -> None:
    ties = _tie_count(x) + _tie_count(y)
    if ties:
        raise UndefinedCorrelation(f"{ties} tied pair(s) in input", ties=ties)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(np.mean(dx * dx))
    sy = math.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelation("zero variance")
    r = float(np.mean(dx * dy)) / (sx * sy)
    return min(1.0, max(-1.0, r))


def kendall(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _pair(x, y)
    _require_no_ties(x, y)
    n = x.size
    s = np.sign(x[:, None] - x[None, :]) * np.sign(y[:, None] - y[None, :])
    # each unordered pair appears twice in the full matrix
    return float(np.sum(s) / 2) / (n * (n - 1) / 2)


def ranks(v: Sequence[float]) -> np.ndarray:
    """1-based ranks of a tie-free series."""
    v = np.asarray(v)
    r = np.empty(v.size)
    r[np.argsort(v, kind="stable")] = np.arange(1, v.size + 1)
    return r


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _pair(x, y)
    _require_no_ties(x, y)
    n = x.size
    d = ranks(x) - ranks(y)
    return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))


def kendall_bruteforce(x: Sequence[float], y: Sequence[float]) -> float:
    """Exhaustive pair enumeration, counting concordant and discordant pairs."""
    c = d = 0
    for i, j in combinations(range(len(x)), 2):
        prod = (x[i] - x[j]) * (y[i] - y[j])
        if prod > 0:
            c += 1
        elif prod < 0:
            d += 1
    return (c - d) / (c + d)


# ---------------------------------------------------------------------------
# evaluation harness


@dataclass
class GroupResult:
    image_id: str
    family: str
    levels: list[int]
    scores: list[float]
    pearson: float | None = None
    kendall: float | None = None
    spearman: float | None = None
    note: str = ""


@dataclass
class EvaluationReport:
    groups: list[GroupResult] = field(default_factory=list)
    means: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)
    incomplete: list[tuple[str, str, str]] = field(default_factory=list)
    seconds_per_image: float | None = None

    def family_means(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for fam in sorted({g.family for g in self.groups}):
            row = {}
            for name in COEFFICIENTS:
                vals = [getattr(g, name) for g in self.groups if g.family == fam and getattr(g, name) is not None]
                if vals:
                    row[name] = float(np.mean(vals))
            out[fam] = row
        return out

    def mean_scores_by_level(self, family: str) -> list[float]:
        """Mean score at each level 0..5 over the complete groups of one family."""
        seqs = [g.scores for g in self.groups if g.family == family and len(g.scores) == 6]
        return list(np.mean(seqs, axis=0)) if seqs else []

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("kind,image_id,family,pearson,kendall,spearman,note\n")

        def fmt(v):
            return "" if v is None else repr(float(v))

        for g in self.groups:
            buf.write(f"group,{g.image_id},{g.family},{fmt(g.pearson)},{fmt(g.kendall)},{fmt(g.spearman)},{g.note}\n")
        for fam, row in self.family_means().items():
            buf.write(f"family_mean,,{fam},{fmt(row.get('pearson'))},{fmt(row.get('kendall'))},{fmt(row.get('spearman'))},\n")
        buf.write(
            f"grand_mean,,,{fmt(self.means.get('pearson'))},{fmt(self.means.get('kendall'))},"
            f"{fmt(self.means.get('spearman'))},groups={len(self.groups)}\n"
        )
        for name in COEFFICIENTS:
            buf.write(f"excluded,,,{name},{self.excluded.get(name, 0)},,\n")
        for image_id, fam, why in self.incomplete:
            buf.write(f"incomplete,{image_id},{fam},,,,{why}\n")
        return buf.getvalue()

    def summary(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        lines = [f"groups evaluated: {len(self.groups)} (incomplete: {len(self.incomplete)})"]
        header = f"{'family':<12} {'pearson':>9} {'kendall':>9} {'spearman':>9}"
        lines.append(header)
        for fam, row in self.family_means().items():
            lines.append(f"{fam:<12} " + " ".join(f"{fmt(row.get(n)):>9}" for n in COEFFICIENTS))
        time_col = "n/a" if self.seconds_per_image is None else f"{self.seconds_per_image:.3f}"
        lines.append(
            f"{'overall':<12} " + " ".join(f"{fmt(self.means.get(n)):>9}" for n in COEFFICIENTS)
            + f"   time_sec/image: {time_col}"
        )
        for name in COEFFICIENTS:
            if self.excluded.get(name):
                lines.append(f"{name}: {self.excluded[name]} group(s) undefined and excluded")
        return "\n".join(lines)


def evaluate_series(levels: Sequence[float], scores: Sequence[float]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    notes = []
    for name, fn in (("pearson", pearson), ("kendall", kendall), ("spearman", spearman)):
        try:
            out[name] = fn(levels, scores)
        except UndefinedCorrelation as exc:
            out[name] = None
            notes.append(f"{name}: {exc}")
    out["note"] = "; ".join(notes)
    return out


def evaluate(manifest: Manifest) -> EvaluationReport:
    """Correlate scores with levels 0..5 for every (image, family) group.

    Level 0 of every family is the image's shared pristine row. Groups with a
    missing level or score are reported as incomplete and left out of the means.
    """
    pristine: dict[str, float | None] = {}
    by_group: dict[tuple[str, str], dict[int, float | None]] = defaultdict(dict)
    order: list[str] = []
    for row in manifest.rows:
        if row.image_id not in pristine and row.image_id not in order:
            order.append(row.image_id)
        if row.family == PRISTINE:
            pristine[row.image_id] = row.score
        else:
            by_group[(row.image_id, row.family)][row.level] = row.score

    report = EvaluationReport()
    families = list(FAMILIES) + sorted({f for _, f in by_group} - set(FAMILIES))
    for image_id in order:
        for fam in families:
            if (image_id, fam) not in by_group:
                if fam in FAMILIES:
                    report.incomplete.append((image_id, fam, "family missing"))
                continue
            levels = dict(by_group[(image_id, fam)])
            levels[0] = pristine.get(image_id)
            missing = [lvl for lvl in range(6) if levels.get(lvl) is None]
            if missing:
                report.incomplete.append((image_id, fam, "missing level(s) " + " ".join(map(str, missing))))
                continue
            xs = list(range(6))
            ys = [float(levels[lvl]) for lvl in xs]
            res = evaluate_series(xs, ys)
            report.groups.append(GroupResult(image_id, fam, xs, ys, res["pearson"], res["kendall"], res["spearman"], res["note"]))

    for name in COEFFICIENTS:
        vals = [getattr(g, name) for g in report.groups if getattr(g, name) is not None]
        report.counts[name] = len(vals)
        report.excluded[name] = len(report.groups) - len(vals)
        if vals:
            report.means[name] = float(np.mean(vals))
    return report
