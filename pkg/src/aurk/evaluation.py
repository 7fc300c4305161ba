"""Frame-based F1, segment-duration statistics and the F1/duration correlation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from aurk.errors import InsufficientDataError, ShapeError


@dataclass
class ConfusionCounts:
    """Per-AU TP/FP/FN/TN; ``merge`` is associative so partial folds combine."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def zeros(cls, L: int) -> ConfusionCounts:
        z = np.zeros(L, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def from_arrays(cls, preds, gts, frame_ids: Sequence[str] | None = None) -> ConfusionCounts:
        p = np.asarray(preds)
        g = np.asarray(gts)
        if p.shape != g.shape:
            where = ""
            if frame_ids is not None and p.ndim == 2 and g.ndim == 2 and len(p) != len(g):
                k = min(len(p), len(g))
                where = f" (first unmatched frame: {frame_ids[k] if k < len(frame_ids) else '?'})"
            raise ShapeError(f"predictions {p.shape} and ground truth {g.shape} differ{where}")
        if p.ndim == 1:
            p, g = p[:, None], g[:, None]
        p = p.astype(bool)
        g = g.astype(bool)
        return cls((p & g).sum(0), (p & ~g).sum(0), (~p & g).sum(0), (~p & ~g).sum(0))

    def merge(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def f1_from_counts(tp, fp, fn) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 with 0 wherever a denominator vanishes."""
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f = np.where(p + r > 0, 2.0 * p * r / (p + r), 0.0)
    return p, r, f


@dataclass
class EvalReport:
    aus: tuple[int, ...]
    per_au_f1: list[tuple[int, float]]
    avg_f1: float
    counts: ConfusionCounts
    precision: np.ndarray
    recall: np.ndarray

    def to_json(self) -> dict:
        return {
            "avg_f1": self.avg_f1,
            "per_au": [{"au": au, "f1": f, "precision": float(p), "recall": float(r),
                        "tp": int(tp), "fp": int(fp), "fn": int(fn)}
                       for (au, f), p, r, tp, fp, fn in zip(self.per_au_f1, self.precision, self.recall,
                                                            self.counts.tp, self.counts.fp, self.counts.fn)],
        }


def report_from_counts(aus: Sequence[int], counts: ConfusionCounts) -> EvalReport:
    p, r, f = f1_from_counts(counts.tp, counts.fp, counts.fn)
    per = [(int(a), float(v)) for a, v in zip(aus, f)]
    avg = float(np.mean(f)) if len(f) else 0.0
    return EvalReport(tuple(int(a) for a in aus), per, avg, counts, p, r)


def f1_per_au(preds, gts, aus: Sequence[int] | None = None,
              frame_ids: Sequence[str] | None = None) -> EvalReport:
    """Frame-based F1 for every label column; the average is unweighted over all columns."""
    counts = ConfusionCounts.from_arrays(preds, gts, frame_ids)
    if aus is None:
        aus = tuple(range(1, len(counts.tp) + 1))
    if len(aus) != len(counts.tp):
        raise ShapeError(f"{len(aus)} AU numbers for {len(counts.tp)} label columns")
    return report_from_counts(aus, counts)


def write_f1_csv(path, reports: dict[str, EvalReport]) -> None:
    """One row per AU, one column per method, then an ``Avg`` row; F1 in percent."""
    methods = list(reports)
    aus = reports[methods[0]].aus
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["AU"] + methods)
        for i, au in enumerate(aus):
            w.writerow([str(au)] + [f"{100.0 * reports[m].per_au_f1[i][1]:.1f}" for m in methods])
        w.writerow(["Avg"] + [f"{100.0 * reports[m].avg_f1:.1f}" for m in methods])


def write_report_json(path, reports: dict[str, EvalReport]) -> None:
    Path(path).write_text(json.dumps({m: r.to_json() for m, r in reports.items()}, indent=2,
                                     sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# segment durations


def run_lengths(seq) -> np.ndarray:
    """Lengths of the maximal runs of ones."""
    s = np.asarray(seq).astype(np.int8).ravel()
    if s.size == 0:
        return np.zeros(0, dtype=np.int64)
    d = np.diff(np.concatenate([[0], s, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return (ends - starts).astype(np.int64)


def duration_segments(seq) -> tuple[float, int]:
    """``(average run length, run count)``; ``(0, 0)`` when nothing is active."""
    runs = run_lengths(seq)
    if runs.size == 0:
        return 0.0, 0
    return float(runs.sum()) / runs.size, int(runs.size)


@dataclass
class DurationStats:
    aus: tuple[int, ...]
    avg_duration: np.ndarray
    segment_count: np.ndarray

    def rows(self) -> list[list[str]]:
        return [["AU"] + [str(a) for a in self.aus],
                ["Avg duration"] + [f"{d:.1f}" for d in self.avg_duration],
                ["Seg count"] + [str(int(c)) for c in self.segment_count]]


def duration_stats(labels: np.ndarray, aus: Sequence[int], videos: Sequence | None = None) -> DurationStats:
    """Per-AU statistics over ``(N, L)`` labels; runs never span two videos."""
    lab = np.asarray(labels)
    if lab.ndim != 2 or lab.shape[1] != len(aus):
        raise ShapeError(f"labels {lab.shape} do not match {len(aus)} AUs")
    vids = np.zeros(len(lab), dtype=np.int64) if videos is None else np.asarray(videos)
    if len(vids) != len(lab):
        raise ShapeError("one video id per frame is required")
    totals = np.zeros(len(aus))
    counts = np.zeros(len(aus), dtype=np.int64)
    for v in dict.fromkeys(vids.tolist()):
        sel = lab[vids == v]
        for j in range(len(aus)):
            runs = run_lengths(sel[:, j])
            totals[j] += runs.sum()
            counts[j] += runs.size
    avg = np.where(counts > 0, totals / np.maximum(counts, 1), 0.0)
    return DurationStats(tuple(aus), avg, counts)


def write_rows_csv(path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# ----------------------------------------------------------------------------
# correlation between F1 gains and activity duration


@dataclass
class CorrelationReport:
    aus: tuple[int, ...]
    f1_improvement: np.ndarray
    scaled_duration: np.ndarray
    pearson_r: float


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        raise InsufficientDataError("correlation is undefined for a constant series")
    return float((da * db).sum() / denom)


def correlation_report(aus: Sequence[int], f1_improvement, avg_duration, scale: float = 1.0 / 60.0,
                       csv_path=None, plot_path=None) -> CorrelationReport:
    """Pair per-AU F1 gains with rescaled durations; optionally write CSV and a PNG."""
    f = np.asarray(f1_improvement, dtype=np.float64)
    d = np.asarray(avg_duration, dtype=np.float64)
    if not (len(aus) == len(f) == len(d)):
        raise ShapeError("AU list, F1 gains and durations must align")
    if len(aus) < 3:
        raise InsufficientDataError("at least 3 AUs are needed for a correlation")
    rep = CorrelationReport(tuple(aus), f, d * scale, pearson_r(f, d * scale))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["AU", "f1_improvement", "scaled_duration"])
            for a, x, y in zip(rep.aus, rep.f1_improvement, rep.scaled_duration):
                w.writerow([a, repr(float(x)), repr(float(y))])
            w.writerow(["pearson_r", repr(rep.pearson_r), ""])
    if plot_path is not None:
        _plot_correlation(rep, plot_path)
    return rep


def _plot_correlation(rep: CorrelationReport, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.arange(len(rep.aus))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(x, rep.f1_improvement, marker="o", label="F1 improvement")
    ax.plot(x, rep.scaled_duration, marker="s", label="scaled avg duration")
    ax.set_xticks(x, [f"AU {a}" for a in rep.aus])
    ax.set_title(f"Pearson r = {rep.pearson_r:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
