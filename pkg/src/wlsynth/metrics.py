"""Fidelity metrics between target and replayed features.

MAE, GMAPE and GMQE per dimension at window level, and for metrics at
interval level.  Geometric means are computed as means of logs so long,
badly-matched series neither overflow nor underflow.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .trace import IntervalTarget, Trace, WindowTarget, build_targets

EPS_DEFAULT = 1e-9


def _check_lengths(targets, achieved) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(targets, dtype=float)
    a = np.asarray(achieved, dtype=float)
    if t.shape != a.shape or t.ndim != 1 or t.size == 0:
        raise ValidationError("series must be nonempty 1-D arrays of equal length")
    return t, a


def mae(targets, achieved) -> float:
    t, a = _check_lengths(targets, achieved)
    return float(np.mean(np.abs(t - a)))


def gmape(targets, achieved, eps: float = EPS_DEFAULT) -> float:
    """Geometric mean of (relative error + 1), minus 1; zero targets floored at eps."""
    t, a = _check_lengths(targets, achieved)
    rel = np.abs(t - a) / np.maximum(np.abs(t), eps)
    return float(np.expm1(np.mean(np.log1p(rel))))


def gmqe(targets, achieved, eps: float = EPS_DEFAULT) -> float:
    """Geometric mean of max(F/F~, F~/F) per point, both values floored at eps."""
    t, a = _check_lengths(targets, achieved)
    t = np.maximum(np.abs(t), eps)
    a = np.maximum(np.abs(a), eps)
    q = np.maximum(np.log(t) - np.log(a), np.log(a) - np.log(t))
    return float(np.exp(np.mean(q)))


@dataclass
class DimensionScores:
    mae: float
    gmape: float
    gmqe: float
    n: int


@dataclass
class FidelityReport:
    window_level: dict[str, DimensionScores]
    interval_level: dict[str, DimensionScores]
    # (ts, dimension, target, replayed): interval series for metrics,
    # window series for operators
    plot_data: list[tuple[int, str, float, float]]

    def rows(self) -> list[tuple[str, str, str, float, int]]:
        out = []
        for level, scores in (("window", self.window_level), ("interval", self.interval_level)):
            for dim in sorted(scores):
                s = scores[dim]
                out.append((level, dim, "mae", s.mae, s.n))
                out.append((level, dim, "gmape", s.gmape, s.n))
                out.append((level, dim, "gmqe", s.gmqe, s.n))
        return out


def _scores(target_series: np.ndarray, achieved_series: np.ndarray, eps: float) -> DimensionScores:
    return DimensionScores(
        mae=mae(target_series, achieved_series),
        gmape=gmape(target_series, achieved_series, eps),
        gmqe=gmqe(target_series, achieved_series, eps),
        n=len(target_series),
    )


def report(
    window_targets: list[WindowTarget],
    interval_targets: list[IntervalTarget],
    replayed: Trace,
    eps: float = EPS_DEFAULT,
) -> FidelityReport:
    """Compare the replayed trace against the original targets on their grid."""
    if not window_targets:
        raise ValidationError("no window targets")
    window_len_ms = window_targets[0].window_len_ms
    starts = sorted(t.interval_start_ts for t in interval_targets)
    interval_len_ms = starts[1] - starts[0] if len(starts) > 1 else window_len_ms
    span_start = min(w.window_start_ts for w in window_targets)
    span_end = max(w.window_start_ts + w.window_len_ms for w in window_targets)

    rep_windows, rep_intervals = build_targets(
        replayed, window_len_ms, interval_len_ms, span=(span_start, span_end)
    )
    if len(rep_windows) != len(window_targets) or len(rep_intervals) != len(interval_targets):
        raise ValidationError("replayed trace grid does not match the target grid")

    schema = replayed.schema
    tgt_w = np.array([w.feature.as_vector() for w in sorted(window_targets,
                                                            key=lambda w: w.window_index)])
    rep_w = np.array([w.feature.as_vector() for w in rep_windows])
    window_level = {
        dim: _scores(tgt_w[:, d], rep_w[:, d], eps)
        for d, dim in enumerate(schema.dimensions)
    }

    def key(t):
        return t.interval_start_ts

    tgt_i = np.array([t.metrics for t in sorted(interval_targets, key=key)])
    rep_i = np.array([t.metrics for t in sorted(rep_intervals, key=key)])
    interval_level = {
        m: _scores(tgt_i[:, d], rep_i[:, d], eps) for d, m in enumerate(schema.metrics)
    }

    plot_data: list[tuple[int, str, float, float]] = []
    interval_ts = [t.interval_start_ts for t in sorted(interval_targets, key=key)]
    for d, m in enumerate(schema.metrics):
        for row, ts in enumerate(interval_ts):
            plot_data.append((ts, m, float(tgt_i[row, d]), float(rep_i[row, d])))
    window_ts = [w.window_start_ts for w in sorted(window_targets, key=lambda w: w.window_index)]
    for d, op in enumerate(schema.operators):
        col = schema.n_metrics + d
        for row, ts in enumerate(window_ts):
            plot_data.append((ts, op, float(tgt_w[row, col]), float(rep_w[row, col])))

    return FidelityReport(window_level, interval_level, plot_data)


def write_report(rep: FidelityReport, scores_path, plot_path) -> None:
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "dimension", "metric", "value", "n"])
        for level, dim, name, value, n in rep.rows():
            writer.writerow([level, dim, name, repr(value), n])
    with open(plot_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "dimension", "target", "replayed"])
        for ts, dim, target, replayed in rep.plot_data:
            writer.writerow([ts, dim, repr(target), repr(replayed)])
