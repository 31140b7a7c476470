"""Standard depth-error metrics with optional median scaling."""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")
DEFAULT_CLAMP = (0.1, 100.0)


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    def as_tuple(self) -> tuple:
        return astuple(self)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def mean(cls, rows: Sequence["DepthMetrics"]) -> "DepthMetrics":
        if len(rows) == 0:
            raise ValueError("no metric rows to average")
        arr = np.array([r.as_tuple() for r in rows], dtype=np.float64)
        return cls(*(float(x) for x in arr.mean(axis=0)))


def evaluate(pred, gt, valid=None, median_scale: bool = True, clamp=DEFAULT_CLAMP) -> DepthMetrics:
    """Compare predicted and ground-truth depth over ``valid`` pixels."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} and gt {g.shape} differ in shape")
    m = np.ones(g.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if m.shape != g.shape:
        raise ValueError("valid mask shape differs from gt")
    p, g = p[m], g[m]
    if p.size == 0:
        raise ValueError("no valid pixels to evaluate")
    if not np.all(g > 0):
        raise ValueError("ground truth must be positive on valid pixels")
    if not np.all(np.isfinite(p)) or not np.all(p > 0):
        raise ValueError("predictions must be finite and positive on valid pixels")
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    if clamp is not None:
        lo, hi = clamp
        p = np.clip(p, lo, hi)
        g = np.clip(g, lo, hi)
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
    )


def format_row(m: DepthMetrics) -> list[str]:
    return [repr(float(x)) for x in m.as_tuple()]


def metrics_csv(rows: Iterable[DepthMetrics], include_mean: bool = True) -> str:
    """CSV text: header, one row per entry, then the arithmetic-mean row."""
    rows = list(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(format_row(r))
    if include_mean and rows:
        w.writerow(format_row(DepthMetrics.mean(rows)))
    return buf.getvalue()


def read_metrics_csv(path) -> list[DepthMetrics]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [DepthMetrics(*(float(x) for x in row)) for row in reader]
