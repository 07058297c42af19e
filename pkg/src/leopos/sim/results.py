"""Result tables, CDF files and run comparison."""

from __future__ import annotations

import ast
import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

METRICS = {
    "toa_error": "ns",
    "toa_latency": "ms",
    "pos_error": "m",
    "pos_latency": "ms",
    "visible_count": "count",
    "pd_vs_snr": "dB",
}
SENTINEL_FLAG = "nondetect"


@dataclass
class ResultTable:
    """A CDF (``x``, ``cdf``) or detection curve (``snr``, ``pd``).

    CDF tables built from samples keep the non-detections as one sentinel row
    at ``sentinel_x`` carrying their probability mass, so the finite part of
    the curve plateaus below 1 at exactly the detection rate.
    """

    metric: str
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    metadata: dict = field(default_factory=dict)
    sentinel_x: float | None = None
    sentinel_mass: float = 0.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")
        if np.any((self.y < 0) | (self.y > 1)) or not np.all(np.isfinite(self.y)):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.is_cdf:
            if np.any(np.diff(self.y) < -1e-12):
                raise ValueError("CDF must be non-decreasing")
            if np.any(np.diff(self.x) < 0):
                raise ValueError("CDF abscissae must be sorted")
        if not 0 <= self.sentinel_mass <= 1:
            raise ValueError("sentinel mass must lie in [0, 1]")
        if "scenario" not in self.metadata:
            raise ValueError("metadata must carry the scenario hash")

    @property
    def is_cdf(self) -> bool:
        return self.metric != "pd_vs_snr"

    @property
    def x_unit(self) -> str:
        return METRICS[self.metric]

    @property
    def detected_fraction(self) -> float:
        return 1.0 - self.sentinel_mass

    @classmethod
    def from_samples(cls, metric: str, samples: Iterable[float], label: str = "", metadata: dict | None = None,
                     sentinel_x: float = math.inf) -> "ResultTable":
        """Empirical CDF; ``inf`` samples (and ``sentinel_x`` itself) are non-detections."""
        s = np.asarray(list(samples), dtype=float)
        n = s.size
        miss = ~np.isfinite(s) | (s == sentinel_x) if n else np.zeros(0, bool)
        fin = np.sort(s[~miss])
        if fin.size:
            xs, counts = np.unique(fin, return_counts=True)
            ys = np.cumsum(counts) / n
        else:
            xs, ys = np.zeros(0), np.zeros(0)
        mass = float(miss.sum()) / n if n else 0.0
        meta = dict(metadata or {})
        meta.setdefault("scenario", "")
        meta["n_samples"] = int(n)
        return cls(metric, xs, ys, label, meta, sentinel_x if mass > 0 else None, mass)

    def percentile(self, q: float) -> float:
        """Smallest x with CDF >= q; ``sentinel_x`` (or inf) when the finite part never gets there."""
        if not self.is_cdf:
            raise ValueError("percentile applies to CDF tables")
        if not 0 < q <= 1:
            raise ValueError("q must lie in (0, 1]")
        i = np.searchsorted(self.y, q - 1e-12)
        if i < self.y.size:
            return float(self.x[i])
        return math.inf if self.sentinel_x is None else float(self.sentinel_x)

    def cdf_at(self, x: float) -> float:
        i = np.searchsorted(self.x, x, side="right")
        v = float(self.y[i - 1]) if i > 0 else 0.0
        if self.sentinel_x is not None and x >= self.sentinel_x:
            v += self.sentinel_mass
        return v

    def equals(self, other: "ResultTable") -> bool:
        return (self.metric == other.metric and self.label == other.label
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and self.sentinel_x == other.sentinel_x and self.sentinel_mass == other.sentinel_mass
                and self.metadata == other.metadata)


def _fmt(v: float) -> str:
    return repr(float(v))


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for k in sorted(table.metadata):
        buf.write(f"# {k}={table.metadata[k]!r}\n")
    if table.label:
        buf.write(f"# label={table.label!r}\n")
    w.writerow(["metric", "x_unit", "x", "y", "flag"])
    for x, y in zip(table.x, table.y):
        w.writerow([table.metric, table.x_unit, _fmt(x), _fmt(y), ""])
    if table.sentinel_x is not None:
        w.writerow([table.metric, table.x_unit, _fmt(table.sentinel_x), _fmt(table.sentinel_mass), SENTINEL_FLAG])
    return buf.getvalue()


def emit_cdf(table: ResultTable, path: str | Path) -> Path:
    """Write a table as CSV; metadata goes into ``# key=value`` comment lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table_to_csv(table))
    return path


def table_from_csv(text: str, metric: str | None = None) -> ResultTable:
    meta: dict = {}
    label = ""
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            if k == "label":
                label = ast.literal_eval(v)
            else:
                meta[k] = ast.literal_eval(v)
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or rows[0] != ["metric", "x_unit", "x", "y", "flag"]:
        raise ValueError("not a result table: bad header")
    xs, ys = [], []
    sx, smass = None, 0.0
    for r in rows[1:]:
        metric = r[0] if metric is None else metric
        if r[0] != metric:
            raise ValueError("mixed metrics in one file")
        if r[4] == SENTINEL_FLAG:
            sx, smass = float(r[2]), float(r[3])
        else:
            xs.append(float(r[2]))
            ys.append(float(r[3]))
    if metric is None:
        raise ValueError("empty table file: pass the metric explicitly")
    return ResultTable(metric, np.array(xs), np.array(ys), label, meta, sx, smass)


def read_cdf(path: str | Path, metric: str | None = None) -> ResultTable:
    return table_from_csv(Path(path).read_text(), metric)


def compare_runs(table_a: ResultTable, table_b: ResultTable, percentile: float = 0.5) -> float:
    """Relative improvement ``(p_a - p_b) / p_a`` of b over a at a percentile."""
    if table_a.metric != table_b.metric:
        raise ValueError(f"metric mismatch: {table_a.metric} vs {table_b.metric}")
    pa, pb = table_a.percentile(percentile), table_b.percentile(percentile)
    if math.isinf(pa) and math.isinf(pb):
        return 0.0
    if math.isinf(pa):
        return 1.0
    if pa == 0:
        return 0.0 if pb == 0 else -math.inf
    return (pa - pb) / pa


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


MEASUREMENT_HEADER = ("trial", "sat_id", "occasion", "detected", "toa_ns", "doppler_hz", "snr_db", "latency_ms")
ESTIMATE_HEADER = ("trial", "time_s", "err_2d_m", "err_3d_m", "dop", "n_pairs", "converged")
PROFILE_HEADER = ("t", "delay_ns", "doppler_hz", "snr_db")
VISIBILITY_HEADER = ("threshold_deg", "count", "cdf")


def measurement_rows(trial: int, measurements) -> Iterable[tuple]:
    for m in measurements:
        sid = f"{m.sat_id[0]}-{m.sat_id[1]}"
        if m.detected:
            yield (trial, sid, m.occasion_index, 1, m.toa_s * 1e9, m.doppler_hz, m.snr_est_db, m.latency_s * 1e3)
        else:
            yield (trial, sid, m.occasion_index, 0, "", "", "", m.latency_s * 1e3)
