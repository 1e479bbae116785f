"""Crowd-sensed energy-detector reports and their per-grid aggregation.

A report is ``T + a`` Watts, where the detector output ``T = p + v`` carries
Gaussian noise ``v ~ N(N0, (p + N0)^2 / n_sam)`` and ``a`` is an optional
abnormal impulse.  Reports are held column-wise (``ReportBatch``) because a
single 100x100 run produces half a million of them.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .grid import GridSpec, SpectrumMatrix
from .radio import Location, dbm_to_watt, watt_to_dbm

log = logging.getLogger(__name__)

WATT_FLOOR = 1e-16
REPORT_FIELDS = ("device_id", "x_km", "y_km", "detector_watts", "abnormal_watts")


class SensingReport(NamedTuple):
    device_id: str
    loc: Location
    detector_watts: float
    abnormal_watts: float = 0.0


@dataclass
class ReportBatch:
    device_id: np.ndarray
    x_km: np.ndarray
    y_km: np.ndarray
    detector_watts: np.ndarray
    abnormal_watts: np.ndarray

    def __len__(self) -> int:
        return len(self.x_km)

    def __iter__(self) -> Iterator[SensingReport]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k: int) -> SensingReport:
        return SensingReport(str(self.device_id[k]), Location(float(self.x_km[k]), float(self.y_km[k])),
                             float(self.detector_watts[k]), float(self.abnormal_watts[k]))

    @property
    def reported_watts(self) -> np.ndarray:
        """What the base station receives: detector output plus abnormal part."""
        return self.detector_watts + self.abnormal_watts

    @classmethod
    def from_reports(cls, reports) -> "ReportBatch":
        reports = list(reports)
        return cls(np.array([r.device_id for r in reports], dtype=object),
                   np.array([r.loc[0] for r in reports], dtype=float),
                   np.array([r.loc[1] for r in reports], dtype=float),
                   np.array([r.detector_watts for r in reports], dtype=float),
                   np.array([r.abnormal_watts for r in reports], dtype=float))


def synthesize_reports(G: SpectrumMatrix, grid: GridSpec, n_sam: int, noise_floor_dbm: float,
                       sampling_rate: float, abnormal: tuple[float, float] = (0.0, 0.0),
                       seed: int | np.random.Generator = 0) -> ReportBatch:
    """Draw ``n_sam`` reports at each grid centre kept with probability ``sampling_rate``."""
    if not 0 < sampling_rate <= 1:
        raise ValueError("sampling rate must lie in (0, 1]")
    if n_sam < 1:
        raise ValueError("n_sam must be >= 1")
    rng = np.random.default_rng(seed)
    sampled = rng.random(G.shape) < sampling_rate
    rows, cols = np.nonzero(sampled)
    X, Y = grid.centers()
    p_w = np.repeat(dbm_to_watt(G.values[rows, cols]), n_sam)
    n0 = dbm_to_watt(noise_floor_dbm)
    std = (p_w + n0) / np.sqrt(n_sam)
    detector = np.maximum(p_w + n0 + std * rng.standard_normal(p_w.size), 0.0)
    rate, magnitude = abnormal
    bad = np.zeros(p_w.size)
    if rate > 0:
        hit = rng.random(p_w.size) < rate
        bad[hit] = rng.uniform(0.0, magnitude, size=int(hit.sum()))
    ids = np.repeat(np.arange(rows.size), n_sam) * n_sam + np.tile(np.arange(n_sam), rows.size)
    return ReportBatch(ids, np.repeat(X[rows, cols], n_sam),
                       np.repeat(Y[rows, cols], n_sam), detector, bad)


@dataclass
class Aggregate:
    matrix: SpectrumMatrix
    counts: np.ndarray
    dropped: int
    stderr_db: np.ndarray  # per-grid standard error of the dB estimate, NaN if unknown

    @property
    def noise_std_db(self) -> float:
        """RMS standard error over the known grids."""
        se = self.stderr_db[self.matrix.known]
        return float(np.sqrt(np.mean(se ** 2))) if se.size else 0.0


def aggregate_to_grid(reports, grid: GridSpec, min_count: int = 10,
                      noise_floor_dbm: float = -95.2) -> Aggregate:
    """Average reports per grid and remove the detector noise mean.

    Grids with fewer than ``min_count`` reports stay unknown.  Reports that
    fall outside the grid are dropped and counted.
    """
    batch = reports if isinstance(reports, ReportBatch) else ReportBatch.from_reports(reports)
    r, c, inside = grid.indices_of(batch.x_km, batch.y_km)
    dropped = int((~inside).sum())
    if dropped:
        log.warning("dropped %d reports outside the grid", dropped)
    flat = r[inside] * grid.cols + c[inside]
    n = grid.rows * grid.cols
    counts = np.bincount(flat, minlength=n)
    sums = np.bincount(flat, weights=batch.reported_watts[inside], minlength=n)
    known = counts >= max(min_count, 1)
    mean = np.divide(sums, counts, out=np.zeros(n), where=counts > 0)
    signal = np.maximum(mean - dbm_to_watt(noise_floor_dbm), WATT_FLOOR)
    values = np.where(known, watt_to_dbm(signal), 0.0)
    # first-order propagation of the sample spread of the mean into dB
    sq = np.bincount(flat, weights=(batch.reported_watts[inside] - mean[flat]) ** 2, minlength=n)
    var = np.divide(sq, counts - 1, out=np.zeros(n), where=counts > 1)
    se_watt = np.sqrt(np.divide(var, counts, out=np.zeros(n), where=counts > 0))
    stderr_db = np.where(known, 10.0 / np.log(10.0) * se_watt / signal, np.nan)
    return Aggregate(SpectrumMatrix(values.reshape(grid.shape), known.reshape(grid.shape)),
                     counts.reshape(grid.shape), dropped, stderr_db.reshape(grid.shape))


def uplink_overhead(n_cell: int, bits_per_report: float, period_s: float,
                    m_cell: int) -> tuple[float, float]:
    """Cell and per-device average uplink rates in bits/s."""
    if min(n_cell, bits_per_report, period_s, m_cell) <= 0:
        raise ValueError("all overhead inputs must be positive")
    cell = n_cell * bits_per_report / period_s
    return cell, cell / m_cell


def write_reports(batch: ReportBatch, fh, delimiter: str = ",") -> None:
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for rep in batch:
        w.writerow([rep.device_id, repr(rep.loc[0]), repr(rep.loc[1]),
                    repr(rep.detector_watts), repr(rep.abnormal_watts)])


def read_reports(fh, delimiter: str = ",") -> ReportBatch:
    rows = csv.reader(fh, delimiter=delimiter)
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != REPORT_FIELDS:
        raise ValueError(f"report file must start with header {','.join(REPORT_FIELDS)}")
    reps = []
    for rec in rows:
        if not rec:
            continue
        dev, x, y, t, a = rec
        if float(t) < 0:
            raise ValueError("detector output must be >= 0")
        reps.append(SensingReport(dev, Location(float(x), float(y)), float(t), float(a)))
    return ReportBatch.from_reports(reps)
