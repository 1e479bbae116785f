"""Opportunistic spatial reuse: per-grid maximum permitted emission power.

A device in a covered grid may not transmit (black space).  Otherwise the
worst-case receiver position (WCRP) is the covered grid centre within the
device's worst-case interference range with the lowest interference power
limit; with no such centre the device may use its peak power (white space),
else it is capped at the limit at the WCRP (gray space).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .radio import (InterferenceParams, Location, interference_limit_from_distance,
                    interference_power_limit_dbm, worst_case_interference_range_km)

NO_TX = float("-inf")
DEFAULT_FLOOR_DBM = -60.0
COVERED = -1
UNCOVERED = 1


class SpaceClass(enum.IntEnum):
    OUT = -1
    BLACK = 0
    GRAY = 1
    WHITE = 2


@dataclass
class MpepMap:
    """Per-grid MPEP database.

    ``mpep_dbm`` holds ``NO_TX`` for black cells and NaN outside the cell;
    ``wcrp`` is (rows, cols, 2) with NaN where no WCRP applies.
    """

    grid: GridSpec
    mpep_dbm: np.ndarray
    space_class: np.ndarray
    wcrp: np.ndarray
    p_peak_dbm: float

    @classmethod
    def empty(cls, grid: GridSpec, p_peak_dbm: float) -> "MpepMap":
        return cls(grid,
                   np.full(grid.shape, np.nan),
                   np.full(grid.shape, SpaceClass.OUT, dtype=np.int8),
                   np.full(grid.shape + (2,), np.nan),
                   p_peak_dbm)

    @property
    def in_cell(self) -> np.ndarray:
        return self.space_class != SpaceClass.OUT

    def set(self, i: int, j: int, mpep: float, cls_: SpaceClass, wcrp: Location | None) -> None:
        self.mpep_dbm[i, j] = mpep
        self.space_class[i, j] = cls_
        self.wcrp[i, j] = (np.nan, np.nan) if wcrp is None else wcrp

    def check_trichotomy(self) -> None:
        """Raise AssertionError if any entry breaks the black/gray/white rules."""
        cls_ = self.space_class
        v = self.mpep_dbm
        has_wcrp = ~np.isnan(self.wcrp[..., 0])
        black, gray, white = (cls_ == SpaceClass.BLACK, cls_ == SpaceClass.GRAY,
                              cls_ == SpaceClass.WHITE)
        assert np.all(v[black] == NO_TX)
        assert np.all(v[white] == self.p_peak_dbm)
        assert np.all((v[gray] > NO_TX) & (v[gray] < self.p_peak_dbm))
        assert np.all(has_wcrp == gray)


def classify_power(mpep: float, p_peak_dbm: float, floor_dbm: float) -> SpaceClass:
    if mpep >= p_peak_dbm:
        return SpaceClass.WHITE
    if mpep <= floor_dbm:
        return SpaceClass.BLACK
    return SpaceClass.GRAY


def covered_set(model, grid: GridSpec) -> np.ndarray:
    """Label every grid centre with the trained boundary model."""
    from .boundary import classify_many

    X, Y = grid.centers()
    return classify_many(model, X.ravel(), Y.ravel()).reshape(grid.shape)


class _CoveredIndex:
    """Covered grid centres, pre-extracted once per covered set."""

    def __init__(self, covered: np.ndarray, grid: GridSpec):
        X, Y = grid.centers()
        mask = covered == COVERED
        self.x = X[mask]
        self.y = Y[mask]
        self.covered = covered

    def wcrp(self, dev: Location, ip: InterferenceParams, r_int_km: float) -> Location | None:
        d = np.hypot(self.x - dev[0], self.y - dev[1])
        near = np.flatnonzero((d <= r_int_km) & (d > 0))
        if near.size == 0:
            return None
        limits = interference_limit_from_distance(d[near], ip)
        k = near[int(np.argmin(limits))]
        return Location(float(self.x[k]), float(self.y[k]))


def wcrp_search(dev_loc: Location, covered: np.ndarray, grid: GridSpec,
                ip: InterferenceParams) -> Location | None:
    r_int = worst_case_interference_range_km(ip)
    return _CoveredIndex(covered, grid).wcrp(dev_loc, ip, r_int)


def _mpep_at(dev: Location, idx: _CoveredIndex, cell: tuple[int, int], ip: InterferenceParams,
             r_int_km: float, floor_dbm: float) -> tuple[float, SpaceClass, Location | None]:
    if idx.covered[cell] == COVERED:
        return NO_TX, SpaceClass.BLACK, None
    wcrp = idx.wcrp(dev, ip, r_int_km)
    if wcrp is None:
        return ip.p_peak_dbm, SpaceClass.WHITE, None
    limit = interference_power_limit_dbm(dev, wcrp, ip)
    mpep = min(ip.p_peak_dbm, limit)
    cls_ = classify_power(mpep, ip.p_peak_dbm, floor_dbm)
    if cls_ is SpaceClass.BLACK:
        return NO_TX, cls_, None
    if cls_ is SpaceClass.WHITE:
        return ip.p_peak_dbm, cls_, None
    return mpep, cls_, wcrp


def compute_mpep(dev_loc: Location, covered: np.ndarray, grid: GridSpec, ip: InterferenceParams,
                 floor_dbm: float = DEFAULT_FLOOR_DBM) -> tuple[float, SpaceClass, Location | None]:
    """MPEP, space class and WCRP for a device at ``dev_loc``."""
    cell = grid.index_of(dev_loc)
    if cell is None:
        raise ValueError(f"device location {dev_loc} lies outside the grid")
    r_int = worst_case_interference_range_km(ip)
    return _mpep_at(dev_loc, _CoveredIndex(covered, grid), cell, ip, r_int, floor_dbm)


def build_database(cell_bs: Location, r_cell_km: float, model, grid: GridSpec,
                   ip: InterferenceParams, floor_dbm: float = DEFAULT_FLOOR_DBM,
                   covered: np.ndarray | None = None) -> MpepMap:
    """MPEP for every grid centre within ``r_cell_km`` of the base station.

    ``covered`` may be passed directly instead of a boundary model.
    """
    if covered is None:
        covered = covered_set(model, grid)
    return mpep_map_from_labels(covered, grid, ip, grid.disc_mask(cell_bs, r_cell_km), floor_dbm)


def mpep_map_from_labels(covered: np.ndarray, grid: GridSpec, ip: InterferenceParams,
                         scope: np.ndarray, floor_dbm: float = DEFAULT_FLOOR_DBM) -> MpepMap:
    out = MpepMap.empty(grid, ip.p_peak_dbm)
    idx = _CoveredIndex(covered, grid)
    r_int = worst_case_interference_range_km(ip)
    for i, j in zip(*np.nonzero(scope)):
        dev = grid.center(int(i), int(j))
        out.set(i, j, *_mpep_at(dev, idx, (i, j), ip, r_int, floor_dbm))
    return out


def write_mpep_csv(mp: MpepMap, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x_km", "y_km", "mpep_dbm", "class", "wcrp_x", "wcrp_y"])
    X, Y = mp.grid.centers()
    for i, j in zip(*np.nonzero(mp.in_cell)):
        v = mp.mpep_dbm[i, j]
        wx, wy = mp.wcrp[i, j]
        w.writerow([repr(float(X[i, j])), repr(float(Y[i, j])),
                    "NOTX" if v == NO_TX else repr(float(v)),
                    SpaceClass(mp.space_class[i, j]).name,
                    "" if np.isnan(wx) else repr(float(wx)),
                    "" if np.isnan(wy) else repr(float(wy))])
