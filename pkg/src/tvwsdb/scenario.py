"""Ground-truth radio environments and the brute-force MPEP oracle.

Two built-in scenarios follow the simulation setup of the reference study:

* Scenario I puts the base station on the average-power coverage contour of
  the DTV transmitter, so the coverage boundary crosses the cell.
* Scenario II puts it at (119.2, 0) km, well inside coverage, with a
  shadowing band that ramps from 20 dB at x=116.2 km to 0 dB at x=120.2 km.

An azimuthal ripple on the mean shadowing makes the boundary irregular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import GridSpec, SpectrumMatrix
from .radio import (DtvTransmitter, InterferenceParams, Location, PropagationParams,
                    coverage_distance_km, coverage_threshold_dbm, interference_limit_from_distance,
                    interference_power_limit_dbm, path_loss_db, worst_case_interference_range_km)
from .reuse import COVERED, NO_TX, UNCOVERED, DEFAULT_FLOOR_DBM, MpepMap, SpaceClass, classify_power


@dataclass(frozen=True)
class ShadowZone:
    """Extra mean attenuation over a region.

    ``xband``: linear ramp from ``db_start`` at ``x0`` to ``db_end`` at ``x1``,
    zero outside ``[x0, x1]``.  ``disc``: constant ``db_start`` within
    ``radius`` of ``(x0, x1)``.
    """

    kind: str
    x0: float
    x1: float
    db_start: float
    db_end: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("xband", "disc"):
            raise ValueError(f"unknown shadow zone kind {self.kind!r}")
        if self.db_start < 0 or self.db_end < 0:
            raise ValueError("zone attenuation must be >= 0 dB")
        if self.kind == "xband" and not self.x1 > self.x0:
            raise ValueError("xband needs x1 > x0")

    def attenuation(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if self.kind == "xband":
            frac = (X - self.x0) / (self.x1 - self.x0)
            ramp = self.db_start + (self.db_end - self.db_start) * frac
            return np.where((X >= self.x0) & (X <= self.x1), ramp, 0.0)
        inside = np.hypot(X - self.x0, Y - self.x1) <= self.radius
        return np.where(inside, self.db_start, 0.0)

    def describe(self) -> str:
        if self.kind == "xband":
            return f"xband {self.x0!r} {self.x1!r} {self.db_start!r} {self.db_end!r}"
        return f"disc {self.x0!r} {self.x1!r} {self.radius!r} {self.db_start!r}"

    @classmethod
    def parse(cls, text: str) -> "ShadowZone":
        kind, *nums = text.split()
        vals = [float(v) for v in nums]
        if kind == "xband" and len(vals) == 4:
            return cls("xband", vals[0], vals[1], vals[2], vals[3])
        if kind == "disc" and len(vals) == 4:
            return cls("disc", vals[0], vals[1], vals[3], radius=vals[2])
        raise ValueError(f"bad shadow zone {text!r}")


@dataclass(frozen=True)
class ShadowFieldSpec:
    zones: tuple[ShadowZone, ...] = ()
    ripple_amp_db: float = 3.0
    ripple_freq: float = 5.0
    ripple_phase: float = 0.0

    def __post_init__(self):
        if self.ripple_amp_db < 0:
            raise ValueError("ripple amplitude must be >= 0")


def mean_shadow_field(spec: ShadowFieldSpec, X, Y, tx_loc: Location) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    total = np.zeros(np.broadcast(X, Y).shape)
    for zone in spec.zones:
        total = total + zone.attenuation(X, Y)
    if spec.ripple_amp_db:
        theta = np.arctan2(Y - tx_loc[1], X - tx_loc[0])
        total = total + spec.ripple_amp_db * np.sin(spec.ripple_freq * theta + spec.ripple_phase)
    return total


def mean_shadow_at(spec: ShadowFieldSpec, loc: Location, tx_loc: Location) -> float:
    return float(mean_shadow_field(spec, loc[0], loc[1], tx_loc))


def cell_area_side_km(r_cell_km: float, r_int_km: float) -> float:
    if r_cell_km <= 0 or r_int_km <= 0:
        raise ValueError("radii must be positive")
    return 2.0 * (r_cell_km + r_int_km)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    tx: DtvTransmitter
    shadow: ShadowFieldSpec
    bs_loc: Location
    r_cell_km: float
    interference: InterferenceParams
    grid: GridSpec
    rng_seed: int = 0
    noise_dbm: float = -95.2
    d_p_km: float = 134.2
    r_int_km: float = 2.0
    sampling_rate: float = 0.5
    n_sam: int = 100
    min_count: int = 10
    random_shadowing: bool = False

    @property
    def p_bar_min(self) -> float:
        return coverage_threshold_dbm(self.tx)

    @property
    def cell_mask(self) -> np.ndarray:
        return self.grid.disc_mask(self.bs_loc, self.r_cell_km)

    def with_grid(self, cell_size_m: float) -> "ScenarioConfig":
        side = cell_area_side_km(self.r_cell_km, self.r_int_km)
        return replace(self, grid=GridSpec.centered(self.bs_loc, side, cell_size_m))


def default_parameters(**overrides) -> dict:
    """Baseline system parameters as flat config values."""
    params = dict(
        tx_x_km=0.0, tx_y_km=0.0, tx_power_dbm=90.0, freq_mhz=615.0, noise_dbm=-95.2,
        d_p_km=134.2, alpha_dtv=4.0, alpha_d2d=2.5, sigma_db=5.5, p_min_dbm=-92.2,
        i_max_dbm=-98.2, nu_cov=0.9, nu_int=0.1, grid_size_m=80.0, sampling_rate=0.5,
        n_sam=100, r_cell_km=2.0, p_peak_dbm=-10.0, r_int_km=2.0, mean_shadow_d2d_db=0.0,
        ripple_amp_db=3.0, ripple_freq=5.0, ripple_phase=0.0, min_count=10, rng_seed=0,
        random_shadowing=False,
    )
    params.update(overrides)
    return params


def _build(name: str, params: dict, zones: tuple[ShadowZone, ...]) -> ScenarioConfig:
    prop_dtv = PropagationParams(params["alpha_dtv"], params["freq_mhz"], params["sigma_db"])
    prop_d2d = PropagationParams(params["alpha_d2d"], params["freq_mhz"], params["sigma_db"])
    tx = DtvTransmitter(Location(params["tx_x_km"], params["tx_y_km"]), params["tx_power_dbm"],
                        params["p_min_dbm"], params["nu_cov"], prop_dtv)
    ip = InterferenceParams(params["i_max_dbm"], params["nu_int"], params["p_peak_dbm"],
                            prop_d2d, params["mean_shadow_d2d_db"])
    if "bs_x_km" in params:
        bs = Location(params["bs_x_km"], params["bs_y_km"])
    else:
        # On the average-power coverage contour, east of the transmitter.
        bs = Location(tx.loc.x + coverage_distance_km(tx), tx.loc.y)
    shadow = ShadowFieldSpec(zones, params["ripple_amp_db"], params["ripple_freq"],
                             params["ripple_phase"])
    side = cell_area_side_km(params["r_cell_km"], params["r_int_km"])
    grid = GridSpec.centered(bs, side, params["grid_size_m"])
    return ScenarioConfig(name, tx, shadow, bs, params["r_cell_km"], ip, grid,
                          int(params["rng_seed"]), params["noise_dbm"], params["d_p_km"],
                          params["r_int_km"], params["sampling_rate"], int(params["n_sam"]),
                          int(params["min_count"]), bool(params["random_shadowing"]))


SCENARIO_TWO_ZONE = ShadowZone("xband", 116.2, 120.2, 20.0, 0.0)


def scenario_one(**overrides) -> ScenarioConfig:
    return _build("I", default_parameters(**overrides), ())


def scenario_two(**overrides) -> ScenarioConfig:
    params = default_parameters(bs_x_km=119.2, bs_y_km=0.0)
    params.update(overrides)
    return _build("II", params, (SCENARIO_TWO_ZONE,))


# --- flat key = value config files -------------------------------------

_FLOAT_KEYS = {
    "tx_x_km", "tx_y_km", "tx_power_dbm", "freq_mhz", "noise_dbm", "d_p_km", "alpha_dtv",
    "alpha_d2d", "sigma_db", "p_min_dbm", "i_max_dbm", "nu_cov", "nu_int", "grid_size_m",
    "sampling_rate", "r_cell_km", "p_peak_dbm", "r_int_km", "mean_shadow_d2d_db",
    "ripple_amp_db", "ripple_freq", "ripple_phase", "bs_x_km", "bs_y_km",
}
_INT_KEYS = {"n_sam", "min_count", "rng_seed"}
_BOOL_KEYS = {"random_shadowing"}


def parse_config(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``scenario = I`` or ``II`` selects the base scenario; ``zone = ...``
    lines (repeatable) replace its shadow zones.
    """
    values: dict = {}
    zones: list[ShadowZone] = []
    base = "I"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "scenario":
            if value not in ("I", "II"):
                raise ValueError(f"line {lineno}: scenario must be I or II")
            base = value
        elif key == "zone":
            zones.append(ShadowZone.parse(value))
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _BOOL_KEYS:
            values[key] = value.lower() in ("1", "true", "yes")
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if ("bs_x_km" in values) != ("bs_y_km" in values):
        raise ValueError("bs_x_km and bs_y_km must be given together")
    cfg = scenario_one(**values) if base == "I" else scenario_two(**values)
    if zones:
        cfg = replace(cfg, shadow=replace(cfg.shadow, zones=tuple(zones)))
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_text(cfg: ScenarioConfig) -> str:
    """Canonical config text; ``parse_config(config_text(c))`` rebuilds ``c``."""
    tx, ip = cfg.tx, cfg.interference
    pairs = [
        ("scenario", cfg.name), ("tx_x_km", tx.loc.x), ("tx_y_km", tx.loc.y),
        ("tx_power_dbm", tx.power_dbm), ("freq_mhz", tx.prop.freq_mhz),
        ("noise_dbm", cfg.noise_dbm), ("d_p_km", cfg.d_p_km), ("alpha_dtv", tx.prop.alpha),
        ("alpha_d2d", ip.prop_d2d.alpha), ("sigma_db", tx.prop.sigma_shadow_db),
        ("p_min_dbm", tx.p_min_dbm), ("i_max_dbm", ip.i_max_dbm), ("nu_cov", tx.cov_threshold),
        ("nu_int", ip.int_threshold), ("grid_size_m", cfg.grid.cell_size_m),
        ("sampling_rate", cfg.sampling_rate), ("n_sam", cfg.n_sam), ("r_cell_km", cfg.r_cell_km),
        ("p_peak_dbm", ip.p_peak_dbm), ("r_int_km", cfg.r_int_km),
        ("mean_shadow_d2d_db", ip.mean_shadow_d2d_db), ("ripple_amp_db", cfg.shadow.ripple_amp_db),
        ("ripple_freq", cfg.shadow.ripple_freq), ("ripple_phase", cfg.shadow.ripple_phase),
        ("bs_x_km", cfg.bs_loc.x), ("bs_y_km", cfg.bs_loc.y), ("min_count", cfg.min_count),
        ("rng_seed", cfg.rng_seed), ("random_shadowing", str(cfg.random_shadowing).lower()),
    ]
    lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in pairs]
    lines += [f"zone = {z.describe()}" for z in cfg.shadow.zones]
    return "\n".join(lines) + "\n"


# --- ground truth ------------------------------------------------------

def ground_truth_matrix(cfg: ScenarioConfig) -> SpectrumMatrix:
    """Mean received DTV power at every grid centre.

    With ``cfg.random_shadowing`` one static N(mean, sigma^2) shadowing draw
    per grid (seeded by ``cfg.rng_seed``) replaces the mean field.
    """
    X, Y = cfg.grid.centers()
    d = np.hypot(X - cfg.tx.loc.x, Y - cfg.tx.loc.y)
    if np.any(d == 0):
        raise ValueError("a grid centre coincides with the DTV transmitter")
    shadow = mean_shadow_field(cfg.shadow, X, Y, cfg.tx.loc)
    if cfg.random_shadowing:
        rng = np.random.default_rng(cfg.rng_seed)
        shadow = shadow + rng.normal(0.0, cfg.tx.prop.sigma_shadow_db, size=shadow.shape)
    return SpectrumMatrix(cfg.tx.power_dbm - path_loss_db(d, cfg.tx.prop) - shadow)


def ground_truth_labels(G: SpectrumMatrix, p_bar_min: float) -> np.ndarray:
    """-1 (covered) where the mean power reaches the threshold, else +1."""
    if not G.is_complete:
        raise ValueError("ground-truth labels need a fully known matrix")
    return np.where(G.values >= p_bar_min, COVERED, UNCOVERED).astype(np.int8)


def oracle_mpep(cfg: ScenarioConfig, truth: np.ndarray, scope: np.ndarray | None = None,
                floor_dbm: float = DEFAULT_FLOOR_DBM) -> MpepMap:
    """Brute-force MPEP solution at each grid centre in ``scope`` (default: whole grid).

    Every covered grid centre is a candidate receiver; no range pruning.
    """
    grid, ip = cfg.grid, cfg.interference
    if scope is None:
        scope = np.ones(grid.shape, dtype=bool)
    X, Y = grid.centers()
    cov_mask = truth == COVERED
    cx, cy = X[cov_mask], Y[cov_mask]
    out = MpepMap.empty(grid, ip.p_peak_dbm)
    for i, j in zip(*np.nonzero(scope)):
        dev = grid.center(int(i), int(j))
        if truth[i, j] == COVERED:
            out.set(i, j, NO_TX, SpaceClass.BLACK, None)
            continue
        if cx.size == 0:
            out.set(i, j, ip.p_peak_dbm, SpaceClass.WHITE, None)
            continue
        limits = interference_limit_from_distance(np.hypot(cx - dev.x, cy - dev.y), ip)
        k = int(np.argmin(limits))
        wcrp = Location(float(cx[k]), float(cy[k]))
        mpep = min(ip.p_peak_dbm, interference_power_limit_dbm(dev, wcrp, ip))
        cls_ = classify_power(mpep, ip.p_peak_dbm, floor_dbm)
        if cls_ is SpaceClass.GRAY:
            out.set(i, j, mpep, cls_, wcrp)
        elif cls_ is SpaceClass.WHITE:
            out.set(i, j, ip.p_peak_dbm, cls_, None)
        else:
            out.set(i, j, NO_TX, cls_, None)
    return out


def scenario_summary(cfg: ScenarioConfig) -> dict:
    return {
        "scenario": cfg.name,
        "p_bar_min_dbm": cfg.p_bar_min,
        "coverage_distance_km": coverage_distance_km(cfg.tx),
        "r_int_computed_km": worst_case_interference_range_km(cfg.interference),
        "grid": f"{cfg.grid.rows}x{cfg.grid.cols} @ {cfg.grid.cell_size_m:g} m",
        "bs": (cfg.bs_loc.x, cfg.bs_loc.y),
        "cell_area_side_km": cell_area_side_km(cfg.r_cell_km, cfg.r_int_km),
        "ripple": (cfg.shadow.ripple_amp_db, cfg.shadow.ripple_freq, math.degrees(cfg.shadow.ripple_phase)),
    }
