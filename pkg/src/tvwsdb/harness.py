"""End-to-end pipeline runs, parameter sweeps and CSV output.

One pipeline run per seed: synthesize crowd reports, aggregate, complete,
label with the offset threshold, train the boundary, build the MPEP database
and compare it against the oracle built from ground truth.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .boundary import (QUADRATIC, RBF, KernelSpec, detection_probability, hypothesis_labels,
                       train_svm)
from .completion import CompletionResult, FpcaConfig, fpca_complete, rse_db
from .grid import SpectrumMatrix
from .radio import (InterferenceParams, Location, interference_limit_from_distance,
                    interference_probability_from_distance)
from .reuse import (COVERED, DEFAULT_FLOOR_DBM, NO_TX, MpepMap, SpaceClass, build_database,
                    classify_power, covered_set)
from .scenario import (ScenarioConfig, ground_truth_labels, ground_truth_matrix, oracle_mpep,
                       scenario_one, scenario_two)
from .sensing import Aggregate, aggregate_to_grid, synthesize_reports

log = logging.getLogger(__name__)

KERNELS = {"rbf": RBF, "quadratic": QUADRATIC}
SWEEPABLE = ("sampling_rate", "n_sam", "cell_size_m", "delta_p", "kernel")
DEFAULT_DELTAS = (0.0, 3.0, 6.0)


def make_config(scenario: str, cell_size_m: float = 80.0, **overrides) -> ScenarioConfig:
    if scenario not in ("I", "II"):
        raise ValueError("scenario must be 'I' or 'II'")
    build = scenario_one if scenario == "I" else scenario_two
    return build(grid_size_m=float(cell_size_m), **overrides)


# --- per-seed building blocks ------------------------------------------

@dataclass
class Recovery:
    cfg: ScenarioConfig
    truth_matrix: SpectrumMatrix
    truth_labels: np.ndarray
    aggregate: Aggregate
    completion: CompletionResult

    @property
    def rse_db(self) -> float:
        return rse_db(self.completion.matrix, self.truth_matrix)


def recover(cfg: ScenarioConfig, seed: int, sampling_rate: float | None = None,
            n_sam: int | None = None, truth: SpectrumMatrix | None = None) -> Recovery:
    """Sense, aggregate and complete one draw of crowd reports."""
    G = ground_truth_matrix(cfg) if truth is None else truth
    rate = cfg.sampling_rate if sampling_rate is None else sampling_rate
    n = cfg.n_sam if n_sam is None else n_sam
    batch = synthesize_reports(G, cfg.grid, n, cfg.noise_dbm, rate, seed=seed)
    agg = aggregate_to_grid(batch, cfg.grid, cfg.min_count, cfg.noise_dbm)
    done = fpca_complete(agg.matrix, FpcaConfig(noise_std_db=agg.noise_std_db))
    return Recovery(cfg, G, ground_truth_labels(G, cfg.p_bar_min), agg, done)


class RecoveryCache:
    """Memoises recoveries so sweeps sharing a configuration complete it once."""

    def __init__(self):
        self._store: dict = {}
        self._truth: dict = {}

    def get(self, scenario: str, cell_size_m: float, sampling_rate: float, n_sam: int,
            seed: int) -> Recovery:
        key = (scenario, float(cell_size_m), float(sampling_rate), int(n_sam), int(seed))
        if key not in self._store:
            cfg = make_config(scenario, cell_size_m)
            tkey = (scenario, float(cell_size_m))
            if tkey not in self._truth:
                self._truth[tkey] = ground_truth_matrix(cfg)
            self._store[key] = recover(cfg, seed, sampling_rate, n_sam, self._truth[tkey])
        return self._store[key]


def detect(rec: Recovery, delta_p: float = 0.0, kernel: KernelSpec = RBF,
           seed: int = 0) -> np.ndarray:
    """Covered set (-1/+1 per grid) of the boundary trained on the recovered data."""
    labels = hypothesis_labels(rec.completion.matrix, rec.cfg.p_bar_min, delta_p)
    if np.all(labels == labels.flat[0]):
        return labels
    model = train_svm(labels, rec.cfg.grid, kernel, seed=seed)
    return covered_set(model, rec.cfg.grid)


# --- protection and bias metrics ---------------------------------------

def achieved_ip(mp: MpepMap, truth: np.ndarray, ip: InterferenceParams) -> np.ndarray:
    """Interference probability each in-cell grid's MPEP causes at the true coverage.

    The worst covered centre is the one with the lowest interference limit.  A
    transmitting device inside a truly covered grid counts as certain
    interference; black grids cause none.  NaN outside the cell.
    """
    out = np.full(mp.grid.shape, np.nan)
    X, Y = mp.grid.centers()
    cov = truth == COVERED
    cx, cy = X[cov], Y[cov]
    for i, j in zip(*np.nonzero(mp.in_cell)):
        p = mp.mpep_dbm[i, j]
        if p == NO_TX:
            out[i, j] = 0.0
        elif cov[i, j]:
            out[i, j] = 1.0
        elif cx.size == 0:
            out[i, j] = 0.0
        else:
            d = np.hypot(cx - X[i, j], cy - Y[i, j])
            out[i, j] = interference_probability_from_distance(d.min(), p, ip)
    return out


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    return v, np.arange(1, v.size + 1) / max(v.size, 1)


@dataclass
class BiasReport:
    """Derived-minus-oracle MPEP (dB) and achieved-IP-minus-threshold, pooled over grids."""

    mpep_bias_db: np.ndarray = field(default_factory=lambda: np.empty(0))
    ip_bias: np.ndarray = field(default_factory=lambda: np.empty(0))
    violations: int = 0  # derived transmits where the oracle forbids it
    conservative: int = 0  # derived forbids where the oracle allows

    @property
    def mpep_cdf(self):
        return empirical_cdf(self.mpep_bias_db)

    @property
    def ip_cdf(self):
        return empirical_cdf(self.ip_bias)

    def protected_fraction(self, tol: float = 1e-12) -> float:
        """Share of grids whose achieved IP stays within the threshold."""
        return float(np.mean(self.ip_bias <= tol)) if self.ip_bias.size else float("nan")

    def extend(self, other: "BiasReport") -> None:
        self.mpep_bias_db = np.concatenate([self.mpep_bias_db, other.mpep_bias_db])
        self.ip_bias = np.concatenate([self.ip_bias, other.ip_bias])
        self.violations += other.violations
        self.conservative += other.conservative


def bias_report(derived: MpepMap, oracle: MpepMap, truth: np.ndarray,
                ip: InterferenceParams) -> BiasReport:
    cell = derived.in_cell
    d, o = derived.mpep_dbm[cell], oracle.mpep_dbm[cell]
    d_tx, o_tx = d != NO_TX, o != NO_TX
    both = d_tx & o_tx
    bias = np.concatenate([d[both] - o[both], np.zeros(int((~d_tx & ~o_tx).sum()))])
    ipv = achieved_ip(derived, truth, ip)[cell] - ip.int_threshold
    return BiasReport(bias, ipv, int((d_tx & ~o_tx).sum()), int((~d_tx & o_tx).sum()))


def baseline_circular_mpep(dev_loc: Location, loc_error_max_m: float, d_p_km: float,
                           tx_loc: Location, ip: InterferenceParams,
                           seed: int | np.random.Generator = 0) -> float:
    """Protection-circle rule applied at a position reported with localisation error."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    r = rng.uniform(0.0, loc_error_max_m) / 1000.0
    px, py = dev_loc[0] + r * math.cos(theta), dev_loc[1] + r * math.sin(theta)
    dist = math.hypot(px - tx_loc[0], py - tx_loc[1])
    if dist <= d_p_km:
        return NO_TX
    return min(ip.p_peak_dbm, float(interference_limit_from_distance(dist - d_p_km, ip)))


def baseline_mpep_map(cfg: ScenarioConfig, loc_error_max_m: float, seed: int = 0,
                      floor_dbm: float = DEFAULT_FLOOR_DBM) -> MpepMap:
    ip = cfg.interference
    rng = np.random.default_rng(seed)
    out = MpepMap.empty(cfg.grid, ip.p_peak_dbm)
    for i, j in zip(*np.nonzero(cfg.cell_mask)):
        v = baseline_circular_mpep(cfg.grid.center(int(i), int(j)), loc_error_max_m,
                                   cfg.d_p_km, cfg.tx.loc, ip, rng)
        cls_ = SpaceClass.BLACK if v == NO_TX else classify_power(v, ip.p_peak_dbm, floor_dbm)
        out.set(i, j, NO_TX if cls_ is SpaceClass.BLACK else v, cls_, None)
    return out


# --- runs and sweeps ----------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    scenario: str = "I"
    sweep: str = "delta_p"
    values: tuple = DEFAULT_DELTAS
    seeds: int = 20
    output_dir: str = "results"
    sampling_rate: float = 0.5
    n_sam: int = 100
    cell_size_m: float = 80.0
    delta_p: float = 0.0
    kernel: str = "rbf"

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise ValueError("scenario must be 'I' or 'II'")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.sweep not in SWEEPABLE:
            raise ValueError(f"sweep must be one of {', '.join(SWEEPABLE)}")
        for v in self.values:
            self.setting(v)

    def setting(self, value) -> dict:
        s = dict(sampling_rate=self.sampling_rate, n_sam=self.n_sam,
                 cell_size_m=self.cell_size_m, delta_p=self.delta_p, kernel=self.kernel)
        s[self.sweep] = value
        if not 0 < float(s["sampling_rate"]) <= 1:
            raise ValueError("sampling_rate must lie in (0, 1]")
        if int(s["n_sam"]) < 1 or float(s["cell_size_m"]) <= 0:
            raise ValueError("n_sam and cell_size_m must be positive")
        if s["kernel"] not in KERNELS:
            raise ValueError(f"kernel must be one of {', '.join(KERNELS)}")
        return s


@dataclass
class EvalReport:
    rse_rows: list = field(default_factory=list)
    detection_rows: list = field(default_factory=list)
    bias: dict = field(default_factory=dict)  # label -> BiasReport
    failures: list = field(default_factory=list)


def run_pipeline(spec: RunSpec, cache: RecoveryCache | None = None) -> EvalReport:
    """Full pipeline for every swept value and seed; failed seeds are logged and skipped."""
    cache = cache or RecoveryCache()
    report = EvalReport()
    oracles: dict = {}
    for value in spec.values:
        s = spec.setting(value)
        label = f"{spec.sweep}={value}"
        pooled = BiasReport()
        rses, dets = [], []
        for seed in range(spec.seeds):
            try:
                rec = cache.get(spec.scenario, s["cell_size_m"], s["sampling_rate"], s["n_sam"], seed)
                cfg = rec.cfg
                covered = detect(rec, float(s["delta_p"]), KERNELS[s["kernel"]], seed)
                derived = build_database(cfg.bs_loc, cfg.r_cell_km, None, cfg.grid,
                                         cfg.interference, covered=covered)
                okey = (spec.scenario, float(s["cell_size_m"]))
                if okey not in oracles:
                    oracles[okey] = oracle_mpep(cfg, rec.truth_labels, cfg.cell_mask)
                pooled.extend(bias_report(derived, oracles[okey], rec.truth_labels, cfg.interference))
                rses.append(rec.rse_db)
                dets.append(detection_probability(covered, rec.truth_labels))
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                log.warning("%s seed %d failed: %s", label, seed, exc)
                report.failures.append((label, seed, str(exc)))
        report.bias[label] = pooled
        base = dict(scenario=spec.scenario, sampling_rate=s["sampling_rate"], n_sam=s["n_sam"],
                    cell_size_m=s["cell_size_m"], seeds=len(rses))
        if rses:
            report.rse_rows.append({**base, "mean_rse_db": float(np.mean(rses))})
            report.detection_rows.append({**base, "kernel": s["kernel"], "delta_p": s["delta_p"],
                                          "mean_detection": float(np.mean(dets))})
    return report


def sweep_rse(scenario: str, rates, n_sams, cell_sizes, seeds: int,
              cache: RecoveryCache | None = None) -> list[dict]:
    """Mean RSE per (rate, N_sam, cell size); per-seed values kept under ``per_seed``."""
    cache = cache or RecoveryCache()
    rows = []
    for cell in cell_sizes:
        for n in n_sams:
            for rate in rates:
                vals = [cache.get(scenario, cell, rate, n, s).rse_db for s in range(seeds)]
                rows.append(dict(scenario=scenario, sampling_rate=rate, n_sam=n, cell_size_m=cell,
                                 seeds=seeds, mean_rse_db=float(np.mean(vals)), per_seed=vals))
    return rows


def sweep_detection(scenario: str, kernels, rates, seeds: int, n_sam: int = 100,
                    cell_size_m: float = 80.0, delta_p: float = 0.0,
                    cache: RecoveryCache | None = None) -> list[dict]:
    """Mean successful detection probability per (kernel, rate)."""
    cache = cache or RecoveryCache()
    rows = []
    for name in kernels:
        for rate in rates:
            vals = []
            for s in range(seeds):
                rec = cache.get(scenario, cell_size_m, rate, n_sam, s)
                vals.append(detection_probability(detect(rec, delta_p, KERNELS[name], s),
                                                  rec.truth_labels))
            rows.append(dict(scenario=scenario, kernel=name, sampling_rate=rate, n_sam=n_sam,
                             cell_size_m=cell_size_m, delta_p=delta_p, seeds=seeds,
                             mean_detection=float(np.mean(vals)), per_seed=vals))
    return rows


RSE_COLUMNS = ("scenario", "sampling_rate", "n_sam", "cell_size_m", "seeds", "mean_rse_db")
DETECTION_COLUMNS = ("scenario", "kernel", "sampling_rate", "n_sam", "cell_size_m", "delta_p",
                     "seeds", "mean_detection")
CDF_COLUMNS = ("setting", "bias", "cdf")


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def emit_csv(report: EvalReport, out_dir) -> list[str]:
    """Write rse_sweep, detection_sweep, mpep_bias_cdf and ip_bias_cdf CSV files."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def write(name, columns, rows):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(row[c]) for c in columns])
        paths.append(path)

    write("rse_sweep", RSE_COLUMNS, report.rse_rows)
    write("detection_sweep", DETECTION_COLUMNS, report.detection_rows)
    for name, attr in (("mpep_bias_cdf", "mpep_cdf"), ("ip_bias_cdf", "ip_cdf")):
        rows = []
        for label, br in report.bias.items():
            xs, cs = getattr(br, attr)
            rows += [dict(setting=label, bias=x, cdf=c) for x, c in zip(xs, cs)]
        write(name, CDF_COLUMNS, rows)
    return paths
