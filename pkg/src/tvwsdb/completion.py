"""Nuclear-norm matrix completion by fixed-point continuation (FPCA).

Each stage of the continuation solves

    min_M  tau * ||M||_*  +  1/2 * sum_{(i,j) known} (M_ij - M^E_ij)^2

with the fixed-point iteration ``Y = M - step * P*(P(M) - M^E)``,
``M <- shrink(Y, tau * step)`` until the relative change drops below
``stop_beta``; ``tau`` then shrinks geometrically down to a floor.  With a
noise estimate the floor sits at the expected spectral norm of the sampled
noise, so the last stage denoises instead of interpolating the noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import svds

from .grid import SpectrumMatrix

log = logging.getLogger(__name__)

FULL_SVD_LIMIT = 512
RSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class FpcaConfig:
    tau_initial_factor: float = 0.99
    tau_decay: float = 0.25
    tau_floor_factor: float = 1e-8
    step_delta: float = 1.0
    stop_beta: float = 1e-6
    max_rank: int | None = None
    max_iters_per_stage: int = 5000
    noise_std_db: float | None = None  # raises the tau floor to the noise level when set

    def __post_init__(self):
        if not 0 < self.tau_decay < 1:
            raise ValueError("tau_decay must lie in (0, 1)")
        if not 0 < self.step_delta < 2:
            raise ValueError("step_delta must lie in (0, 2)")
        if not self.stop_beta > 0:
            raise ValueError("stop_beta must be positive")


@dataclass
class CompletionResult:
    matrix: SpectrumMatrix
    converged: bool
    iterations: int
    stages: int
    stage_objectives: list[float]


def shrink(M: np.ndarray, nu: float) -> np.ndarray:
    """Soft-threshold the singular values of ``M`` by ``nu``."""
    if nu < 0:
        raise ValueError("shrinkage amount must be >= 0")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - nu, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def truncated_svd(M: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``r`` singular triplets ``(U, sigma, V)`` in descending order."""
    k = min(M.shape)
    if not 1 <= r <= k:
        raise ValueError(f"rank must lie in [1, {k}]")
    if r == k or k <= 64:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        return U[:, :r], s[:r], Vt[:r].T
    # Fixed start vector keeps the Lanczos iteration deterministic.
    v0 = np.ones(k) / math.sqrt(k)
    U, s, Vt = svds(M, k=r, v0=v0)
    order = np.argsort(s)[::-1]
    return U[:, order], s[order], Vt[order].T


def _shrink_truncated(M: np.ndarray, nu: float, rank: int) -> np.ndarray:
    U, s, V = truncated_svd(M, rank)
    s = np.maximum(s - nu, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ V[:, keep].T


def nuclear_norm(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False).sum())


def fpca_objective(M: np.ndarray, obs: SpectrumMatrix, tau: float) -> float:
    resid = np.where(obs.known, M - obs.values, 0.0)
    return tau * nuclear_norm(M) + 0.5 * float(np.sum(resid ** 2))


def fpca_complete(obs: SpectrumMatrix, cfg: FpcaConfig = FpcaConfig(),
                  track_objective: bool = False) -> CompletionResult:
    """Fill the unknown entries of ``obs`` by nuclear-norm minimisation."""
    mask = obs.known
    if not mask.any():
        raise ValueError("no known entries to complete from")
    observed = obs.zero_filled()
    p, m = observed.shape
    use_full = max(p, m) < FULL_SVD_LIMIT
    rank = cfg.max_rank or max(1, min(p, m) // 4)

    # Unknowns start at the mean known level; zero dBm would be a huge artificial signal.
    M = np.where(mask, observed, observed[mask].mean())
    tau = cfg.tau_initial_factor * np.linalg.norm(observed, 2)
    tau_floor = cfg.tau_floor_factor * tau
    if cfg.noise_std_db:
        # expected spectral norm of the sampled noise matrix
        noise_level = cfg.noise_std_db * (math.sqrt(p) + math.sqrt(m)) * math.sqrt(mask.mean())
        tau_floor = min(tau, max(tau_floor, noise_level))
    step = cfg.step_delta

    total_iters = stages = 0
    converged = True
    objectives: list[float] = []
    while True:
        stages += 1
        stage_ok = False
        for _ in range(cfg.max_iters_per_stage):
            Y = M - step * np.where(mask, M - observed, 0.0)
            M_next = shrink(Y, tau * step) if use_full else _shrink_truncated(Y, tau * step, rank)
            total_iters += 1
            change = np.linalg.norm(M_next - M) / max(1.0, np.linalg.norm(M))
            M = M_next
            if change <= cfg.stop_beta:
                stage_ok = True
                break
        if not stage_ok:
            converged = False
            log.warning("FPCA stage %d hit %d iterations (tau=%.3g)", stages,
                        cfg.max_iters_per_stage, tau)
        if track_objective:
            objectives.append(fpca_objective(M, obs, tau))
        if tau <= tau_floor:
            break
        tau = max(tau * cfg.tau_decay, tau_floor)
    return CompletionResult(SpectrumMatrix(M), converged, total_iters, stages, objectives)


def rse_db(recovered: SpectrumMatrix | np.ndarray, truth: SpectrumMatrix | np.ndarray) -> float:
    """10*log10(||recovered - truth||_F / ||truth||_F), floored at -300 dB."""
    R = getattr(recovered, "values", recovered)
    G = getattr(truth, "values", truth)
    if R.shape != G.shape:
        raise ValueError("shape mismatch")
    den = np.linalg.norm(G)
    if den == 0:
        raise ValueError("truth matrix has zero norm")
    ratio = np.linalg.norm(R - G) / den
    if ratio == 0:
        return RSE_FLOOR_DB
    return max(RSE_FLOOR_DB, 10.0 * math.log10(ratio))
