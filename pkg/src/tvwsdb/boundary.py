"""Coverage boundary detection with a soft-margin kernel SVM.

Grids are first labelled by thresholding the completed spectrum matrix
(-1 covered, +1 uncovered).  The SVM dual

    max_a  sum(a) - 1/2 sum_ij a_i a_j h_i h_j k(l_i, l_j)
    s.t.   sum(a * h) = 0,  0 <= a <= C

is solved by pairwise coordinate ascent with second-order working-pair
selection.  Locations are scaled to the unit square before any kernel call.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist

from .grid import GridSpec, SpectrumMatrix
from .radio import Location
from .reuse import COVERED, UNCOVERED

log = logging.getLogger(__name__)

MODEL_HEADER = "tvws-boundary-model 1"
_TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    poly_c: float = 1.0
    poly_degree: int = 2
    rbf_sigma: float = 0.0  # 0: median pairwise distance of the training set

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.poly_c < 0 or self.poly_degree < 1 or self.rbf_sigma < 0:
            raise ValueError("invalid kernel parameters")


QUADRATIC = KernelSpec("polynomial", poly_c=1.0, poly_degree=2)
RBF = KernelSpec("rbf")


def kernel_matrix(A: np.ndarray, B: np.ndarray, k: KernelSpec) -> np.ndarray:
    """Gram matrix between the rows of ``A`` and ``B`` (both (n, 2))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if k.kind == "rbf":
        if k.rbf_sigma <= 0:
            raise ValueError("rbf sigma must be resolved before evaluation")
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * k.rbf_sigma ** 2))
    inner = A @ B.T
    if k.kind == "linear":
        return inner
    return (inner + k.poly_c) ** k.poly_degree


def kernel_eval(a: Location, b: Location, k: KernelSpec) -> float:
    return float(kernel_matrix(np.array([a]), np.array([b]), k)[0, 0])


@dataclass
class BoundaryModel:
    support: np.ndarray  # (n_sv, 2), normalised coordinates
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: KernelSpec
    norm: tuple[float, float, float] = (0.0, 0.0, 1.0)  # origin x, origin y, scale (km)
    c_reg: float = 10.0
    converged: bool = True
    kkt_residual: float = 0.0
    train_errors: int = 0
    n_train: int = 0
    extra: dict = field(default_factory=dict)

    def normalise(self, xs, ys) -> np.ndarray:
        ox, oy, scale = self.norm
        return np.column_stack([(np.asarray(xs, dtype=float) - ox) / scale,
                                (np.asarray(ys, dtype=float) - oy) / scale])

    @property
    def support_locs(self) -> list[Location]:
        ox, oy, scale = self.norm
        return [Location(ox + u * scale, oy + v * scale) for u, v in self.support]


def hypothesis_labels(recovered: SpectrumMatrix, p_bar_min: float, delta_p: float = 0.0) -> np.ndarray:
    """Threshold test per grid: covered (-1) iff power >= p_bar_min - delta_p."""
    if not recovered.is_complete:
        raise ValueError("hypothesis test needs a fully populated matrix")
    return np.where(recovered.values >= p_bar_min - delta_p, COVERED, UNCOVERED).astype(np.int8)


def _dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    converged: bool
    iterations: int
    gap: float
    objective: float


def solve_dual(K: np.ndarray, y: np.ndarray, c_reg: float, tol: float = 1e-3,
               max_iter: int | None = None) -> DualSolution:
    """Pairwise coordinate ascent on the SVM dual.

    Stops when the maximal KKT violation gap m(a) - M(a) drops below ``tol``.
    """
    n = y.size
    y = y.astype(float)
    max_iter = max_iter or max(100_000, 50 * n)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - sum(a), Q = yy' * K
    diag = np.diag(K).copy()
    it = 0
    gap = math.inf
    converged = False
    while it < max_iter:
        up = np.where(y > 0, alpha < c_reg, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < c_reg)
        score = -y * grad
        up_scores = np.where(up, score, -np.inf)
        i = int(np.argmax(up_scores))
        m_val = up_scores[i]
        low_scores = np.where(low, score, np.inf)
        gap = m_val - low_scores.min()
        if gap < tol:
            converged = True
            break
        # second-order choice of j among violating partners
        b = m_val - score
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > _TAU, a, _TAU)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        # move a_i by +y_i t and a_j by -y_j t, keeping sum(a*y) fixed
        t = b[j] / a[j]
        t = min(t, c_reg - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else c_reg - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        # snap to the box to keep bounds exact
        for k in (i, j):
            if alpha[k] < 1e-12 * c_reg:
                alpha[k] = 0.0
            elif alpha[k] > c_reg * (1 - 1e-12):
                alpha[k] = c_reg
        grad += t * y * (K[:, i] - K[:, j])
        it += 1
    if not converged:
        log.warning("SVM dual stopped after %d iterations with gap %.3g", it, gap)
    score = -y * grad
    free = (alpha > 0) & (alpha < c_reg)
    if free.any():
        bias = float(score[free].mean())
    else:
        up = np.where(y > 0, alpha < c_reg, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < c_reg)
        bias = float(0.5 * (score[up].max() + score[low].min()))
    return DualSolution(alpha, bias, converged, it, float(gap), _dual_objective(alpha, y, K))


def kkt_residual(alpha: np.ndarray, y: np.ndarray, f_raw: np.ndarray, c_reg: float) -> float:
    """Largest violation of the soft-margin KKT conditions."""
    margin = y * f_raw - 1.0
    lower = alpha <= 0
    upper = alpha >= c_reg
    free = ~lower & ~upper
    viol = np.zeros_like(margin)
    viol[lower] = np.maximum(0.0, -margin[lower])
    viol[upper] = np.maximum(0.0, margin[upper])
    viol[free] = np.abs(margin[free])
    return float(viol.max()) if viol.size else 0.0


def boundary_subsample(labels: np.ndarray, size: int, band: int = 3,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Flat indices: every grid within ``band`` cells of a label change, then uniform fill."""
    rng = rng or np.random.default_rng(0)
    n = labels.size
    if n <= size:
        return np.arange(n)
    win = 2 * band + 1
    near = (ndimage.maximum_filter(labels, size=win, mode="nearest")
            != ndimage.minimum_filter(labels, size=win, mode="nearest")).ravel()
    near_idx = np.flatnonzero(near)
    if near_idx.size >= size:
        return np.sort(rng.choice(near_idx, size=size, replace=False))
    rest = np.flatnonzero(~near)
    fill = rng.choice(rest, size=size - near_idx.size, replace=False)
    return np.sort(np.concatenate([near_idx, fill]))


def median_distance(P: np.ndarray) -> float:
    d = pdist(P)
    med = float(np.median(d)) if d.size else 1.0
    return med if med > 0 else 1.0


def fit_svm(points: np.ndarray, y: np.ndarray, k: KernelSpec, c_reg: float = 10.0,
            tol: float = 1e-3, norm: tuple[float, float, float] = (0.0, 0.0, 1.0)) -> BoundaryModel:
    """Train on already-normalised ``points`` with labels ``y`` in {-1, +1}."""
    y = np.asarray(y, dtype=float)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training labels contain a single class")
    if k.kind == "rbf" and k.rbf_sigma <= 0:
        k = KernelSpec("rbf", k.poly_c, k.poly_degree, median_distance(points))
    K = kernel_matrix(points, points, k)
    sol = solve_dual(K, y, c_reg, tol)
    f_raw = K @ (sol.alpha * y) + sol.bias
    sv = sol.alpha > 0
    pred = np.where(f_raw > 0, 1.0, -1.0)
    return BoundaryModel(points[sv].copy(), sol.alpha[sv].copy(), y[sv].astype(np.int8), sol.bias, k,
                         norm, c_reg, sol.converged,
                         kkt_residual(sol.alpha, y, f_raw, c_reg), int((pred != y).sum()), y.size,
                         {"iterations": sol.iterations, "gap": sol.gap, "objective": sol.objective})


def grid_normalisation(grid: GridSpec) -> tuple[float, float, float]:
    return (grid.origin.x, grid.origin.y, max(grid.width_km, grid.height_km))


def train_svm(labels: np.ndarray, grid: GridSpec, k: KernelSpec = RBF, c_reg: float = 10.0,
              subsample: int = 2000, seed: int = 0, tol: float = 1e-3) -> BoundaryModel:
    """Fit the boundary on (a stratified subsample of) the labelled grid centres."""
    labels = np.asarray(labels)
    if labels.shape != grid.shape:
        raise ValueError("labels do not match the grid")
    if np.all(labels == labels.flat[0]):
        raise ValueError("labels contain a single class")
    idx = boundary_subsample(labels, subsample, rng=np.random.default_rng(seed))
    X, Y = grid.centers()
    norm = grid_normalisation(grid)
    probe = BoundaryModel(np.empty((0, 2)), np.empty(0), np.empty(0), 0.0, k, norm)
    pts = probe.normalise(X.ravel()[idx], Y.ravel()[idx])
    y = labels.ravel()[idx]
    if np.all(y == y[0]):
        raise ValueError("subsample contains a single class")
    return fit_svm(pts, y, k, c_reg, tol, norm)


def decision_values(model: BoundaryModel, xs, ys, chunk: int = 4096) -> np.ndarray:
    """Raw kernel expansion sum(a h k(l, sv)) + b at each location (km)."""
    pts = model.normalise(np.ravel(xs), np.ravel(ys))
    coef = model.alphas * model.labels
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        out[s:s + chunk] = kernel_matrix(pts[s:s + chunk], model.support, model.kernel) @ coef
    return out + model.bias


def classify_many(model: BoundaryModel, xs, ys) -> np.ndarray:
    # A raw score of exactly 0 counts as covered.
    return np.where(decision_values(model, xs, ys) > 0, UNCOVERED, COVERED).astype(np.int8)


def classify(model: BoundaryModel, loc: Location) -> int:
    return int(classify_many(model, [loc[0]], [loc[1]])[0])


def raw_score(model: BoundaryModel, loc: Location) -> float:
    return float(decision_values(model, [loc[0]], [loc[1]])[0])


def detection_probability(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of grids whose covered/uncovered state matches the truth."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError("label grids differ in shape")
    return float(np.mean(predicted == truth))


# --- text serialisation ------------------------------------------------

def dump_model(model: BoundaryModel, fh) -> None:
    k = model.kernel
    fh.write(MODEL_HEADER + "\n")
    fh.write(f"kernel {k.kind} {k.poly_c!r} {k.poly_degree} {k.rbf_sigma!r}\n")
    fh.write("norm {!r} {!r} {!r}\n".format(*map(float, model.norm)))
    fh.write(f"creg {model.c_reg!r}\n")
    for (u, v), h, a in zip(model.support, model.labels, model.alphas):
        fh.write(f"sv {float(u)!r} {float(v)!r} {int(h)} {float(a)!r}\n")
    fh.write(f"bias {model.bias!r}\n")


def load_model(fh) -> BoundaryModel:
    lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or " ".join(lines[0]) != MODEL_HEADER:
        raise ValueError("not a boundary model file (or unsupported version)")
    kernel = norm = bias = None
    c_reg = 10.0
    sv, labels, alphas = [], [], []
    for tok in lines[1:]:
        tag = tok[0]
        if tag == "kernel":
            kernel = KernelSpec(tok[1], float(tok[2]), int(tok[3]), float(tok[4]))
        elif tag == "norm":
            norm = tuple(float(t) for t in tok[1:4])
        elif tag == "creg":
            c_reg = float(tok[1])
        elif tag == "sv":
            sv.append((float(tok[1]), float(tok[2])))
            labels.append(int(tok[3]))
            alphas.append(float(tok[4]))
        elif tag == "bias":
            bias = float(tok[1])
        else:
            raise ValueError(f"unexpected model line {' '.join(tok)!r}")
    if kernel is None or norm is None or bias is None:
        raise ValueError("incomplete boundary model file")
    return BoundaryModel(np.array(sv, dtype=float).reshape(-1, 2), np.array(alphas),
                         np.array(labels, dtype=np.int8), bias, kernel, norm, c_reg)
