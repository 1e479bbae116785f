"""Square-grid geometry and the spectrum matrix container.

Row ``i`` runs south to north and column ``j`` west to east; the centre of
cell ``(i, j)`` (0-based) is ``origin + ((j + 0.5) * L, (i + 0.5) * L)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .radio import Location

MATRIX_MAGIC = b"TVWS"
MATRIX_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    origin: Location
    cell_size_m: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")
        if not self.cell_size_m > 0:
            raise ValueError("cell size must be positive")

    @property
    def cell_km(self) -> float:
        return self.cell_size_m / 1000.0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def width_km(self) -> float:
        return self.cols * self.cell_km

    @property
    def height_km(self) -> float:
        return self.rows * self.cell_km

    @classmethod
    def centered(cls, center: Location, side_km: float, cell_size_m: float) -> "GridSpec":
        n = int(round(side_km * 1000.0 / cell_size_m))
        half = n * cell_size_m / 2000.0
        return cls(Location(center[0] - half, center[1] - half), cell_size_m, n, n)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Centre coordinates as two (rows, cols) arrays."""
        cols = (np.arange(self.cols) + 0.5) * self.cell_km + self.origin.x
        rows = (np.arange(self.rows) + 0.5) * self.cell_km + self.origin.y
        return np.meshgrid(cols, rows)

    def center(self, i: int, j: int) -> Location:
        # Same operation order as centers(): both paths agree to the bit.
        return Location((j + 0.5) * self.cell_km + self.origin.x,
                        (i + 0.5) * self.cell_km + self.origin.y)

    def index_of(self, loc: Location) -> tuple[int, int] | None:
        """Cell containing ``loc``; None outside the grid."""
        fx = (loc[0] - self.origin.x) / self.cell_km
        fy = (loc[1] - self.origin.y) / self.cell_km
        if not (0 <= fx < self.cols and 0 <= fy < self.rows):
            return None
        return int(fy), int(fx)

    def indices_of(self, xs, ys) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised ``index_of``: (rows, cols, inside mask)."""
        fx = (np.asarray(xs, dtype=float) - self.origin.x) / self.cell_km
        fy = (np.asarray(ys, dtype=float) - self.origin.y) / self.cell_km
        inside = (fx >= 0) & (fx < self.cols) & (fy >= 0) & (fy < self.rows)
        return np.floor(fy).astype(np.int64), np.floor(fx).astype(np.int64), inside

    def disc_mask(self, center: Location, radius_km: float) -> np.ndarray:
        X, Y = self.centers()
        return np.hypot(X - center[0], Y - center[1]) <= radius_km


@dataclass
class SpectrumMatrix:
    """Mean received DTV power per grid cell (dBm) plus a known-entry mask."""

    values: np.ndarray
    known: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.known is None:
            self.known = np.ones(self.values.shape, dtype=bool)
        self.known = np.asarray(self.known, dtype=bool)
        if self.known.shape != self.values.shape or self.values.ndim != 2:
            raise ValueError("values and mask must be matching 2-D arrays")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def is_complete(self) -> bool:
        return bool(self.known.all())

    @property
    def known_fraction(self) -> float:
        return float(self.known.mean())

    def zero_filled(self) -> np.ndarray:
        return np.where(self.known, self.values, 0.0)


# Partially observed matrices use the same container.
PartialSpectrumMatrix = SpectrumMatrix


def write_matrix_text(mat: SpectrumMatrix, fh, delimiter: str = ",") -> None:
    for row, mask in zip(mat.values, mat.known):
        fh.write(delimiter.join(repr(float(v)) if k else "NA" for v, k in zip(row, mask)))
        fh.write("\n")


def read_matrix_text(fh, delimiter: str = ",") -> SpectrumMatrix:
    rows, masks = [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(delimiter)]
        rows.append([float("nan") if c == "NA" else float(c) for c in cells])
        masks.append([c != "NA" for c in cells])
    if len({len(r) for r in rows}) > 1:
        raise ValueError("ragged matrix text")
    values = np.array(rows, dtype=float)
    known = np.array(masks, dtype=bool)
    return SpectrumMatrix(np.where(known, values, 0.0), known)


def matrix_to_bytes(mat: SpectrumMatrix) -> bytes:
    p, m = mat.shape
    buf = io.BytesIO()
    buf.write(MATRIX_MAGIC)
    buf.write(struct.pack("<HII", MATRIX_VERSION, p, m))
    buf.write(np.ascontiguousarray(mat.values, dtype="<f8").tobytes())
    buf.write(np.packbits(mat.known.ravel(), bitorder="little").tobytes())
    return buf.getvalue()


def matrix_from_bytes(data: bytes) -> SpectrumMatrix:
    if data[:4] != MATRIX_MAGIC:
        raise ValueError("not a TVWS matrix file")
    if len(data) < 14:
        raise ValueError("truncated matrix header")
    version, p, m = struct.unpack_from("<HII", data, 4)
    if version != MATRIX_VERSION:
        raise ValueError(f"unsupported matrix version {version}")
    n = p * m
    nbits = (n + 7) // 8
    if len(data) != 14 + 8 * n + nbits:
        raise ValueError("matrix payload has the wrong length")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=14).reshape(p, m).astype(float)
    bits = np.frombuffer(data, dtype=np.uint8, count=nbits, offset=14 + 8 * n)
    known = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(p, m)
    return SpectrumMatrix(values, known)
