"""Uniform cubic grids, sampled scalar fields and the discrete operators on them.

All quadratures are rectangle rules ``h**3 * sum(values)``; numpy's pairwise
summation over a C-contiguous array of fixed shape gives a fixed reduction
tree, so every integral is bit-reproducible for a given input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

__all__ = [
    "Grid3D",
    "ScalarField",
    "integrate",
    "inner",
    "laplacian",
    "dirichlet_laplacian_apply",
    "kinetic_quadratic_form",
    "gradient_squared",
    "rescale_field",
    "shift_cells",
    "ShiftedLaplacianInverse",
    "write_field",
    "read_field",
    "FIELD_MAGIC",
]

FIELD_MAGIC = b"FNLSFLD1"


@dataclass(frozen=True)
class Grid3D:
    """Box ``[-L, L]^3`` sampled with ``n`` nodes per axis (nodes on the faces)."""

    extent: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"grid needs n >= 16 points per axis, got {self.n}")
        if not (self.extent > 0 and np.isfinite(self.extent)):
            raise ValueError(f"box half-width must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.n - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def axis(self) -> np.ndarray:
        return -self.extent + self.spacing * np.arange(self.n)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of shapes (n,1,1), (1,n,1), (1,1,n)."""
        a = self.axis
        return a[:, None, None], a[None, :, None], a[None, None, :]

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        x, y, z = self.coordinates()
        c = np.asarray(center, dtype=float)
        return np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)

    def center_index(self) -> tuple[int, int, int]:
        m = (self.n - 1) // 2
        return (m, m, m)

    def point(self, index) -> np.ndarray:
        return -self.extent + self.spacing * np.asarray(index, dtype=float)

    def contains(self, point) -> bool:
        return bool(np.all(np.abs(np.asarray(point, dtype=float)) <= self.extent))

    def is_node(self, point, atol: float = 1e-12) -> bool:
        """True when ``point`` coincides with a grid node."""
        idx = (np.asarray(point, dtype=float) + self.extent) / self.spacing
        return bool(
            np.all(np.abs(idx - np.round(idx)) <= atol / self.spacing)
            and np.all((np.round(idx) >= 0) & (np.round(idx) <= self.n - 1))
        )


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of a function on ``grid``; immutable once built."""

    grid: Grid3D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid3D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid3D, func) -> "ScalarField":
        x, y, z = grid.coordinates()
        return cls(grid, np.broadcast_to(func(x, y, z), grid.shape))

    def _check(self, other: "ScalarField"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner(self, self)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _as_array(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f)


def integrate(f: ScalarField) -> float:
    """Rectangle-rule integral ``h^3 * sum(f)`` over the box."""
    return float(f.grid.cell_volume * np.sum(f.values))


def inner(f: ScalarField, g: ScalarField) -> float:
    """Discrete L2 inner product."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(f.grid.cell_volume * np.sum(f.values * g.values))


# central second-difference weights for -d2/dx2, offsets 0, 1, 2
_STENCILS = {
    2: (2.0, -1.0),
    4: (30.0 / 12.0, -16.0 / 12.0, 1.0 / 12.0),
}


def laplacian(values: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """``-Δ`` of a raw array (last three axes spatial), zero outside the box."""
    try:
        weights = _STENCILS[order]
    except KeyError:
        raise ValueError(f"stencil order must be 2 or 4, got {order}") from None
    v = np.asarray(values, dtype=np.float64)
    out = (3.0 * weights[0]) * v
    nd = v.ndim
    for ax in range(nd - 3, nd):
        for off, w in enumerate(weights[1:], start=1):
            lo = [slice(None)] * nd
            hi = [slice(None)] * nd
            lo[ax] = slice(off, None)
            hi[ax] = slice(None, -off)
            # out[i] += w * (v[i-off] + v[i+off]); neighbours beyond the faces are zero
            out[tuple(lo)] += w * v[tuple(hi)]
            out[tuple(hi)] += w * v[tuple(lo)]
    out /= h * h
    return out


def dirichlet_laplacian_apply(f: ScalarField, order: int = 2) -> ScalarField:
    """Return ``-Δf`` by central differences with zero values outside the box."""
    return ScalarField(f.grid, laplacian(f.values, f.grid.spacing, order))


def kinetic_quadratic_form(f: ScalarField, order: int = 2) -> float:
    """``∫|∇f|^2`` evaluated as ``<f, -Δf>`` with the shared stencil."""
    lap = laplacian(f.values, f.grid.spacing, order)
    return float(f.grid.cell_volume * np.sum(f.values * lap))


def gradient_squared(values: np.ndarray, h: float) -> float:
    """``∫|∇f|^2`` from forward differences (zero beyond the faces).

    Used where the argument is not a smooth orbital (e.g. ``sqrt(rho)``), so
    that the result stays a sum of squares and is nonnegative by construction.
    """
    v = np.asarray(values, dtype=np.float64)
    total = 0.0
    for ax in range(3):
        pad = [(0, 0)] * 3
        pad[ax] = (1, 1)
        d = np.diff(np.pad(v, pad), axis=ax)
        total += float(np.sum(d * d))
    return total * h  # h^3 * (1/h^2)


def rescale_field(f: ScalarField, scale: float, shift, target: Grid3D) -> ScalarField:
    """Sample ``g(x) = scale^{3/2} f(scale*x + shift)`` on ``target``.

    Trilinear interpolation; points that fall outside the source box read zero.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    shift = np.asarray(shift, dtype=float)
    src = f.grid
    a = target.axis
    # fractional source indices along each axis
    idx = [(scale * a + shift[k] + src.extent) / src.spacing for k in range(3)]
    same = (
        target == src and scale == 1.0 and np.all(shift == 0.0)
    )
    if same:
        return ScalarField(target, f.values.copy())
    ix, iy, iz = np.meshgrid(idx[0], idx[1], idx[2], indexing="ij", sparse=False)
    coords = np.stack([ix.ravel(), iy.ravel(), iz.ravel()])
    vals = map_coordinates(f.values, coords, order=1, mode="constant", cval=0.0)
    return ScalarField(target, scale**1.5 * vals.reshape(target.shape))


def shift_cells(values: np.ndarray, shift) -> np.ndarray:
    """Translate an array by whole cells along the last three axes, zero filling."""
    out = np.asarray(values)
    for ax, s in zip(range(out.ndim - 3, out.ndim), shift):
        s = int(s)
        if s == 0:
            continue
        rolled = np.roll(out, s, axis=ax)
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(0, s) if s > 0 else slice(s, None)
        rolled[tuple(sl)] = 0.0
        out = rolled
    return np.array(out, copy=True)


class ShiftedLaplacianInverse:
    """Exact inverse of ``(-Δ_h + shift)`` for the second-order Dirichlet stencil.

    The 7-point operator with zero exterior values is diagonalised by the type-I
    discrete sine basis. The transform is applied as a dense orthogonal matrix
    along each axis: FFT-based DSTs of length ``2(n+1)`` are slow whenever
    ``n+1`` has a large prime factor, while the matrix form is BLAS-bound.
    """

    def __init__(self, grid: Grid3D, shift: float):
        n, h = grid.n, grid.spacing
        k = np.arange(1, n + 1)
        lam = (4.0 / h**2) * np.sin(np.pi * k / (2 * (n + 1))) ** 2
        self.symbol = lam[:, None, None] + lam[None, :, None] + lam[None, None, :]
        self.shift = float(shift)
        self.grid = grid
        # symmetric and orthogonal: S @ S = I
        self.basis = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(k, k) / (n + 1))

    @property
    def smallest(self) -> float:
        return float(self.symbol[0, 0, 0])

    def _transform(self, values: np.ndarray) -> np.ndarray:
        s = self.basis
        n = s.shape[0]
        lead = values.shape[:-3]
        out = (values.reshape(-1, n) @ s).reshape(-1, n, n, n)
        out = np.matmul(s, out)  # acts on the middle axis
        out = np.matmul(s, out.reshape(-1, n, n * n))  # first axis
        return out.reshape(lead + (n, n, n))

    def __call__(self, values: np.ndarray) -> np.ndarray:
        c = self._transform(np.asarray(values, dtype=np.float64))
        c /= self.symbol + self.shift
        return self._transform(c)


_HEADER = struct.Struct("<8sIdd4x")  # 8 + 4 + 8 + 8 + 4 reserved = 32 bytes


def write_field(path, f: ScalarField) -> None:
    """Binary dump: 32-byte header then n^3 little-endian float64, z fastest."""
    g = f.grid
    header = _HEADER.pack(FIELD_MAGIC, g.n, g.extent, g.spacing)
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> ScalarField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated field header")
    magic, n, extent, spacing = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    grid = Grid3D(extent, n)
    if not np.isclose(spacing, grid.spacing, rtol=1e-14, atol=0):
        raise ValueError(f"{path}: header spacing inconsistent with n and L")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n**3:
        raise ValueError(f"{path}: expected {n**3} values, found {body.size}")
    return ScalarField(grid, body.reshape(grid.shape).astype(np.float64))
