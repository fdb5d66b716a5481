"""Uniform collocated grid on an origin-centred cube.

Fields are plain numpy arrays: scalar fields have shape ``(n, n, n)`` (real or
complex), vector fields ``(n, n, n, 3)``. Derivatives use second-order centred
differences in the interior and second-order one-sided differences on the
boundary layer, assembled as sparse matrices so adjoints are available to the
energy gradients.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MIN_NODES = 8
FIELD_FORMAT_VERSION = 1
_FIELD_MAGIC = b"LCPF"
# magic, format_version, n_per_axis, L, components, is_complex
_HEADER = struct.Struct("<4sIIdII")


class GridError(ValueError):
    pass


def derivative_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    """Second-order first-derivative matrix on ``n`` equispaced nodes.

    Matches ``np.gradient(..., edge_order=2)`` row for row.
    """
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5, 0.5]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 1, n - 2, n - 3]
    vals += [-1.5, 2.0, -0.5, 1.5, -2.0, 0.5]
    return sp.csr_matrix((np.array(vals) / h, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class Grid:
    """Nodes ``-L/2 + i*h`` per axis, ``h = L/(n_per_axis - 1)``."""

    n_per_axis: int
    L: float

    def __post_init__(self):
        if int(self.n_per_axis) != self.n_per_axis or self.n_per_axis < MIN_NODES:
            raise GridError(
                f"n_per_axis must be an integer >= {MIN_NODES}, got {self.n_per_axis}"
            )
        if not (self.L > 0 and np.isfinite(self.L)):
            raise GridError(f"side length must be positive, got {self.L}")

    @property
    def n(self) -> int:
        return self.n_per_axis

    @property
    def h(self) -> float:
        return self.L / (self.n_per_axis - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n,) * 3

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def volume(self) -> float:
        return self.L**3

    @cached_property
    def axis(self) -> np.ndarray:
        # symmetric by construction so that x -> -x maps nodes to nodes
        i = np.arange(self.n)
        return (i - (self.n - 1) / 2.0) * self.h

    @cached_property
    def coords(self) -> np.ndarray:
        x = self.axis
        return np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)

    @cached_property
    def weights_1d(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[[0, -1]] = 0.5 * self.h
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape ``(n, n, n)``."""
        w = self.weights_1d
        return np.einsum("i,j,k->ijk", w, w, w)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[[0, -1], :, :] = True
        m[:, [0, -1], :] = True
        m[:, :, [0, -1]] = True
        return m

    @cached_property
    def partials(self) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
        """Sparse ``d/dx_a`` acting on C-ordered flattened scalar fields."""
        d1 = derivative_matrix_1d(self.n, self.h)
        eye = sp.identity(self.n, format="csr")
        return (
            sp.kron(sp.kron(d1, eye), eye, format="csr"),
            sp.kron(sp.kron(eye, d1), eye, format="csr"),
            sp.kron(sp.kron(eye, eye), d1, format="csr"),
        )

    @cached_property
    def partials_T(self) -> tuple[sp.csr_matrix, ...]:
        return tuple(d.T.tocsr() for d in self.partials)

    def check_scalar(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        if f.shape != self.shape:
            raise GridError(f"scalar field shape {f.shape} does not match grid {self.shape}")
        return f

    def check_vector(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        if u.shape != self.shape + (3,):
            raise GridError(
                f"vector field shape {u.shape} does not match grid {self.shape + (3,)}"
            )
        return u


def build_grid(n_per_axis: int, L: float) -> Grid:
    return Grid(n_per_axis, float(L))


def distance_to_boundary(grid: Grid) -> np.ndarray:
    return np.min(0.5 * grid.L - np.abs(grid.coords), axis=-1)


def integrate(field: np.ndarray, grid: Grid) -> float:
    f = grid.check_scalar(field)
    return float(np.sum(grid.weights * f))


def inner(f: np.ndarray, g: np.ndarray, grid: Grid) -> complex:
    """Trapezoidal L2 inner product ``sum(w * conj(f) * g)``; vector fields summed over components."""
    f = np.asarray(f)
    g = np.asarray(g)
    w = grid.weights if f.ndim == 3 else grid.weights[..., None]
    return complex(np.sum(w * np.conj(f) * g))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner(f, f, grid).real, 0.0)))


def _d(grid: Grid, a: int, f: np.ndarray) -> np.ndarray:
    return (grid.partials[a] @ f.reshape(-1)).reshape(grid.shape)


def apply_grad(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = grid.check_scalar(f)
    return np.stack([_d(grid, a, f) for a in range(3)], axis=-1)


def apply_div(u: np.ndarray, grid: Grid) -> np.ndarray:
    u = grid.check_vector(u)
    return sum(_d(grid, a, np.ascontiguousarray(u[..., a])) for a in range(3))


def apply_curl(u: np.ndarray, grid: Grid) -> np.ndarray:
    u = grid.check_vector(u)
    comp = [np.ascontiguousarray(u[..., a]) for a in range(3)]
    return np.stack(
        [
            _d(grid, 1, comp[2]) - _d(grid, 2, comp[1]),
            _d(grid, 2, comp[0]) - _d(grid, 0, comp[2]),
            _d(grid, 0, comp[1]) - _d(grid, 1, comp[0]),
        ],
        axis=-1,
    )


def apply_div_T(s: np.ndarray, grid: Grid) -> np.ndarray:
    """Matrix transpose of :func:`apply_div` (no quadrature weights)."""
    s = s.reshape(-1)
    return np.stack([(grid.partials_T[a] @ s).reshape(grid.shape) for a in range(3)], axis=-1)


def apply_curl_T(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Matrix transpose of :func:`apply_curl` (no quadrature weights)."""
    DT = grid.partials_T
    c = [np.ascontiguousarray(v[..., a]).reshape(-1) for a in range(3)]
    return np.stack(
        [
            (DT[2] @ c[1] - DT[1] @ c[2]).reshape(grid.shape),
            (DT[0] @ c[2] - DT[2] @ c[0]).reshape(grid.shape),
            (DT[1] @ c[0] - DT[0] @ c[1]).reshape(grid.shape),
        ],
        axis=-1,
    )


# -- serialization ---------------------------------------------------------


def save_field(path, field: np.ndarray, grid: Grid) -> None:
    """Write a field in the flat binary layout.

    Header (little endian): ``b"LCPF"``, format_version (u32), n_per_axis (u32),
    L (f64), component count (u32), complex flag (u32). Values follow node-major
    as f64, each component written as real then imaginary part when complex.
    """
    field = np.asarray(field)
    if field.shape == grid.shape:
        values = field.reshape(grid.size, 1)
    elif field.shape == grid.shape + (3,):
        values = field.reshape(grid.size, 3)
    else:
        raise GridError(f"field shape {field.shape} does not fit grid {grid.shape}")
    is_complex = np.iscomplexobj(field)
    if is_complex:
        out = np.empty((grid.size, values.shape[1], 2))
        out[..., 0] = values.real
        out[..., 1] = values.imag
    else:
        out = values.astype(np.float64)
    header = _HEADER.pack(
        _FIELD_MAGIC, FIELD_FORMAT_VERSION, grid.n, grid.L, values.shape[1], int(is_complex)
    )
    Path(path).write_bytes(header + out.astype("<f8").tobytes())


def load_field(path) -> tuple[np.ndarray, Grid]:
    raw = Path(path).read_bytes()
    magic, version, n, L, ncomp, is_complex = _HEADER.unpack_from(raw)
    if magic != _FIELD_MAGIC:
        raise GridError(f"{path}: not a field file")
    if version != FIELD_FORMAT_VERSION:
        raise GridError(f"{path}: unsupported format_version {version}")
    grid = Grid(n, L)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if is_complex:
        data = data.reshape(grid.size, ncomp, 2)
        data = data[..., 0] + 1j * data[..., 1]
    else:
        data = data.reshape(grid.size, ncomp).copy()
    shape = grid.shape if ncomp == 1 else grid.shape + (ncomp,)
    return data.reshape(shape), grid


def write_field_csv(path, field: np.ndarray, grid: Grid) -> None:
    """x,y,z,value columns plus a constant format_version column.

    Vector fields get value_0..value_2, complex ones re/im pairs.
    """
    field = np.asarray(field)
    vals = field.reshape(grid.size, -1)
    xyz = grid.coords.reshape(grid.size, 3)
    ncomp = vals.shape[1]
    names = ["value"] if ncomp == 1 else [f"value_{a}" for a in range(ncomp)]
    if np.iscomplexobj(field):
        names = [f"{nm}_{part}" for nm in names for part in ("re", "im")]
        flat = np.empty((grid.size, 2 * ncomp))
        flat[:, 0::2] = vals.real
        flat[:, 1::2] = vals.imag
    else:
        flat = vals
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"] + names + ["format_version"])
        for p, v in zip(xyz, flat):
            w.writerow(
                [repr(float(c)) for c in p]
                + [repr(float(c)) for c in v]
                + [FIELD_FORMAT_VERSION]
            )
