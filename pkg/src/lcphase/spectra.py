"""Discrete magnetic Laplacians, the chiral vector operator, and their ground states.

The magnetic operator uses link variables: on the edge ``i -> j = i + e_a``
the phase ``U = exp(-i q h A_a(midpoint))`` transports ``psi_j`` back to
``i`` and the quadratic form is

    kinetic(psi) = sum_edges  omega_e |U_e psi_j - psi_i|^2 / h^2

with ``omega_e = h * w_b * w_c`` (trapezoid weights of the two transverse
axes). Dividing by the nodal weights reproduces the 7-point stencil in the
interior and mirror ghosts with the same link phase on the boundary, so the
Neumann operator is self-adjoint for the trapezoidal inner product. Gauge
invariance is exact: ``psi -> exp(i phi) psi`` together with
``U_e -> U_e exp(-i (phi_j - phi_i))`` leaves the form unchanged.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import minimize, minimize_scalar

from .director import Rotation, helical_at, so3_sample_angles
from .grid import Grid

log = logging.getLogger(__name__)

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
DEFAULT_TOL = 1e-8
MAX_OPERATOR_APPLICATIONS = 10_000
# below this many unknowns a sparse LU + shift-invert Lanczos is the fastest route
DIRECT_SIZE_LIMIT = 20_000


class ConvergenceError(RuntimeError):
    pass


def _edge_slices(a: int):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[a] = slice(0, -1)
    hi[a] = slice(1, None)
    return tuple(lo), tuple(hi)


def edge_weights(grid: Grid, a: int) -> np.ndarray:
    """``omega_e / h^2`` for the edges along axis ``a`` (shape has n-1 along ``a``)."""
    w = [grid.weights_1d] * 3
    w[a] = np.full(grid.n - 1, grid.h)
    return np.einsum("i,j,k->ijk", *w) / grid.h**2


def link_phases(grid: Grid, A: np.ndarray, q: float) -> tuple[np.ndarray, ...]:
    """Midpoint-rule link variables ``exp(-i q int_edge A.dl)`` per axis."""
    A = grid.check_vector(A)
    out = []
    for a in range(3):
        lo, hi = _edge_slices(a)
        mid = 0.5 * (A[..., a][lo] + A[..., a][hi])
        out.append(np.exp(-1j * q * grid.h * mid))
    return tuple(out)


def gauge_links(grid: Grid, phi: np.ndarray) -> tuple[np.ndarray, ...]:
    """Exact discrete gauge of a scalar sample: ``U_e = exp(-i (phi_j - phi_i))``."""
    phi = grid.check_scalar(phi)
    out = []
    for a in range(3):
        lo, hi = _edge_slices(a)
        out.append(np.exp(-1j * (phi[hi] - phi[lo])))
    return tuple(out)


def magnetic_form(psi: np.ndarray, links, grid: Grid) -> float:
    """``sum_e omega_e |U_e psi_j - psi_i|^2 / h^2``, the discrete kinetic energy."""
    total = 0.0
    for a in range(3):
        lo, hi = _edge_slices(a)
        r = links[a] * psi[hi] - psi[lo]
        total += float(np.sum(edge_weights(grid, a) * (r.real**2 + r.imag**2)))
    return total


@dataclass(frozen=True, eq=False)
class MagneticOperator:
    grid: Grid
    links: tuple
    bc: str = NEUMANN

    def __post_init__(self):
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Hermitian matrix of the kinetic form over all nodes."""
        g = self.grid
        idx = np.arange(g.size).reshape(g.shape)
        rows, cols, vals = [], [], []
        diag = np.zeros(g.size)
        for a in range(3):
            lo, hi = _edge_slices(a)
            i = idx[lo].ravel()
            j = idx[hi].ravel()
            om = edge_weights(g, a).ravel()
            U = self.links[a].ravel()
            rows += [i, j]
            cols += [j, i]
            vals += [-om * U, -om * np.conj(U)]
            np.add.at(diag, i, om)
            np.add.at(diag, j, om)
        S = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(g.size, g.size),
        )
        return (S + sp.diags(diag)).tocsr()

    @cached_property
    def free(self) -> np.ndarray:
        """Flat indices of the unknowns (all nodes for Neumann, interior for Dirichlet)."""
        if self.bc == NEUMANN:
            return np.arange(self.grid.size)
        return np.flatnonzero(~self.grid.boundary_mask.ravel())

    @cached_property
    def symmetric_matrix(self) -> sp.csc_matrix:
        """``W^{-1/2} S W^{-1/2}`` on the free nodes: Hermitian in the Euclidean product."""
        S = self.stiffness[self.free][:, self.free]
        d = sp.diags(1.0 / np.sqrt(self.grid.weights.ravel()[self.free]))
        return (d @ S @ d).tocsc()

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Strong-form action ``H psi``; Dirichlet values are zeroed on the boundary."""
        psi = self.grid.check_scalar(psi).astype(complex)
        flat = psi.ravel().copy()
        if self.bc == DIRICHLET:
            flat[self.grid.boundary_mask.ravel()] = 0.0
        out = (self.stiffness @ flat) / self.grid.weights.ravel()
        if self.bc == DIRICHLET:
            out[self.grid.boundary_mask.ravel()] = 0.0
        return out.reshape(self.grid.shape)

    def form(self, psi: np.ndarray) -> float:
        psi = self.grid.check_scalar(psi)
        if self.bc == DIRICHLET:
            psi = np.where(self.grid.boundary_mask, 0.0, psi)
        return magnetic_form(psi, self.links, self.grid)


def assemble_magnetic(grid: Grid, A: np.ndarray, q: float, bc: str = NEUMANN) -> MagneticOperator:
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    return MagneticOperator(grid, link_phases(grid, A, q), bc)


@dataclass
class SpectralResult:
    eigenvalue: float
    eigenvector: np.ndarray
    iterations: int
    residual_norm: float

    def to_json(self) -> dict:
        return {
            "eigenvalue": float(self.eigenvalue),
            "iterations": int(self.iterations),
            "residual_norm": float(self.residual_norm),
        }


def _lowest_symmetric(H, tol: float, seed: int, method: str, maxiter: int):
    """Smallest eigenpair of a Hermitian positive semi-definite sparse matrix."""
    n = H.shape[0]
    rng = np.random.default_rng(seed)
    dtype = H.dtype
    if method == "auto":
        method = "lanczos" if n <= DIRECT_SIZE_LIMIT else "lobpcg"
    shifted = (H + sp.identity(n, dtype=dtype, format="csc")).tocsc()
    if method == "lanczos":
        # shift-invert at sigma = -1 (forms are >= 0, so the nearest eigenvalue is the lowest)
        lu = sla.splu(shifted, permc_spec="MMD_AT_PLUS_A")
        count = [0]

        def solve(v):
            count[0] += 1
            return lu.solve(np.asarray(v, dtype=dtype))

        opinv = sla.LinearOperator(H.shape, matvec=solve, dtype=dtype)
        v0 = rng.standard_normal(n)
        if np.iscomplexobj(np.zeros(0, dtype=dtype)):
            v0 = v0 + 1j * rng.standard_normal(n)
        try:
            vals, vecs = sla.eigsh(
                H, k=1, sigma=-1.0, which="LM", v0=v0.astype(dtype), OPinv=opinv,
                tol=0.01 * tol, maxiter=maxiter,
            )
        except sla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"Lanczos did not converge: {exc}") from exc
        return float(vals[0]), vecs[:, 0], count[0]
    if method == "lobpcg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(shifted.tocsr())
        M = ml.aspreconditioner()
        X = rng.standard_normal((n, 3))
        if np.iscomplexobj(np.zeros(0, dtype=dtype)):
            X = X + 1j * rng.standard_normal((n, 3))
        with warnings.catch_warnings():
            # lobpcg warns when its internal criterion is missed; _finish checks the residual
            warnings.simplefilter("ignore", UserWarning)
            vals, vecs, hist = sla.lobpcg(
                H, X.astype(dtype), M=M, tol=0.05 * tol, maxiter=min(maxiter, 2000),
                largest=False, retResidualNormsHistory=True,
            )
        k = int(np.argmin(vals))
        return float(vals[k]), vecs[:, k], len(hist)
    raise ValueError(f"unknown eigensolver method {method!r}")


def _finish(H, lam, v, iterations, tol):
    v = v / np.linalg.norm(v)
    # Rayleigh quotient is the best estimate for the returned vector
    lam = float(np.real(np.vdot(v, H @ v)))
    res = float(np.linalg.norm(H @ v - lam * v))
    if not res <= tol * max(1.0, abs(lam)):
        raise ConvergenceError(
            f"eigen-residual {res:.3e} exceeds tolerance {tol:.1e} (eigenvalue {lam:.6g})"
        )
    return lam, v, res


def lowest_eig(
    op: MagneticOperator,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    method: str = "auto",
    maxiter: int = MAX_OPERATOR_APPLICATIONS,
) -> SpectralResult:
    """Lowest eigenpair of a magnetic operator.

    ``tol`` bounds the residual ``||H v - lam v|| / ||v||`` relative to
    ``max(1, |lam|)``. The returned eigenvector is a grid field normalized in
    the trapezoidal L2 norm.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    H = op.symmetric_matrix
    lam, v, it = _lowest_symmetric(H, tol, seed, method, maxiter)
    lam, v, res = _finish(H, lam, v, it, tol)
    g = op.grid
    psi = np.zeros(g.size, dtype=complex)
    psi[op.free] = v / np.sqrt(g.weights.ravel()[op.free])
    # fix the global phase for reproducible output
    k = int(np.argmax(np.abs(psi)))
    psi *= np.exp(-1j * np.angle(psi[k]))
    return SpectralResult(lam, psi.reshape(g.shape), it, res)


# -- chiral vector operator ---------------------------------------------------


def _interior_1d(grid: Grid):
    m = grid.n - 2
    h = grid.h
    lap = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h**2
    cen = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1]) / (2 * h)
    return m, lap.tocsr(), cen.tocsr()


def assemble_ttau(grid: Grid, tau: float) -> sp.csr_matrix:
    """``-Lap + 2 tau curl + tau^2`` on fields vanishing at boundary nodes.

    Unknowns are the interior nodes, component-major (``u_x`` block, then
    ``u_y``, ``u_z``). The Laplacian is the compact 7-point one and the curl
    uses centred differences; with zero boundary values the centred
    difference is skew so the curl block is symmetric. Its quadratic form is
    ``||grad_h u||^2 + 2 tau <curl u, u> + tau^2 ||u||^2`` with forward-difference
    gradients, which is non-negative because ``||curl_h u|| <= ||grad_h u||``.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    m, lap1, cen1 = _interior_1d(grid)
    eye = sp.identity(m, format="csr")

    def on_axis(mat, a):
        mats = [eye, eye, eye]
        mats[a] = mat
        return sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")

    lap = on_axis(lap1, 0) + on_axis(lap1, 1) + on_axis(lap1, 2)
    D = [on_axis(cen1, a) for a in range(3)]
    curl = sp.bmat(
        [[None, -D[2], D[1]], [D[2], None, -D[0]], [-D[1], D[0], None]], format="csr"
    )
    M = m**3
    T = sp.block_diag([lap, lap, lap], format="csr") + 2.0 * tau * curl
    return (T + tau**2 * sp.identity(3 * M, format="csr")).tocsr()


def _interior_vector(u: np.ndarray, grid: Grid) -> np.ndarray:
    u = grid.check_vector(u)
    return np.concatenate([u[1:-1, 1:-1, 1:-1, a].ravel() for a in range(3)])


def _full_vector(x: np.ndarray, grid: Grid) -> np.ndarray:
    m = grid.n - 2
    u = np.zeros(grid.shape + (3,), dtype=x.dtype)
    for a in range(3):
        u[1:-1, 1:-1, 1:-1, a] = x[a * m**3:(a + 1) * m**3].reshape(m, m, m)
    return u


def ttau_form(u: np.ndarray, grid: Grid, tau: float) -> float:
    """Discrete ``Q_tau(u) = ||div u||^2 + ||curl u + tau u||^2`` for Dirichlet fields."""
    x = _interior_vector(u, grid)
    return float(x @ (assemble_ttau(grid, tau) @ x)) * grid.h**3


def dirichlet_gradient_sq(u: np.ndarray, grid: Grid) -> float:
    """``||grad_h u||^2`` with forward differences, boundary values taken as zero."""
    x = _interior_vector(u, grid)
    return float(x @ (assemble_ttau(grid, 0.0) @ x)) * grid.h**3


def lowest_eig_ttau(
    grid: Grid, tau: float, tol: float = DEFAULT_TOL, seed: int = 0, method: str = "auto"
) -> SpectralResult:
    T = assemble_ttau(grid, tau)
    lam, v, it = _lowest_symmetric(T, tol, seed, method, MAX_OPERATOR_APPLICATIONS)
    lam, v, res = _finish(T, lam, v, it, tol)
    u = _full_vector(v / np.sqrt(grid.h**3), grid)
    return SpectralResult(lam, u, it, res)


# -- analytic references ------------------------------------------------------


def dirichlet_spectrum_cube(L: float, count: int) -> list[float]:
    """Lowest ``count`` Dirichlet Laplacian eigenvalues of the cube, with multiplicity."""
    if count < 1:
        raise ValueError("count must be >= 1")
    kmax = 1
    while True:
        vals = sorted(
            k * k + l * l + m * m
            for k in range(1, kmax + 1)
            for l in range(1, kmax + 1)
            for m in range(1, kmax + 1)
        )
        # every triple with a component > kmax has sum > kmax^2 + 2
        if len(vals) >= count and vals[count - 1] <= (kmax + 1) ** 2 + 2:
            return [math.pi**2 * s / L**2 for s in vals[:count]]
        kmax += 1


def spectral_distance(value: float, L: float) -> float:
    """``d(value, sigma(-Lap^D))`` on the cube."""
    count = 8
    while True:
        spec = dirichlet_spectrum_cube(L, count)
        if spec[-1] > 2 * value + spec[0]:
            return min(abs(value - s) for s in spec)
        count *= 2


def halfline_ground_state(xi: float, resolution: int = 1000, t_max: float = 10.0) -> float:
    """Lowest eigenvalue of ``-d^2/dt^2 + (t - xi)^2`` on ``(0, t_max)``, Neumann at 0.

    Cell-centred nodes with a mirror ghost at ``t = 0`` and a zero ghost at ``t_max``.
    """
    h = t_max / resolution
    t = (np.arange(resolution) + 0.5) * h
    d = 2.0 / h**2 + (t - xi) ** 2
    d[0] -= 1.0 / h**2
    e = np.full(resolution - 1, -1.0 / h**2)
    return float(eigh_tridiagonal(d, e, select="i", select_range=(0, 0), eigvals_only=True)[0])


def theta0(resolution: int = 1000, xi_tolerance: float = 1e-7, t_max: float = 10.0) -> float:
    """Bottom of the half-space Neumann spectrum with unit field.

    Minimises the half-line ground state over the Fourier parameter ``xi`` by
    golden-section search.
    """
    if resolution < 200:
        raise ValueError("resolution must be >= 200")
    res = minimize_scalar(
        lambda xi: halfline_ground_state(xi, resolution, t_max),
        bracket=(0.3, 0.75, 1.4),
        method="golden",
        tol=xi_tolerance,
    )
    return float(res.fun)


# -- mu* = inf over helical directors -------------------------------------------


@dataclass(frozen=True)
class SearchOptions:
    """Coarse (polar, azimuth, phase) grid plus a Nelder-Mead budget."""

    resolution: tuple[int, int, int] = (4, 8, 4)
    refine_steps: int = 60
    workers: int = 1

    def key(self) -> tuple:
        return (tuple(int(r) for r in self.resolution), int(self.refine_steps))


@dataclass
class MuStarResult:
    value: float
    argmin_rotation: Rotation
    trace: list = field(default_factory=list)

    def to_json(self, with_trace: bool = True) -> dict:
        out = {"value": float(self.value), "argmin_rotation": self.argmin_rotation.to_json()}
        if with_trace:
            out["trace"] = [[r.to_json(), float(v)] for r, v in self.trace]
        return out


def helical_eigenvalue(
    grid: Grid, q: float, tau: float, rotation: Rotation, tol: float = DEFAULT_TOL,
    seed: int = 0, bc: str = NEUMANN,
) -> SpectralResult:
    """``mu(q n_tau^Q)`` with ``A = n_tau^Q`` sampled on the grid."""
    A = helical_at(grid.coords, rotation, tau)
    return lowest_eig(assemble_magnetic(grid, A, q, bc), tol=tol, seed=seed)


def mu_star(
    grid: Grid,
    q: float,
    tau: float,
    search: SearchOptions = SearchOptions(),
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> MuStarResult:
    """Infimum of ``mu(q n)`` over the helical family by coarse search + simplex refinement."""
    if q < 0 or not tau > 0:
        raise ValueError("need q >= 0 and tau > 0")
    if q == 0:
        # the operator is the Neumann Laplacian for every rotation
        rot = Rotation.identity()
        lam = helical_eigenvalue(grid, q, tau, rot, tol, seed).eigenvalue
        return MuStarResult(lam, rot, [(rot, lam)])

    angles = so3_sample_angles(search.resolution)

    def evaluate(ang):
        rot = Rotation.from_axis_phase(*ang)
        try:
            return rot, helical_eigenvalue(grid, q, tau, rot, tol, seed).eigenvalue
        except ConvergenceError as exc:
            log.warning("eigensolve failed at angles %s: %s", ang, exc)
            return rot, None

    if search.workers > 1:
        with ThreadPoolExecutor(max_workers=search.workers) as pool:
            coarse = list(pool.map(evaluate, angles))
    else:
        coarse = [evaluate(a) for a in angles]
    trace = [(r, v) for r, v in coarse if v is not None]
    if not trace:
        raise ConvergenceError("every sample point failed to converge")
    ok = [(a, v) for a, (_, v) in zip(angles, coarse) if v is not None]
    best_angle = min(ok, key=lambda av: av[1])[0]

    if search.refine_steps > 0:
        n_pol, n_az, n_ph = search.resolution
        step = np.array(
            [
                0.25 * math.pi / max(n_pol - 1, 1),
                math.pi / max(n_az, 1),
                math.pi / max(n_ph, 1),
            ]
        )

        def objective(x):
            rot, v = evaluate(tuple(float(c) for c in x))
            if v is None:
                return math.inf
            trace.append((rot, v))
            return v

        x0 = np.array(best_angle)
        simplex = np.vstack([x0] + [x0 + np.diag(step)[k] for k in range(3)])
        minimize(
            objective, x0, method="Nelder-Mead",
            options={"maxfev": search.refine_steps, "initial_simplex": simplex,
                     "xatol": 1e-4, "fatol": 10 * tol},
        )
    rot, val = min(trace, key=lambda rv: rv[1])
    return MuStarResult(val, rot, trace)
