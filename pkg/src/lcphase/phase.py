"""Phase classification, parameter scans and the quantitative bound checks.

Every check returns a plain dict (or small dataclass) holding all
intermediate quantities so that reports can be dumped to JSON unchanged.
"""
from __future__ import annotations

import csv
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .director import Rotation, helical_at
from .grid import FIELD_FORMAT_VERSION, Grid, apply_grad, distance_to_boundary
from .minimize import (
    MinimizeOptions,
    Params,
    minimize_Fdir,
    minimize_G,
    tol_disc,
)
from .spectra import (
    DEFAULT_TOL,
    SearchOptions,
    _interior_vector,
    assemble_magnetic,
    assemble_ttau,
    lowest_eig,
    lowest_eig_ttau,
    mu_star,
    spectral_distance,
    theta0,
)

log = logging.getLogger(__name__)

NEMATIC = "Nematic"
SMECTIC = "Smectic"
CRITICAL = "Critical"
FAILED = "Failed"

DEFAULT_BAND = 0.02
GUARD_GAP = 0.01
NEMATIC_L2 = 1e-4
# ratios mu*/(q tau) on the reference 17^3 grid stay well above this fraction of Theta_0
RATIO_FLOOR_FRACTION = 0.25
# (deviation ratio) / (tau ratio) between consecutive small-tau points
SMALL_TAU_BAND = (0.3, 0.9)


# -- caches -----------------------------------------------------------------------


class MuStarCache:
    """Append-only store of mu* results keyed by every input that affects them.

    Writers take a lock; readers only see fully inserted entries because a
    dict assignment is atomic.
    """

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(grid: Grid, q: float, tau: float, search: SearchOptions, tol: float, seed: int):
        return (grid.n, float(grid.L), float(q), float(tau), search.key(), float(tol), int(seed))

    def get(self, grid, q, tau, search=SearchOptions(), tol=DEFAULT_TOL, seed=0):
        k = self.key(grid, q, tau, search, tol, seed)
        hit = self._data.get(k)
        if hit is not None:
            return hit
        result = mu_star(grid, q, tau, search, tol, seed)
        with self._lock:
            # another thread may have finished first; keep the committed entry
            return self._data.setdefault(k, result)

    def insert(self, grid, q, tau, result, search=SearchOptions(), tol=DEFAULT_TOL, seed=0):
        """Seed an entry computed elsewhere (e.g. loaded from a persistent cache)."""
        k = self.key(grid, q, tau, search, tol, seed)
        with self._lock:
            return self._data.setdefault(k, result)

    def __len__(self):
        return len(self._data)

    def clear(self):
        with self._lock:
            self._data.clear()


MU_STAR_CACHE = MuStarCache()


@dataclass(frozen=True)
class DomainConstants:
    """Measured stand-ins for the existential domain constants.

    ``sobolev``: largest sampled ``||f||_L4 / ||f||_H1``.
    ``h1_control``: largest sampled ``||u||_H1^2 / ((1 + tau^2/mu1_tau) Q_tau(u))``
    over Dirichlet vector fields.
    ``nematic = sobolev * sqrt(2 * h1_control)`` is the factor in front of the
    nematicity threshold, and ``l4 = sqrt(2 |Omega|^(1/2) nematic)`` the factor
    in front of the L4 bound at the transition.
    """

    sobolev: float
    h1_control: float
    nematic: float
    l4: float
    samples: int
    seed: int
    taus: tuple
    protocol: str

    def to_json(self) -> dict:
        return {
            "sobolev": self.sobolev,
            "h1_control": self.h1_control,
            "nematic": self.nematic,
            "l4": self.l4,
            "samples": self.samples,
            "seed": self.seed,
            "taus": list(self.taus),
            "protocol": self.protocol,
        }


_CONSTANTS: dict = {}
_CONSTANTS_LOCK = threading.Lock()


def _scalar_samples(grid: Grid, rng, count: int):
    x = grid.coords
    L = grid.L
    yield np.ones(grid.shape)
    for k in range(count):
        kind = k % 3
        if kind == 0:
            modes = rng.integers(0, 3, size=3)
            f = np.prod(np.cos(np.pi * modes * (x + 0.5 * L) / L), axis=-1)
            yield f + rng.uniform(-1, 1)
        elif kind == 1:
            c = rng.uniform(-0.5 * L, 0.5 * L, size=3)
            s = rng.uniform(0.1, 0.6) * L
            yield np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * s * s))
        else:
            yield 1.0 + 0.3 * rng.standard_normal(grid.shape)


def _vector_samples(grid: Grid, rng, count: int):
    """Fields vanishing on boundary nodes: sine modes, bubbles and noise."""
    x = grid.coords + 0.5 * grid.L
    L = grid.L
    bubble = np.prod(np.sin(np.pi * x / L), axis=-1)
    for k in range(count):
        kind = k % 3
        if kind == 0:
            u = np.zeros(grid.shape + (3,))
            for c in range(3):
                modes = rng.integers(1, 4, size=3)
                u[..., c] = rng.standard_normal() * np.prod(np.sin(np.pi * modes * x / L), axis=-1)
        elif kind == 1:
            c0 = rng.uniform(0.2 * L, 0.8 * L, size=3)
            s = rng.uniform(0.08, 0.4) * L
            g = np.exp(-np.sum((x - c0) ** 2, axis=-1) / (2 * s * s)) * bubble
            u = g[..., None] * rng.standard_normal(3)
        else:
            u = rng.standard_normal(grid.shape + (3,))
        u[grid.boundary_mask] = 0.0
        yield u


def _h1_sq(f, grid: Grid) -> float:
    w = grid.weights
    grad = apply_grad(f, grid)
    return float(np.sum(w * f**2) + np.sum(w[..., None] * grad**2))


def measure_domain_constants(
    grid: Grid, samples: int = 50, seed: int = 0, taus=(0.5, 1.0, 2.0)
) -> DomainConstants:
    """Sample the embedding and control ratios on ``grid`` (cached per grid and protocol)."""
    key = (grid.n, float(grid.L), int(samples), int(seed), tuple(float(t) for t in taus))
    with _CONSTANTS_LOCK:
        if key in _CONSTANTS:
            return _CONSTANTS[key]
    rng = np.random.default_rng(seed)
    w = grid.weights
    sob = 0.0
    for f in _scalar_samples(grid, rng, samples):
        l4 = float(np.sum(w * f**4)) ** 0.25
        sob = max(sob, l4 / math.sqrt(_h1_sq(f, grid)))
    h3 = grid.h**3
    ctrl = 0.0
    for tau in taus:
        res = lowest_eig_ttau(grid, tau)
        mu1 = res.eigenvalue
        T = assemble_ttau(grid, tau)
        T0 = assemble_ttau(grid, 0.0)
        fields = [res.eigenvector] + list(_vector_samples(grid, rng, samples))
        for u in fields:
            xv = _interior_vector(u, grid)
            q_form = float(xv @ (T @ xv)) * h3
            h1 = float(xv @ xv) * h3 + float(xv @ (T0 @ xv)) * h3
            ctrl = max(ctrl, h1 / ((1.0 + tau**2 / mu1) * q_form))
    nem = sob * math.sqrt(2.0 * ctrl)
    out = DomainConstants(
        sobolev=sob,
        h1_control=ctrl,
        nematic=nem,
        l4=math.sqrt(2.0 * math.sqrt(grid.volume) * nem),
        samples=samples,
        seed=seed,
        taus=tuple(float(t) for t in taus),
        protocol=(
            "max over constant, cosine-mode, gaussian and noisy scalar fields of L4/H1; "
            "max over T_tau ground states and sine-mode, bubble and noise Dirichlet "
            "fields of H1^2/((1+tau^2/mu1) Q_tau)"
        ),
    )
    with _CONSTANTS_LOCK:
        return _CONSTANTS.setdefault(key, out)


def ttau_controls(grid: Grid, tau: float, samples: int = 50, seed: int = 0,
                  tol: float = DEFAULT_TOL) -> dict:
    """Worst margins of the L2 and gradient controls by ``Q_tau`` over random Dirichlet fields.

    ``||u||^2 <= Q_tau(u) / mu1`` and ``||grad u||^2 / 2 <= (1 + tau^2 / mu1) Q_tau(u)``;
    a margin is ``rhs + slack - lhs`` and must stay non-negative.
    """
    rng = np.random.default_rng(seed)
    mu1 = mu1_tau(grid, tau, tol)
    T = assemble_ttau(grid, tau)
    T0 = assemble_ttau(grid, 0.0)
    h3 = grid.h**3
    l2_margin = grad_margin = math.inf
    for u in _vector_samples(grid, rng, samples):
        x = _interior_vector(u, grid)
        q_form = float(x @ (T @ x)) * h3
        l2 = float(x @ x) * h3
        grad = float(x @ (T0 @ x)) * h3
        l2_margin = min(l2_margin, q_form / mu1 + tol * max(l2, 1.0) - l2)
        rhs = (1.0 + tau**2 / mu1) * q_form
        grad_margin = min(grad_margin, rhs + tol_disc(grid, rhs) - 0.5 * grad)
    return {"tau": tau, "mu1": mu1, "samples": samples, "l2_margin": l2_margin,
            "grad_margin": grad_margin, "pass": l2_margin >= 0 and grad_margin >= 0}


def field_lipschitz_pairs(grid: Grid, q: float, count: int = 20, seed: int = 0,
                          step: float = 0.05, tol: float = DEFAULT_TOL) -> list[dict]:
    """``|sqrt mu(A0) - sqrt mu(A1)| <= ||A0 - A1||_inf`` for nearby helical potentials ``A = q n``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        rot = Rotation.normalized(*rng.standard_normal(4))
        tau = float(rng.uniform(0.5, 2.0))
        axis = rng.standard_normal(3)
        rot2 = rot @ Rotation.from_axis_angle(axis, step * float(rng.uniform()))
        tau2 = tau + step * float(rng.uniform(-1.0, 1.0))
        A0 = q * helical_at(grid.coords, rot, tau)
        A1 = q * helical_at(grid.coords, rot2, tau2)
        m0 = lowest_eig(assemble_magnetic(grid, A0, 1.0), tol=tol, seed=seed).eigenvalue
        m1 = lowest_eig(assemble_magnetic(grid, A1, 1.0), tol=tol, seed=seed).eigenvalue
        lhs = abs(math.sqrt(max(m0, 0.0)) - math.sqrt(max(m1, 0.0)))
        rhs = float(np.max(np.linalg.norm(A0 - A1, axis=-1)))
        slack = tol_disc(grid, max(math.sqrt(max(m0, 0.0)), math.sqrt(max(m1, 0.0)), 1.0))
        out.append({"tau": tau, "tau2": tau2, "mu0": m0, "mu1": m1, "lhs": lhs, "rhs": rhs,
                    "tol_disc": slack, "pass": lhs <= rhs + slack})
    return out


# -- classification -----------------------------------------------------------------


@dataclass
class PhasePoint:
    q: float
    tau: float
    kappa: float
    mu_star: float
    g_value: float | None
    classification: str
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "tau": self.tau,
            "kappa": self.kappa,
            "mu_star": self.mu_star,
            "g_value": self.g_value,
            "classification": self.classification,
            "diagnostics": dict(self.diagnostics),
        }


@dataclass(frozen=True)
class PhaseOptions:
    search: SearchOptions = SearchOptions()
    band: float = DEFAULT_BAND
    compute_g: bool = False
    minimize: MinimizeOptions = MinimizeOptions()
    tol: float = DEFAULT_TOL
    seed: int = 0
    workers: int = 1
    # outer minimisation of G visits this many of the best distinct rotations of the mu* trace
    g_rotations: int = 3


def classify_value(kappa: float, mu: float, band: float = DEFAULT_BAND) -> str:
    k2 = kappa**2
    width = band * mu
    if k2 > mu + width:
        return SMECTIC
    if k2 < mu - width:
        return NEMATIC
    return CRITICAL


def _mu(grid, q, tau, opts: PhaseOptions):
    return MU_STAR_CACHE.get(grid, q, tau, opts.search, opts.tol, opts.seed)


def classify(q: float, tau: float, kappa: float, grid: Grid, opts: PhaseOptions = PhaseOptions()) -> PhasePoint:
    if not tau > 0:
        raise ValueError("tau must be positive")
    ms = _mu(grid, q, tau, opts)
    cls = classify_value(kappa, ms.value, opts.band)
    point = PhasePoint(q, tau, kappa, ms.value, None, cls)
    point.diagnostics["kappa_sq_over_mu"] = kappa**2 / ms.value if ms.value > 0 else math.inf
    if opts.compute_g:
        rep = minimize_G(Params(q, tau, kappa), ms.argmin_rotation, grid, opts.minimize)
        point.g_value = rep.g_value
        point.diagnostics["g_seed"] = rep.seed
        point.diagnostics["g_converged"] = float(rep.converged)
        if cls == NEMATIC:
            point.diagnostics["equivalence_ok"] = float(abs(rep.g_value) <= 1e-8)
        elif cls == SMECTIC:
            point.diagnostics["equivalence_ok"] = float(rep.g_value < 0)
    return point


def scan(q_values, tau_values, kappa_values, grid: Grid, opts: PhaseOptions = PhaseOptions(),
         kappa_relative: bool = False) -> list[PhasePoint]:
    """Cartesian product in (q, tau, kappa) order.

    With ``kappa_relative`` the kappa values are read as ratios ``kappa^2 / mu*``.
    Failures are recorded in the row and the scan continues.
    """
    q_values, tau_values, kappa_values = list(q_values), list(tau_values), list(kappa_values)
    if not (q_values and tau_values and kappa_values):
        raise ValueError("scan ranges must be non-empty")
    cells = [(q, t, k) for q in q_values for t in tau_values for k in kappa_values]

    def one(cell):
        q, t, k = cell
        try:
            kappa = math.sqrt(k * _mu(grid, q, t, opts).value) if kappa_relative else k
            return classify(q, t, kappa, grid, opts)
        except Exception as exc:  # per-point failure is data, not a crash
            log.warning("scan point %s failed: %s", cell, exc)
            return PhasePoint(q, t, k, math.nan, None, FAILED, {"error": str(exc)})

    if opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            return list(pool.map(one, cells))
    return [one(c) for c in cells]


def write_scan_csv(path, points: list[PhasePoint]) -> None:
    keys = sorted({k for p in points for k in p.diagnostics})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "tau", "kappa", "mu_star", "g_value", "classification"] + keys + ["format_version"])
        for p in points:
            w.writerow(
                [repr(p.q), repr(p.tau), repr(p.kappa), repr(p.mu_star),
                 "" if p.g_value is None else repr(p.g_value), p.classification]
                + [f"{k}={p.diagnostics[k]!r}" if k in p.diagnostics else "" for k in keys]
                + [FIELD_FORMAT_VERSION]
            )


_COLORS = {NEMATIC: "#3b6fb6", SMECTIC: "#c0392b", CRITICAL: "#e6a117", FAILED: "#777777"}


def write_scan_svg(path, points: list[PhasePoint], width: int = 480, height: int = 360) -> None:
    """Scatter of kappa^2/(q tau) against q tau coloured by classification, with the mu*/(q tau) curve."""
    pts = [p for p in points if math.isfinite(p.mu_star) and p.q * p.tau > 0]
    pad = 50
    xs = [p.q * p.tau for p in pts] or [0.0, 1.0]
    ys = [p.kappa**2 / (p.q * p.tau) for p in pts] + [p.mu_star / (p.q * p.tau) for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(ys) if ys else 1.0
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-format-version="{FIELD_FORMAT_VERSION}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">q tau</text>',
        f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})">kappa^2 / (q tau)</text>',
    ]
    curve = sorted({(p.q * p.tau, p.mu_star / (p.q * p.tau)) for p in pts})
    if len(curve) > 1:
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{sx(a):.2f},{sy(b):.2f}" for i, (a, b) in enumerate(curve))
        out.append(f'<path d="{path_d}" fill="none" stroke="#444" stroke-dasharray="4 3"/>')
    for p in pts:
        out.append(
            f'<circle cx="{sx(p.q * p.tau):.2f}" cy="{sy(p.kappa**2 / (p.q * p.tau)):.2f}" r="4" '
            f'fill="{_COLORS.get(p.classification, "#000")}"><title>{p.classification}</title></circle>'
        )
    for i, (name, colour) in enumerate(_COLORS.items()):
        out.append(f'<rect x="{width - pad - 80}" y="{pad + 16 * i}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{width - pad - 65}" y="{pad + 9 + 16 * i}" font-size="11">{name}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# -- g and the bound constants ------------------------------------------------------


def ground_energy(params: Params, grid: Grid, opts: PhaseOptions = PhaseOptions()):
    """``g`` as the best ``minimize_G`` over the lowest distinct rotations of the mu* trace.

    Returns ``(g, rotation, report, mu_star_result)``.
    """
    ms = _mu(grid, params.q, params.tau, opts)
    ranked = sorted(ms.trace, key=lambda rv: rv[1])
    chosen: list[Rotation] = []
    for rot, _ in ranked:
        if all(not np.allclose(rot.matrix(), c.matrix(), atol=1e-6) for c in chosen):
            chosen.append(rot)
        if len(chosen) >= max(1, opts.g_rotations):
            break
    best = None
    for rot in chosen:
        rep = minimize_G(params, rot, grid, opts.minimize)
        if best is None or rep.g_value < best[2].g_value:
            best = (rep.g_value, rot, rep)
    return best[0], best[1], best[2], ms


@dataclass(frozen=True)
class BoundConstants:
    c1: float
    c2: float
    c3: float
    c4: float
    mu1_tau: float
    g_tilde: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def bound_constants(q, tau, kappa, K, g, mu1_tau, volume) -> BoundConstants:
    """The explicit constants, written exactly as stated (``K`` sits inside ``c1`` and ``c2``)."""
    g_tilde = max(g + 0.5 * kappa**2 * volume, 0.0)
    ratio = 2.0 * g_tilde / (K * mu1_tau)
    c1 = q * kappa * math.sqrt(ratio)
    c2 = 2.0 * volume * q**2 * g_tilde / (K * mu1_tau)
    twist = 1.0 + tau**2 / mu1_tau
    c3 = q * math.sqrt(1.0 + kappa) * math.sqrt(g_tilde) * math.sqrt(twist)
    if g_tilde == 0.0:
        c4 = 0.0
    elif kappa == 0.0:
        c4 = math.inf
    else:
        c4 = math.sqrt(q) * g_tilde**0.25 / math.sqrt(kappa) * twist**0.25
    return BoundConstants(c1, c2, c3, c4, mu1_tau, g_tilde)


def guard_gap(tau: float, grid: Grid, gap: float = GUARD_GAP) -> float:
    """Relative distance of ``tau^2`` to the cube Dirichlet spectrum; raises inside the gap."""
    d = spectral_distance(tau**2, grid.L) / max(tau**2, 1e-300)
    if d < gap:
        raise ValueError(
            f"tau^2 = {tau**2:.6g} lies within {gap:.0%} of a Dirichlet eigenvalue of the cube"
        )
    return d


_MU1: dict = {}


def mu1_tau(grid: Grid, tau: float, tol: float = DEFAULT_TOL) -> float:
    key = (grid.n, float(grid.L), float(tau), float(tol))
    if key not in _MU1:
        _MU1[key] = lowest_eig_ttau(grid, tau, tol).eigenvalue
    return _MU1[key]


# -- bound checks -------------------------------------------------------------------


def lipschitz_check(q: float, tau_pairs, grid: Grid, opts: PhaseOptions = PhaseOptions()) -> list[dict]:
    """``|sqrt mu*(q,tau) - sqrt mu*(q,tau')| <= C q |tau - tau'|`` with ``C = sup |x|``."""
    radius = math.sqrt(3.0) / 2.0 * grid.L
    out = []
    for tau, tau2 in tau_pairs:
        if not (tau > 0 and tau2 > 0):
            raise ValueError("tau values must be positive")
        m1 = _mu(grid, q, tau, opts).value
        m2 = _mu(grid, q, tau2, opts).value
        lhs = abs(math.sqrt(max(m1, 0.0)) - math.sqrt(max(m2, 0.0)))
        rhs = radius * q * abs(tau - tau2)
        slack = tol_disc(grid, max(m1, m2, 1.0))
        out.append({
            "tau": tau, "tau2": tau2, "mu_star": m1, "mu_star2": m2,
            "lhs": lhs, "rhs": rhs, "C": radius, "tol_disc": slack, "pass": lhs <= rhs + slack,
        })
    return out


def sandwich_check(params: Params, grid: Grid, opts: PhaseOptions = PhaseOptions()) -> dict:
    """``g - c1/sqrt(K) - c2/K <= E_Dir <= g`` with discretisation slack on both sides."""
    gap = guard_gap(params.tau, grid)
    g, rot, rep_g, ms = ground_energy(params, grid, opts)
    rep = minimize_Fdir(params, rot, grid, opts.minimize, initial=rep_g.phase)
    e_dir = rep.g_value
    mu1 = mu1_tau(grid, params.tau, opts.tol)
    K = params.K
    c = bound_constants(params.q, params.tau, params.kappa, K, g, mu1, grid.volume)
    lower = g - c.c1 / math.sqrt(K) - c.c2 / K
    # the bound as it comes out of the estimate before collecting constants
    delta = math.sqrt(2.0 * c.g_tilde / (K * mu1))
    lower_estimate = (
        g - 2.0 * params.q * params.kappa * math.sqrt(grid.volume) * delta - params.q**2 * delta**2
    )
    slack = tol_disc(grid, c.g_tilde)
    return {
        "params": params.to_json(),
        "mu_star": ms.value,
        "rotation": rot.to_json(),
        "g": g,
        "g_seed": rep_g.seed,
        "e_dir": e_dir,
        "e_dir_seed": rep.seed,
        "e_dir_converged": rep.converged,
        "gap": g - e_dir,
        "lower": lower,
        "lower_estimate": lower_estimate,
        "tol_disc": slack,
        "guard_gap": gap,
        "constants": c.to_json(),
        "pass": (lower - slack <= e_dir <= g + slack),
        "runs": [r.to_json() for r in rep.runs],
    }


def nematicity_threshold(q: float, tau: float, kappa: float, grid: Grid,
                         opts: PhaseOptions = PhaseOptions(), verify: bool = True) -> dict:
    """``K_min = C c3 / (sqrt(mu*) - kappa)`` and a nematicity run at ``K = K_min``."""
    gap = guard_gap(tau, grid)
    ms = _mu(grid, q, tau, opts)
    if not kappa**2 < ms.value:
        raise ValueError(f"need kappa^2 < mu* = {ms.value:.6g}, got {kappa**2:.6g}")
    consts = measure_domain_constants(grid)
    mu1 = mu1_tau(grid, tau, opts.tol)
    if kappa > 0:
        g, rot, _, _ = ground_energy(Params(q, tau, kappa), grid, opts)
    else:
        g, rot = 0.0, ms.argmin_rotation
    c = bound_constants(q, tau, kappa, 1.0, g, mu1, grid.volume)
    K_min = consts.nematic * c.c3 / (math.sqrt(ms.value) - kappa)
    out = {
        "q": q, "tau": tau, "kappa": kappa, "mu_star": ms.value, "g": g,
        "constants": c.to_json(), "domain_constants": consts.to_json(),
        "K_min": K_min, "K_min_squared_form": K_min**2, "guard_gap": gap,
        "rotation": rot.to_json(),
    }
    if verify:
        K = max(K_min, 1e-12)
        rep = minimize_Fdir(Params(q, tau, kappa, K, K), rot, grid, opts.minimize)
        out["runs"] = [r.to_json() for r in rep.runs]
        out["max_psi_l2"] = max(r.psi_l2 for r in rep.runs)
        out["verified"] = all(r.psi_l2 <= NEMATIC_L2 for r in rep.runs)
    return out


def c4_bound(params: Params, grid: Grid, opts: PhaseOptions = PhaseOptions()) -> dict:
    """``||psi||_L4 <= C c4 / K^(1/4)`` at the transition ``kappa^2 = mu*``."""
    guard_gap(params.tau, grid)
    ms = _mu(grid, params.q, params.tau, opts)
    if classify_value(params.kappa, ms.value, opts.band) != CRITICAL:
        raise ValueError(
            f"kappa^2 = {params.kappa**2:.6g} is outside the critical band around mu* = {ms.value:.6g}"
        )
    consts = measure_domain_constants(grid)
    mu1 = mu1_tau(grid, params.tau, opts.tol)
    g, rot, _, _ = ground_energy(params, grid, opts)
    c = bound_constants(params.q, params.tau, params.kappa, params.K, g, mu1, grid.volume)
    rep = minimize_Fdir(params, rot, grid, opts.minimize)
    lhs = float(np.sum(grid.weights * np.abs(rep.phase.psi) ** 4)) ** 0.25
    rhs = consts.l4 * c.c4 / params.K**0.25
    return {
        "params": params.to_json(), "mu_star": ms.value, "g": g,
        "constants": c.to_json(), "domain_constants": consts.to_json(),
        "lhs": lhs, "rhs": rhs, "pass": lhs <= rhs, "seed": rep.seed,
        "converged": rep.converged,
    }


@dataclass
class AgmonFit:
    decay_rate: float
    boundary_mass_fraction: float
    fit_residual: float
    empty: bool = False
    profile: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "decay_rate": self.decay_rate,
            "boundary_mass_fraction": self.boundary_mass_fraction,
            "fit_residual": self.fit_residual,
            "empty": self.empty,
            "profile": self.profile,
        }


def agmon_fit(psi: np.ndarray, q: float, tau: float, grid: Grid, empty_tol: float = 1e-8) -> AgmonFit:
    """Bin ``|psi|^2`` by distance to the boundary and fit ``log density ~ a - alpha sqrt(q tau) t``."""
    w = grid.weights
    mass = w * np.abs(psi) ** 2
    total = float(np.sum(mass))
    if total <= empty_tol**2 * grid.volume:
        return AgmonFit(math.nan, math.nan, math.nan, empty=True)
    t = distance_to_boundary(grid)
    layer = np.rint(t / grid.h).astype(int)
    rows = []
    for k in range(int(layer.max()) + 1):
        sel = layer == k
        m = float(np.sum(mass[sel]))
        v = float(np.sum(w[sel]))
        rows.append((k * grid.h, m, m / v))
    scale = math.sqrt(q * tau)
    peak = max(r[2] for r in rows)
    pts = [(r[0] * scale, math.log(r[2])) for r in rows if r[2] > 1e-14 * peak]
    if len(pts) >= 2:
        X = np.array([[1.0, s] for s, _ in pts])
        y = np.array([v for _, v in pts])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
        alpha = -float(coef[1])
    else:
        alpha, resid = math.nan, math.nan
    near = sum(m for tt, m, _ in rows if tt <= 2.0 / scale + 1e-12)
    return AgmonFit(
        decay_rate=alpha,
        boundary_mass_fraction=min(max(near / total, 0.0), 1.0),
        fit_residual=resid,
        profile=[[tt, m, d] for tt, m, d in rows],
    )


def agmon_profile(params: Params, rotation: Rotation, grid: Grid,
                  opts: MinimizeOptions = MinimizeOptions()) -> AgmonFit:
    rep = minimize_G(params, rotation, grid, opts)
    return agmon_fit(rep.phase.psi, params.q, params.tau, grid)


def mustar_ratio_trend(q_tau_products, grid: Grid, opts: PhaseOptions = PhaseOptions(),
                       tau_law=lambda product: 1.0) -> dict:
    """``mu*/(q tau)`` along increasing ``q tau``; ``tau_law`` maps the product to ``tau``."""
    prods = [float(p) for p in q_tau_products]
    if any(b <= a for a, b in zip(prods, prods[1:])):
        raise ValueError("q*tau products must be strictly increasing")
    th = theta0()
    rows = []
    for p in prods:
        tau = tau_law(p)
        q = p / tau
        m = _mu(grid, q, tau, opts).value
        rows.append({"q_tau": p, "q": q, "tau": tau, "mu_star": m, "ratio": m / p})
    ratios = [r["ratio"] for r in rows]
    floor = RATIO_FLOOR_FRACTION * th
    out = {"theta0": th, "rows": rows, "floor": floor, "above_floor": all(r >= floor for r in ratios)}
    if len(rows) >= 2:
        out["decreasing"] = all(b < a for a, b in zip(ratios, ratios[1:]))
    return out


def small_tau_asymptotics(q: float, kappa: float, tau_list, K: float, grid: Grid,
                          opts: PhaseOptions = PhaseOptions()) -> dict:
    """``|E_Dir + kappa^2 |Omega| / 2|`` along a decreasing list of ``tau``."""
    taus = [float(t) for t in tau_list]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau values must be strictly decreasing")
    rows = []
    for tau in taus:
        params = Params(q, tau, kappa, K, K)
        ms = _mu(grid, q, tau, opts)
        rep = minimize_Fdir(params, ms.argmin_rotation, grid, opts.minimize)
        dev = abs(rep.g_value + 0.5 * kappa**2 * grid.volume)
        rows.append({"tau": tau, "e_dir": rep.g_value, "deviation": dev,
                     "deviation_over_tau": dev / tau, "seed": rep.seed})
    out = {"q": q, "kappa": kappa, "K": K, "rows": rows}
    if len(rows) >= 2:
        ratios = []
        for a, b in zip(rows, rows[1:]):
            ratios.append((b["deviation"] / a["deviation"]) / (b["tau"] / a["tau"]))
        out["normalized_ratios"] = ratios
        out["band"] = list(SMALL_TAU_BAND)
        out["trend_ok"] = all(SMALL_TAU_BAND[0] <= r <= SMALL_TAU_BAND[1] for r in ratios)
        # a linear bound allows any faster decay; what it forbids is growth of dev / tau
        out["linear_bound_ok"] = all(
            b["deviation_over_tau"] <= a["deviation_over_tau"] * (1.0 + 1e-9) for a, b in zip(rows, rows[1:])
        )
    return out


def with_minimize(opts: PhaseOptions, **changes) -> PhaseOptions:
    return replace(opts, minimize=replace(opts.minimize, **changes))
