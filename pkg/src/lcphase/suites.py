"""Named verification suites behind ``lcphase verify``.

Each suite returns a list of rows ``{"suite", "check", "passed", "value",
"threshold"}``. Rows carry no timings so a rerun with the same configuration
serializes to the same bytes.
"""
from __future__ import annotations

import math

import numpy as np

from .director import HelicalSpec, Rotation, helical_at, helical_field, radial_field, verify_ctau
from .grid import Grid
from .minimize import (
    MinimizeOptions,
    Params,
    Phase,
    check_identity_g,
    check_kinetic_bound,
    Functional,
    check_sup_bound,
    gradients,
    minimize_G,
    renormalize,
)
from .phase import (
    MU_STAR_CACHE,
    PhaseOptions,
    agmon_profile,
    field_lipschitz_pairs,
    lipschitz_check,
    mu1_tau,
    nematicity_threshold,
    sandwich_check,
    ttau_controls,
)
from .spectra import (
    DIRICHLET,
    NEUMANN,
    MagneticOperator,
    assemble_magnetic,
    dirichlet_spectrum_cube,
    gauge_links,
    helical_eigenvalue,
    link_phases,
    lowest_eig,
    spectral_distance,
    theta0,
)

# curl/div residuals of sampled helical fields stay below C_REG * h^2
# (centred differences give tau^3 h^2 / 6 inside, one-sided ones tau^3 h^2 / 3 on the faces;
# measured worst case 2.27 at tau = 2 on 33^3)
C_REG = 3.0
RADIAL_CENTRES = ((0.0, 0.0, 2.0), (3.0, 0.0, 0.0), (1.0, 1.0, 1.0))
SUITES = ("appendix-a", "spectral", "energy", "theorems", "agmon")


def _row(suite, check, passed, value, threshold):
    return {
        "suite": suite,
        "check": check,
        "passed": bool(passed),
        "value": float(value),
        "threshold": float(threshold),
    }


def random_rotations(count: int, seed: int) -> list[Rotation]:
    rng = np.random.default_rng(seed)
    return [Rotation.normalized(*rng.standard_normal(4)) for _ in range(count)]


def appendix_a(grid: Grid, seed: int = 0) -> list[dict]:
    rows = []
    h2 = grid.h**2
    worst = {"curl": 0.0, "div": 0.0, "norm": 0.0}
    for rot in random_rotations(10, seed):
        for tau in (0.5, 1.0, 2.0):
            rep = verify_ctau(helical_field(HelicalSpec(rot, tau), grid), tau, grid)
            worst["curl"] = max(worst["curl"], rep.curl_residual)
            worst["div"] = max(worst["div"], rep.div_residual)
            worst["norm"] = max(worst["norm"], rep.norm_residual)
    rows.append(_row("appendix-a", "helical curl residual", worst["curl"] <= C_REG * h2, worst["curl"], C_REG * h2))
    rows.append(_row("appendix-a", "helical div residual", worst["div"] <= C_REG * h2, worst["div"], C_REG * h2))
    rows.append(_row("appendix-a", "helical norm residual", worst["norm"] <= 1e-12, worst["norm"], 1e-12))
    for a in RADIAL_CENTRES:
        rep = verify_ctau(radial_field(a, grid), 0.0, grid)
        rows.append(_row("appendix-a", f"radial {a} curl residual", rep.curl_residual <= C_REG * h2,
                         rep.curl_residual, C_REG * h2))
        rows.append(_row("appendix-a", f"radial {a} norm residual", rep.norm_residual <= 1e-12,
                         rep.norm_residual, 1e-12))
    return rows


def spectral(grid: Grid, seed: int = 0, tol: float = 1e-8) -> list[dict]:
    rows = []
    zero = np.zeros(grid.shape + (3,))
    mu0 = lowest_eig(assemble_magnetic(grid, zero, 0.0, NEUMANN), tol=tol, seed=seed).eigenvalue
    rows.append(_row("spectral", "neumann A=0 eigenvalue", abs(mu0) <= 1e-8, mu0, 1e-8))
    lam = lowest_eig(assemble_magnetic(grid, zero, 0.0, DIRICHLET), tol=tol, seed=seed).eigenvalue
    exact = dirichlet_spectrum_cube(grid.L, 1)[0]
    rel = abs(lam - exact) / exact
    rows.append(_row("spectral", "dirichlet A=0 vs 3 pi^2/L^2", rel <= 0.015, rel, 0.015))
    # gauge: multiply every helical link by an exact discrete gauge factor
    rng = np.random.default_rng(seed)
    A = helical_at(grid.coords, Rotation.identity(), 1.0)
    links = link_phases(grid, A, 5.0)
    phi = np.sin(2.0 * grid.coords[..., 0] + rng.uniform()) * np.cos(3.0 * grid.coords[..., 1]) + grid.coords[..., 2] ** 2
    gl = gauge_links(grid, phi)
    base = lowest_eig(MagneticOperator(grid, links), tol=tol, seed=seed).eigenvalue
    moved = lowest_eig(MagneticOperator(grid, tuple(u * v for u, v in zip(links, gl))), tol=tol, seed=seed).eigenvalue
    rows.append(_row("spectral", "gauge invariance", abs(base - moved) <= 1e-10, abs(base - moved), 1e-10))
    th = theta0()
    rows.append(_row("spectral", "theta0 in [0.589, 0.592]", 0.589 <= th <= 0.592, th, 0.592))
    for tau in (0.5, 1.0, 2.0):
        m1 = mu1_tau(grid, tau, tol)
        d = spectral_distance(tau**2, grid.L)
        bound = -tau + math.sqrt(tau**2 + d)
        rows.append(_row("spectral", f"T_tau lower bound tau={tau}", m1 >= 0.98 * bound, m1, 0.98 * bound))
    for tau in (0.5, 1.0, 2.0):
        ctl = ttau_controls(grid, tau, 50, seed, tol)
        rows.append(_row("spectral", f"T_tau L2 control tau={tau}", ctl["l2_margin"] >= 0, ctl["l2_margin"], 0.0))
        rows.append(_row("spectral", f"T_tau gradient control tau={tau}", ctl["grad_margin"] >= 0,
                         ctl["grad_margin"], 0.0))
    pairs = field_lipschitz_pairs(grid, 5.0, 20, seed, tol=tol)
    worst = max(p["lhs"] - p["rhs"] - p["tol_disc"] for p in pairs)
    rows.append(_row("spectral", "sqrt mu Lipschitz in the potential", worst <= 0, worst, 0.0))
    far = abs(mu1_tau(grid, 0.1, tol) - exact)
    near = abs(mu1_tau(grid, 0.05, tol) - exact)
    rows.append(_row("spectral", "T_tau approach as tau -> 0", near < far, near, far))
    return rows


def energy_suite(grid: Grid, seed: int = 0) -> list[dict]:
    rows = []
    rng = np.random.default_rng(seed)
    p = Params(5.0, 1.0, 1.2, 1.5, 1.5)
    n0 = renormalize(helical_at(grid.coords, Rotation.identity(), 1.0) + 0.2 * rng.standard_normal(grid.shape + (3,)))
    psi0 = 0.5 * (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    ph = Phase(psi0, n0)
    gp, gn = gradients(ph, p, grid)
    eps = 1e-6
    worst = 0.0
    for _ in range(20):
        dpsi = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        dn = rng.standard_normal(grid.shape + (3,))
        dn -= np.sum(dn * n0, axis=-1, keepdims=True) * n0
        for block in ("psi", "n"):
            if block == "psi":
                plus = Phase(psi0 + eps * dpsi, n0)
                minus = Phase(psi0 - eps * dpsi, n0)
                exact = float(np.real(np.vdot(gp, dpsi)))
                fd = (_raw_energy(plus, p, grid) - _raw_energy(minus, p, grid)) / (2 * eps)
            else:
                plus = Phase(psi0, n0 + eps * dn)
                minus = Phase(psi0, n0 - eps * dn)
                exact = float(np.sum(gn * dn))
                fd = (_raw_energy(plus, p, grid) - _raw_energy(minus, p, grid)) / (2 * eps)
            worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
    rows.append(_row("energy", "gradient vs central differences", worst <= 1e-6, worst, 1e-6))
    mu = helical_eigenvalue(grid, 5.0, 1.0, Rotation.identity()).eigenvalue
    opts = MinimizeOptions()
    below = minimize_G(Params(5.0, 1.0, math.sqrt(0.8 * mu)), Rotation.identity(), grid, opts)
    rows.append(_row("energy", "below transition: max psi L2 over seeds",
                     max(r.psi_l2 for r in below.runs) <= 1e-5, max(r.psi_l2 for r in below.runs), 1e-5))
    rows.append(_row("energy", "below transition: |g|", abs(below.g_value) <= 1e-8, abs(below.g_value), 1e-8))
    above = minimize_G(Params(5.0, 1.0, math.sqrt(1.25 * mu)), Rotation.identity(), grid, opts)
    ident = check_identity_g(above, above.params, grid)
    rows.append(_row("energy", "above transition: g < 0", above.g_value < 0, above.g_value, 0.0))
    rows.append(_row("energy", "energy identity gap", ident["relative_gap"] <= 1e-5, ident["relative_gap"], 1e-5))
    sup = check_sup_bound(above)
    rows.append(_row("energy", "sup bound", sup <= 1 + 1e-6, sup, 1 + 1e-6))
    kin = check_kinetic_bound(above, above.params, grid)
    rows.append(_row("energy", "kinetic bound margin", kin["passed"], kin["margin"], 0.0))
    monotone = all(r.monotone for r in below.runs + above.runs)
    rows.append(_row("energy", "monotone accepted steps", monotone, float(monotone), 1.0))
    return rows


def _raw_energy(phase, params, grid):
    return Functional(grid, params).value(phase.psi, phase.n)


def theorems(grid: Grid, opts: PhaseOptions = PhaseOptions()) -> list[dict]:
    rows = []
    q, tau = 5.0, 1.0
    for item in lipschitz_check(q, [(1.0, 1.2)], grid, opts):
        rows.append(_row("theorems", "lipschitz tau 1.0 vs 1.2", item["pass"], item["lhs"], item["rhs"] + item["tol_disc"]))
    ms = MU_STAR_CACHE.get(grid, q, tau, opts.search, opts.tol, opts.seed).value
    sw = sandwich_check(Params(q, tau, math.sqrt(1.25 * ms), 10.0, 10.0), grid, opts)
    low, high = sw["lower"] - sw["tol_disc"], sw["g"] + sw["tol_disc"]
    rows.append(_row("theorems", "sandwich lower side K=10", sw["e_dir"] >= low, sw["e_dir"], low))
    rows.append(_row("theorems", "sandwich upper side K=10", sw["e_dir"] <= high, sw["e_dir"], high))
    nem = nematicity_threshold(q, tau, math.sqrt(0.5 * ms), grid, opts)
    rows.append(_row("theorems", "nematic at K_min", nem["verified"], nem["max_psi_l2"], 1e-4))
    return rows


def agmon(grid: Grid, opts: PhaseOptions = PhaseOptions()) -> list[dict]:
    q, tau = 64.0, 1.0
    ms = MU_STAR_CACHE.get(grid, q, tau, opts.search, opts.tol, opts.seed)
    fit = agmon_profile(Params(q, tau, math.sqrt(1.1 * ms.value)), ms.argmin_rotation, grid, opts.minimize)
    return [
        _row("agmon", "boundary mass fraction", fit.boundary_mass_fraction >= 0.9, fit.boundary_mass_fraction, 0.9),
        _row("agmon", "decay rate positive", fit.decay_rate > 0, fit.decay_rate, 0.0),
    ]


def run_suite(name: str, grid: Grid, opts: PhaseOptions = PhaseOptions()) -> list[dict]:
    if name == "appendix-a":
        return appendix_a(grid, opts.seed)
    if name == "spectral":
        return spectral(grid, opts.seed, opts.tol)
    if name == "energy":
        return energy_suite(grid, opts.seed)
    if name == "theorems":
        return theorems(grid, opts)
    if name == "agmon":
        return agmon(grid, opts)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
