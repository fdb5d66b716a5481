import csv
import math
import threading

import numpy as np
import pytest

from lcphase.grid import Grid, distance_to_boundary
from lcphase.phase import (
    CRITICAL,
    FAILED,
    MU_STAR_CACHE,
    NEMATIC,
    SMECTIC,
    MuStarCache,
    PhaseOptions,
    PhasePoint,
    agmon_fit,
    classify,
    classify_value,
    field_lipschitz_pairs,
    guard_gap,
    measure_domain_constants,
    mustar_ratio_trend,
    nematicity_threshold,
    scan,
    small_tau_asymptotics,
    bound_constants,
    ttau_controls,
    write_scan_csv,
    write_scan_svg,
)
from lcphase.spectra import SearchOptions

FAST = SearchOptions((2, 4, 2), 10)


@pytest.mark.parametrize(
    "k2,expected", [(0.5, NEMATIC), (0.97, NEMATIC), (0.99, CRITICAL), (1.0, CRITICAL), (1.03, SMECTIC)]
)
def test_classification_band(k2, expected):
    assert classify_value(math.sqrt(k2), 1.0, 0.02) == expected


def test_cache_computes_once_under_contention(grid9):
    cache = MuStarCache()
    out = []
    threads = [threading.Thread(target=lambda: out.append(cache.get(grid9, 3.0, 1.0, FAST))) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(cache) == 1
    assert all(r is out[0] for r in out)


def test_cache_insert_seeds_entries(grid9):
    cache = MuStarCache()
    first = cache.get(grid9, 2.0, 1.0, FAST)
    other = MuStarCache()
    other.insert(grid9, 2.0, 1.0, first, FAST)
    assert other.get(grid9, 2.0, 1.0, FAST) is first
    other.clear()
    assert len(other) == 0


def test_classify_and_scan(grid9):
    opts = PhaseOptions(search=FAST, compute_g=True)
    mu = MU_STAR_CACHE.get(grid9, 3.0, 1.0, FAST).value
    p = classify(3.0, 1.0, math.sqrt(2.0 * mu), grid9, opts)
    assert p.classification == SMECTIC and p.g_value < 0
    assert p.diagnostics["equivalence_ok"] == 1.0
    with pytest.raises(ValueError):
        classify(3.0, 0.0, 1.0, grid9, opts)
    pts = scan([3.0], [1.0], [0.5, 1.0, 2.0], grid9, PhaseOptions(search=FAST), kappa_relative=True)
    assert [q.classification for q in pts] == [NEMATIC, CRITICAL, SMECTIC]
    with pytest.raises(ValueError):
        scan([], [1.0], [1.0], grid9)


def test_scan_records_failures_and_continues(grid9):
    pts = scan([3.0], [1.0, -1.0], [1.0], grid9, PhaseOptions(search=FAST))
    assert pts[0].classification != FAILED
    assert pts[1].classification == FAILED and "error" in pts[1].diagnostics


def test_scan_writers(tmp_path):
    pts = [
        PhasePoint(5.0, 1.0, 0.5, 0.8, None, NEMATIC, {"kappa_sq_over_mu": 0.3125}),
        PhasePoint(5.0, 1.0, 1.5, 0.8, -0.1, SMECTIC),
        PhasePoint(5.0, 2.0, 1.5, math.nan, None, FAILED, {"error": "x"}),
    ]
    write_scan_csv(tmp_path / "s.csv", pts)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0][:6] == ["q", "tau", "kappa", "mu_star", "g_value", "classification"]
    assert rows[0][-1] == "format_version" and len(rows) == 4
    assert [r[5] for r in rows[1:]] == [NEMATIC, SMECTIC, FAILED]
    write_scan_svg(tmp_path / "s.svg", pts)
    svg = (tmp_path / "s.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<circle") == 2 and "kappa^2 / (q tau)" in svg


def test_guard_gap_rejects_twists_near_the_dirichlet_spectrum(grid9):
    assert guard_gap(1.0, grid9) > 0.01
    with pytest.raises(ValueError):
        guard_gap(math.sqrt(3) * math.pi * 1.001, grid9)


def test_bound_constants_closed_forms():
    c = bound_constants(q=2.0, tau=1.0, kappa=1.0, K=4.0, g=-0.25, mu1_tau=8.0, volume=1.0)
    assert c.g_tilde == pytest.approx(0.25)
    assert c.c1 == pytest.approx(2.0 * math.sqrt(2 * 0.25 / 32.0))
    assert c.c2 == pytest.approx(2.0 * 4.0 * 0.25 / 32.0)
    assert c.c3 == pytest.approx(2.0 * math.sqrt(2.0) * 0.5 * math.sqrt(1.125))
    zero = bound_constants(2.0, 1.0, 1.0, 4.0, -0.5, 8.0, 1.0)
    assert zero.c4 == 0.0 and zero.g_tilde == 0.0


def test_domain_constants_are_cached_and_positive(grid9):
    a = measure_domain_constants(grid9, samples=6)
    b = measure_domain_constants(grid9, samples=6)
    assert a is b
    assert a.sobolev > 0 and a.h1_control >= 1.0 and a.nematic > 0
    assert "protocol" in a.to_json()


def test_random_field_controls_and_pairs(grid9):
    ctl = ttau_controls(grid9, 1.0, samples=9)
    assert ctl["pass"]
    pairs = field_lipschitz_pairs(grid9, 4.0, count=3)
    assert all(p["pass"] for p in pairs)


def test_agmon_fit_recovers_synthetic_decay():
    g = Grid(33, 1.0)
    q, tau, alpha = 64.0, 1.0, 1.5
    t = distance_to_boundary(g)
    psi = np.exp(-0.5 * alpha * math.sqrt(q * tau) * t).astype(complex)
    fit = agmon_fit(psi, q, tau, g)
    assert fit.decay_rate == pytest.approx(alpha, rel=1e-6)
    assert fit.fit_residual <= 1e-8
    assert 0 < fit.boundary_mass_fraction <= 1


def test_agmon_fit_flags_empty_fields(grid9):
    fit = agmon_fit(np.zeros(grid9.shape, complex), 64.0, 1.0, grid9)
    assert fit.empty and math.isnan(fit.decay_rate)


def test_trend_and_small_tau_input_validation(grid9):
    with pytest.raises(ValueError):
        mustar_ratio_trend([8, 8], grid9)
    with pytest.raises(ValueError):
        small_tau_asymptotics(5.0, 1.0, [0.1, 0.2], 10.0, grid9)


def test_trend_reports_rows(grid9):
    out = mustar_ratio_trend([2.0, 4.0], grid9, PhaseOptions(search=FAST))
    assert [r["q_tau"] for r in out["rows"]] == [2.0, 4.0]
    assert "decreasing" in out and out["theta0"] == pytest.approx(0.5901, abs=1e-3)


def test_zero_kappa_needs_no_elastic_threshold(grid9):
    r = nematicity_threshold(3.0, 1.0, 0.0, grid9, PhaseOptions(search=FAST))
    assert r["K_min"] == 0.0 and r["verified"]
    with pytest.raises(ValueError):
        nematicity_threshold(3.0, 1.0, 10.0, grid9, PhaseOptions(search=FAST), verify=False)
