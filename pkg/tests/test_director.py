import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcphase.director import (
    HelicalSpec,
    Rotation,
    RotationError,
    cube_symmetries,
    helical_at,
    helical_field,
    radial_field,
    so3_sample,
    so3_sample_angles,
    verify_ctau,
)
from lcphase.grid import Grid

quats = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(
    lambda q: sum(c * c for c in q) > 1e-3
)


def test_non_unit_quaternion_rejected():
    with pytest.raises(RotationError):
        Rotation(1.0, 1.0, 0.0, 0.0)
    with pytest.raises(RotationError):
        Rotation.normalized(0, 0, 0, 0)


@settings(max_examples=50, deadline=None)
@given(q=quats)
def test_rotation_matrix_is_proper_orthogonal(q):
    m = Rotation.normalized(*q).matrix()
    np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=quats, b=quats)
def test_composition_matches_matrix_product(a, b):
    ra, rb = Rotation.normalized(*a), Rotation.normalized(*b)
    np.testing.assert_allclose((ra @ rb).matrix(), ra.matrix() @ rb.matrix(), atol=1e-12)
    np.testing.assert_allclose((ra @ ra.inverse()).matrix(), np.eye(3), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(q=quats)
def test_from_matrix_and_json_round_trip(q):
    r = Rotation.normalized(*q)
    np.testing.assert_allclose(Rotation.from_matrix(r.matrix()).matrix(), r.matrix(), atol=1e-12)
    assert Rotation.from_json(r.to_json()) == r


def test_axis_phase_puts_helix_axis_at_polar_azimuth():
    theta, phi = 0.7, 1.9
    r = Rotation.from_axis_phase(theta, phi, 0.4)
    expected = [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    np.testing.assert_allclose(r.helix_axis, expected, atol=1e-14)


def test_identity_helical_field_formula():
    pts = np.array([[0.1, 0.2, 0.3], [0.0, 0.0, -0.4]])
    out = helical_at(pts, Rotation.identity(), 2.0)
    np.testing.assert_allclose(out[0], [math.cos(0.6), math.sin(0.6), 0.0], atol=1e-15)
    np.testing.assert_allclose(out[1], [math.cos(-0.8), math.sin(-0.8), 0.0], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(q=quats, tau=st.floats(0.1, 3.0))
def test_helical_field_is_unit_and_tangent_to_axis_planes(q, tau):
    g = Grid(8, 1.0)
    r = Rotation.normalized(*q)
    n = helical_field(HelicalSpec(r, tau), g)
    assert np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0)) <= 1e-14
    # the director rotates in planes orthogonal to the helix axis
    assert np.max(np.abs(n @ r.helix_axis)) <= 1e-13


def test_helical_spec_needs_positive_tau():
    with pytest.raises(ValueError):
        HelicalSpec(Rotation.identity(), 0.0)


def test_ctau_residuals_shrink_at_second_order():
    r = Rotation.normalized(0.3, -0.2, 0.8, 0.1)
    res = []
    for n in (9, 17):
        g = Grid(n, 1.0)
        res.append(verify_ctau(helical_field(HelicalSpec(r, 2.0), g), 2.0, g).curl_residual)
    # halving h cuts the curl residual by about four
    assert 3.0 < res[0] / res[1] < 5.0


def test_radial_field_is_curl_free_unit_and_rejects_inner_centres():
    g = Grid(17, 1.0)
    rep = verify_ctau(radial_field((0.0, 0.0, 2.0), g), 0.0, g)
    assert rep.norm_residual <= 1e-12
    assert rep.curl_residual <= 3.0 * g.h**2
    for a in [(0, 0, 0), (0.5, 0.5, 0.5), (0.2, -0.5, 0.1)]:
        with pytest.raises(ValueError):
            radial_field(a, g)


def test_cube_symmetries_form_the_rotation_group():
    syms = cube_symmetries()
    assert len(syms) == 24
    mats = [np.rint(s.matrix()) for s in syms]
    keys = {m.astype(int).tobytes() for m in mats}
    assert len(keys) == 24
    for a in mats[:6]:
        for b in mats[:6]:
            assert np.rint(a @ b).astype(int).tobytes() in keys


def test_so3_sample_order_and_size():
    angles = so3_sample_angles((3, 4, 2))
    assert len(angles) == 24 and angles[0] == (0.0, 0.0, 0.0)
    assert len(so3_sample((3, 4, 2))) == 24
    with pytest.raises(ValueError):
        so3_sample_angles((0, 1, 1))
