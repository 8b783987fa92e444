import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nscontrol import forms
from nscontrol.grid import Level, MeshHierarchy, build_hierarchy


def test_node_counts(level4):
    n = level4.n
    assert level4.nq2_1d == 2 * n + 1
    assert level4.nq2s == (2 * n + 1) ** 2
    assert level4.nq1 == (n + 1) ** 2
    assert level4.zero_vector().shape == (2 * level4.nq2s,)


def test_mass_total_area(level4):
    ones = np.ones(level4.nq2s)
    assert level4.mass_q2 @ ones @ ones == pytest.approx(1.0, abs=1e-14)
    o1 = np.ones(level4.nq1)
    assert level4.mass_q1 @ o1 @ o1 == pytest.approx(1.0, abs=1e-14)


def test_stiffness_annihilates_constants(level8):
    ones = np.ones(level8.nq2s)
    assert np.abs(level8.stiff @ ones).max() < 1e-13


def test_divergence_of_constant_field_is_zero(level8):
    v = np.concatenate([np.ones(level8.nq2s), 2 * np.ones(level8.nq2s)])
    assert np.abs(level8.div @ v).max() < 1e-13


def test_divergence_oracle_linear_field(level4):
    # y = (x, -y) has div = 0; y = (x, y) has div = 2, so the dual vector
    # B y should pair with the constant pressure 1 to give -2 (the sign
    # convention stores -div) times the domain area.
    vx = forms.interpolate_q2(level4, lambda x, y: x, lambda x, y: -y)
    assert np.abs(level4.div @ vx).max() < 1e-14
    vy = forms.interpolate_q2(level4, lambda x, y: x, lambda x, y: y)
    ones = np.ones(level4.nq1)
    assert ones @ (level4.div @ vy) == pytest.approx(-2.0, abs=1e-13)


def test_mass_solve_roundtrip(level4, rng):
    b = rng.standard_normal(level4.nq2s)
    x = level4.mass_q2_solve(b)
    assert np.abs(level4.mass_q2 @ x - b).max() < 1e-11
    b1 = rng.standard_normal(level4.nq1)
    assert np.abs(level4.mass_q1 @ level4.mass_q1_solve(b1) - b1).max() < 1e-11


def test_inner_vec_is_an_inner_product(level4, rng):
    a = rng.standard_normal(2 * level4.nq2s)
    b = rng.standard_normal(2 * level4.nq2s)
    assert level4.inner_vec(a, b) == pytest.approx(level4.inner_vec(b, a))
    assert level4.inner_vec(a, a) > 0
    assert level4.norm_vec(a) == pytest.approx(np.sqrt(level4.inner_vec(a, a)))


@settings(max_examples=20, deadline=None)
@given(cx=st.floats(-2, 2), cy=st.floats(-2, 2), cxy=st.floats(-2, 2))
def test_prolongation_reproduces_biquadratics(cx, cy, cxy):
    """Q2 prolongation is exact on piecewise-coarse biquadratic fields."""
    hier = build_hierarchy(2, 2)
    coarse, fine = hier[0], hier[1]
    f1 = lambda x, y: cx * x ** 2 + cy * y ** 2 + cxy * x * y
    f2 = lambda x, y: cy * x + cx * y ** 2
    vc = forms.interpolate_q2(coarse, f1, f2)
    vf = forms.interpolate_q2(fine, f1, f2)
    assert np.abs(hier.prolong_control(0, vc) - vf).max() < 1e-12


def test_projection_left_inverse_of_prolongation(hierarchy_4_8, rng):
    vc = rng.standard_normal(2 * hierarchy_4_8[0].nq2s)
    back = hierarchy_4_8.project_control(1, hierarchy_4_8.prolong_control(0, vc))
    assert np.abs(back - vc).max() < 1e-10


def test_projection_is_l2_orthogonal(hierarchy_4_8, rng):
    """(v - P pi v) is M-orthogonal to the prolonged coarse space."""
    hier = hierarchy_4_8
    fine = hier[1]
    v = rng.standard_normal(2 * fine.nq2s)
    res = v - hier.prolong_control(0, hier.project_control(1, v))
    wc = rng.standard_normal(2 * hier[0].nq2s)
    w = hier.prolong_control(0, wc)
    assert abs(fine.inner_vec(res, w)) < 1e-11 * fine.norm_vec(v)


def test_q1_transfer_reproduces_bilinears(hierarchy_4_8):
    hier = hierarchy_4_8
    t = hier.transfers[0]
    f = lambda x, y: 1 + 2 * x - y + 3 * x * y
    pc = forms.interpolate_q1(hier[0], f)
    pf = forms.interpolate_q1(hier[1], f)
    assert np.abs(t.P1 @ pc - pf).max() < 1e-13
    assert np.abs(t.project_q1(pf) - pc).max() < 1e-11


def test_sub_hierarchy_shares_levels(hierarchy_4_8):
    sub = hierarchy_4_8.sub(0)
    assert len(sub) == 1
    assert sub[0] is hierarchy_4_8[0]
    full = hierarchy_4_8.sub(1)
    assert len(full) == 2
    assert full.transfers[0] is hierarchy_4_8.transfers[0]


def test_build_hierarchy_doubles(hierarchy_4_8):
    assert [lvl.n for lvl in hierarchy_4_8.levels] == [4, 8]
