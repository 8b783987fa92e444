import numpy as np
import pytest

from nscontrol import flow, forms
from nscontrol.flow import ProblemParams
from nscontrol.grid import Level


def test_params_validation():
    ProblemParams(nu=0.1, beta=1e-4)
    with pytest.raises(ValueError):
        ProblemParams(nu=0.0, beta=1e-4)
    with pytest.raises(ValueError):
        ProblemParams(nu=0.1, beta=0.0)
    with pytest.raises(ValueError):
        ProblemParams(nu=0.1, beta=1e-4, gamma_y=0.0, gamma_p=0.0)
    with pytest.raises(ValueError):
        ProblemParams(nu=0.1, beta=1e-4, gamma_p=-1.0)


def test_stokes_residual_and_constraints(level8):
    """Stokes solve: residual, discrete divergence and boundary are clean."""
    pp = ProblemParams(nu=1.0, beta=1e-2)
    f = forms.interpolate_q2(level8, lambda x, y: np.sin(np.pi * x) * y,
                             lambda x, y: x * (1 - x))
    st = flow.solve_navier_stokes(pp, level8, u=f)
    bnd = level8.boundary_mask
    assert np.abs(st.y[:level8.nq2s][bnd]).max() == 0.0
    assert np.abs(st.y[level8.nq2s:][bnd]).max() == 0.0
    d = level8.div @ st.y
    assert np.abs(d - d.sum() * level8.mean_q1 / level8.mean_q1.sum()).max() \
        < 1e-10
    assert np.abs(st.p @ level8.mean_q1) < 1e-10   # zero-mean pressure


def test_linearized_solve_satisfies_equations(level4, rng):
    """Check A x = b directly for the linearized saddle solve."""
    pp = ProblemParams(nu=0.5, beta=1e-2)
    u = forms.interpolate_q2(level4, lambda x, y: x * y * (1 - x),
                             lambda x, y: np.zeros_like(x))
    st = flow.solve_navier_stokes(pp, level4, u=u)
    fact = flow.factorize_linearized(level4, pp.nu, st.y)
    g = rng.standard_normal(2 * level4.nq2s)
    w, r = flow.solve_linearized(fact, g)
    N1, N2 = forms.assemble_convection(level4, st.y)
    ns = level4.nq2s
    visc = np.concatenate([level4.stiff @ w[:ns], level4.stiff @ w[ns:]])
    lhs = pp.nu * visc + N1 @ w + N2 @ w + level4.div.T @ r
    rhs = level4.mass_vec @ g
    bnd = np.concatenate([level4.boundary_mask, level4.boundary_mask])
    lhs[bnd] = 0.0
    rhs[bnd] = 0.0
    assert np.abs(lhs - rhs).max() < 1e-9 * max(1.0, np.abs(rhs).max())
    assert np.abs(w[bnd]).max() == 0.0
    div = level4.div @ w
    assert np.abs(div - div.sum() * level4.mean_q1
                  / level4.mean_q1.sum()).max() < 1e-10


def test_adjoint_duality_identity(level4, rng):
    """(A^-1 M f, M g) = (M f, A^-T M g) for the velocity blocks."""
    pp = ProblemParams(nu=0.5, beta=1e-2)
    st = flow.solve_navier_stokes(pp, level4)
    fact = flow.factorize_linearized(level4, pp.nu, st.y)
    f = rng.standard_normal(2 * level4.nq2s)
    g = rng.standard_normal(2 * level4.nq2s)
    wf, _ = flow.solve_linearized(fact, f)
    zg, _ = flow.solve_adjoint(fact, g)
    lhs = level4.inner_vec(wf, g)
    rhs = level4.inner_vec(f, zg)
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-13)


def test_incompatible_divergence_data_raises(level4, rng):
    pp = ProblemParams(nu=1.0, beta=1e-2)
    fact = flow.factorize_linearized(level4, pp.nu, level4.zero_vector())
    g = rng.standard_normal(2 * level4.nq2s)
    bad = np.ones(level4.nq1)            # nonzero mean: no velocity matches
    with pytest.raises(flow.IncompatibleData):
        flow.solve_linearized(fact, g, d=bad)


def test_newton_quadratic_tail(level8):
    pp = ProblemParams(nu=0.1, beta=1e-4)
    f = forms.interpolate_q2(level8, lambda x, y: 10 * y * (1 - y),
                             lambda x, y: np.zeros_like(x))
    st = flow.solve_navier_stokes(pp, level8, u=f)
    assert st.residual < 1e-12
    assert st.newton_iters <= 10


def test_low_viscosity_continuation(level8):
    """nu = 0.01 needs the continuation path but must still converge."""
    pp = ProblemParams(nu=0.01, beta=1e-4)
    f = forms.interpolate_q2(level8, lambda x, y: y * (1 - y),
                             lambda x, y: np.zeros_like(x))
    st = flow.solve_navier_stokes(pp, level8, u=f)
    assert st.residual < 1e-11


def test_zero_forcing_gives_zero_state(level4):
    pp = ProblemParams(nu=0.3, beta=1e-2)
    st = flow.solve_navier_stokes(pp, level4)
    assert np.abs(st.y).max() < 1e-13
    assert np.abs(st.p).max() < 1e-12
