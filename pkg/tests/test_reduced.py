import numpy as np
import pytest

from nscontrol import driver, forms, reduced
from nscontrol.flow import ProblemParams
from nscontrol.grid import Level


def _setup(level, pp, seed=3):
    rng = np.random.default_rng(seed)
    u = driver.target_control_field(level)
    targets = driver.generate_target_data(level, pp, u)
    ctx = reduced.make_context(pp, level, 0.7 * u, targets)
    return rng, u, targets, ctx


def test_cost_and_gradient_at_recovered_control(level4):
    """With targets generated from u, the misfit at u is zero, so the
    cost is the pure penalty and the gradient is beta u."""
    pp = ProblemParams(nu=0.5, beta=1e-2)
    u = driver.target_control_field(level4)
    targets = driver.generate_target_data(level4, pp, u)
    ctx = reduced.make_context(pp, level4, u, targets)
    want = 0.5 * pp.beta * level4.inner_vec(u, u)
    assert reduced.eval_cost(ctx) == pytest.approx(want, rel=1e-10)
    g = reduced.eval_gradient(ctx)
    assert np.abs(g - pp.beta * u).max() < 1e-11


def test_gradient_finite_difference(level4):
    pp = ProblemParams(nu=0.5, beta=1e-2)
    rng, u, targets, ctx = _setup(level4, pp)
    g = reduced.eval_gradient(ctx)
    v = rng.standard_normal(g.shape)
    eps = 1e-5
    cp = reduced.eval_cost(reduced.make_context(pp, level4,
                                                ctx.u + eps * v, targets))
    cm = reduced.eval_cost(reduced.make_context(pp, level4,
                                                ctx.u - eps * v, targets))
    fd = (cp - cm) / (2 * eps)
    assert level4.inner_vec(g, v) == pytest.approx(fd, rel=1e-6)


def test_hessian_finite_difference_of_gradient(level4):
    pp = ProblemParams(nu=0.5, beta=1e-2, gamma_p=1e-3)
    rng, u, targets, ctx = _setup(level4, pp)
    v = rng.standard_normal(2 * level4.nq2s)
    eps = 1e-5
    gp = reduced.eval_gradient(reduced.make_context(
        pp, level4, ctx.u + eps * v, targets))
    gm = reduced.eval_gradient(reduced.make_context(
        pp, level4, ctx.u - eps * v, targets))
    fd = (gp - gm) / (2 * eps)
    hv = reduced.hessian_apply(ctx, v)
    denom = level4.norm_vec(fd)
    assert level4.norm_vec(hv - fd) / denom < 1e-5


@pytest.mark.parametrize("gamma_p", [0.0, 1e-3])
def test_hessian_self_adjoint_in_mass_inner_product(level4, gamma_p):
    pp = ProblemParams(nu=0.5, beta=1e-2, gamma_p=gamma_p)
    rng, u, targets, ctx = _setup(level4, pp)
    for _ in range(5):
        a = rng.standard_normal(2 * level4.nq2s)
        b = rng.standard_normal(2 * level4.nq2s)
        lhs = level4.inner_vec(reduced.hessian_apply(ctx, a), b)
        rhs = level4.inner_vec(a, reduced.hessian_apply(ctx, b))
        assert abs(lhs - rhs) <= 1e-12 * level4.norm_vec(a) * level4.norm_vec(b)


def test_hessian_linearity(level4, rng):
    pp = ProblemParams(nu=0.5, beta=1e-2)
    _, u, targets, ctx = _setup(level4, pp)
    a = rng.standard_normal(2 * level4.nq2s)
    b = rng.standard_normal(2 * level4.nq2s)
    lin = reduced.hessian_apply(ctx, 2.0 * a - 3.0 * b)
    sep = 2.0 * reduced.hessian_apply(ctx, a) - 3.0 * reduced.hessian_apply(ctx, b)
    assert np.abs(lin - sep).max() < 1e-10 * max(1.0, np.abs(sep).max())


def test_hessian_positive_at_minimizer(level4, rng):
    """At the exact-recovery minimizer the reduced Hessian is positive."""
    pp = ProblemParams(nu=0.5, beta=1e-2)
    u = driver.target_control_field(level4)
    targets = driver.generate_target_data(level4, pp, u)
    ctx = reduced.make_context(pp, level4, u, targets)
    for _ in range(5):
        v = rng.standard_normal(2 * level4.nq2s)
        quad = level4.inner_vec(v, reduced.hessian_apply(ctx, v))
        assert quad >= pp.beta * level4.inner_vec(v, v) * (1 - 1e-8)


def test_context_reuses_supplied_state(level4):
    pp = ProblemParams(nu=0.5, beta=1e-2)
    u = driver.target_control_field(level4)
    targets = driver.generate_target_data(level4, pp, u)
    c1 = reduced.make_context(pp, level4, u, targets)
    c2 = reduced.make_context(pp, level4, u, targets, state=c1.state)
    assert c2.state is c1.state
    assert np.abs(reduced.eval_gradient(c1)
                  - reduced.eval_gradient(c2)).max() < 1e-14
