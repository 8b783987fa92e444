import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nscontrol import krylov


def _spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.geomspace(1.0, cond, n)
    return (q * d) @ q.T


def test_pcg_matches_direct_solve(rng):
    n = 40
    A = _spd(rng, n)
    b = rng.standard_normal(n)
    x, rep = krylov.pcg(lambda v: A @ v, b, inner=np.dot, tol=1e-12,
                        maxit=200)
    assert rep.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) < 1e-8


def test_pcg_exact_preconditioner_converges_in_one(rng):
    n = 30
    A = _spd(rng, n)
    Ainv = np.linalg.inv(A)
    b = rng.standard_normal(n)
    x, rep = krylov.pcg(lambda v: A @ v, b, inner=np.dot,
                        apply_prec=lambda v: Ainv @ v, tol=1e-10)
    assert rep.iterations <= 2
    assert np.linalg.norm(x - Ainv @ b) < 1e-9


def test_pcg_weighted_inner_product(rng):
    """CG in an M-inner product for an M-self-adjoint operator."""
    n = 25
    M = _spd(rng, n, cond=10.0)
    H = _spd(rng, n)                       # SPD in the Euclidean sense
    op = np.linalg.solve(M, H)             # M-self-adjoint, M-positive
    inner = lambda a, b: a @ (M @ b)
    b = rng.standard_normal(n)
    x, rep = krylov.pcg(lambda v: op @ v, b, inner=inner, tol=1e-12,
                        maxit=300)
    assert rep.converged
    assert np.linalg.norm(op @ x - b) < 1e-7


def test_pcg_x0_warm_start(rng):
    n = 30
    A = _spd(rng, n)
    b = rng.standard_normal(n)
    xstar = np.linalg.solve(A, b)
    x, rep = krylov.pcg(lambda v: A @ v, b, inner=np.dot, x0=xstar,
                        tol=1e-10)
    assert rep.iterations == 0 or rep.resnorms[0] < 1e-9


def test_pcg_indefinite_breakdown(rng):
    n = 20
    A = np.diag(np.concatenate([np.ones(n - 1), [-1.0]]))
    b = np.ones(n)
    with pytest.raises(krylov.Breakdown):
        krylov.pcg(lambda v: A @ v, b, inner=np.dot, tol=1e-14, maxit=100,
                   raise_on_breakdown=True)


def test_pcg_resnorms_monotone_start(rng):
    n = 40
    A = _spd(rng, n)
    b = rng.standard_normal(n)
    _, rep = krylov.pcg(lambda v: A @ v, b, inner=np.dot, tol=1e-12)
    assert rep.resnorms[-1] <= 1e-12 * rep.resnorms[0]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_lanczos_distance_matches_dense_pencil(seed):
    """max |ln lambda| of the pencil (H, T) from T-inner-product Lanczos."""
    rng = np.random.default_rng(seed)
    n = 30
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    H = (q * np.geomspace(1.0, 20.0, n)) @ q.T
    p, _ = np.linalg.qr(rng.standard_normal((n, n)))
    T = (p * np.geomspace(0.5, 8.0, n)) @ p.T
    Tinv = np.linalg.inv(T)
    b = rng.standard_normal(n)
    d = krylov.lanczos_spectral_distance(lambda v: H @ v,
                                         lambda v: Tinv @ v, b,
                                         inner=np.dot, k=n + 5)
    lams = np.linalg.eigvals(Tinv @ H).real
    want = np.abs(np.log(lams)).max()
    assert d == pytest.approx(want, rel=1e-6)


def test_lanczos_identity_pencil_distance_zero(rng):
    n = 20
    A = _spd(rng, n)
    Ainv = np.linalg.inv(A)
    d = krylov.lanczos_spectral_distance(lambda v: A @ v,
                                         lambda v: Ainv @ v,
                                         rng.standard_normal(n),
                                         inner=np.dot, k=15)
    assert abs(d) < 1e-10


def test_power_iteration_matches_dense_norm(rng):
    n = 35
    A = _spd(rng, n) - 3.0 * np.eye(n)     # symmetric, indefinite
    got = krylov.power_iteration_symmetric(lambda v: A @ v, inner=np.dot,
                                           n=n, iters=500, tol=1e-10)
    want = np.abs(np.linalg.eigvalsh(A)).max()
    assert got == pytest.approx(want, rel=1e-4)
