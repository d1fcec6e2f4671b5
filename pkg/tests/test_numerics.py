import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deltalab.numerics import (Ball, Box, InsufficientDataError, LUFactorization,
                               NotHermitianError, QuadratureError, QuadratureSpec,
                               SingularMatrixError, fit_exponential_decay, gauss_legendre,
                               hermitian_eigenvalues, integrate, lu_solve, operator_norm,
                               principal_sqrt)


def test_principal_sqrt_examples():
    assert principal_sqrt(-1) == pytest.approx(1j)
    assert principal_sqrt(1j) == pytest.approx((1 + 1j) * math.sqrt(2) / 2)
    assert principal_sqrt(4 + 0j) == 2


@given(st.floats(-50, 50), st.floats(1e-6, 50))
def test_principal_sqrt_maps_upper_half_plane_to_first_quadrant(x, y):
    w = principal_sqrt(complex(x, y))
    assert w.real > 0 and w.imag > 0
    assert abs(w * w - complex(x, y)) <= 1e-12 * max(1.0, abs(complex(x, y)))


def test_lu_solve_examples(rng):
    B = rng.normal(size=(5, 3))
    np.testing.assert_allclose(lu_solve(np.eye(5), B), B)
    np.testing.assert_allclose(lu_solve(np.diag([2.0, 4.0]), np.eye(2)), np.diag([0.5, 0.25]))
    A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)) + 8 * np.eye(8)
    X0 = rng.normal(size=(8, 4)) + 1j * rng.normal(size=(8, 4))
    np.testing.assert_allclose(lu_solve(A, A @ X0), X0, rtol=0, atol=1e-10)


def test_factorization_reuse_and_residual(rng):
    A = rng.normal(size=(20, 20)) + 20 * np.eye(20)
    fac = LUFactorization(A)
    for _ in range(3):
        B = rng.normal(size=(20, 2))
        X = fac.solve(B)
        assert np.linalg.norm(A @ X - B) <= 1e-10 * np.linalg.norm(B)
    np.testing.assert_allclose(fac.inverse() @ A, np.eye(20), atol=1e-12)


@pytest.mark.filterwarnings("ignore")
def test_singular_matrix_reports_condition():
    with pytest.raises(SingularMatrixError) as info:
        LUFactorization(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert info.value.condition > 1e14


def test_hermitian_eigenvalues(rng):
    np.testing.assert_allclose(hermitian_eigenvalues(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    np.testing.assert_allclose(hermitian_eigenvalues(np.array([[0, 1], [1, 0.0]])), [-1, 1])
    M = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = M + M.conj().T
    w, V = hermitian_eigenvalues(H, vectors=True)
    # characteristic-polynomial root oracle
    roots = np.sort(np.roots(np.poly(H)).real)
    np.testing.assert_allclose(w, roots, atol=1e-9)
    assert np.linalg.norm(H - V @ np.diag(w) @ V.conj().T) <= 1e-9 * np.linalg.norm(H)
    with pytest.raises(NotHermitianError):
        hermitian_eigenvalues(M)


def test_operator_norm(rng):
    assert operator_norm(np.diag([1.0, -3.0])) == pytest.approx(3.0)
    u = np.array([2.0, 0, 0])
    v = np.array([0, 3.0, 4.0])
    assert operator_norm(np.outer(u, v.conj())) == pytest.approx(10.0)
    A = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    lam = hermitian_eigenvalues(A.conj().T @ A)[-1]
    assert operator_norm(A) == pytest.approx(math.sqrt(lam), rel=1e-8)


def test_gauss_legendre_exact_on_polynomials():
    x, w = gauss_legendre(8, 0.0, 2.0, panels=3)
    assert np.sum(w * x ** 15) == pytest.approx(2.0 ** 16 / 16, rel=1e-13)


def test_integrate_examples():
    r = integrate(lambda p: p[:, 0] ** 2, Box((0.0,), (1.0,)))
    assert r.value == pytest.approx(1 / 3, abs=1e-12)
    spec = QuadratureSpec(radius=4000.0, tol=1e-3, panels=256)
    r = integrate(lambda p: p[:, 0] ** 2 / (1 + p[:, 0] ** 2) ** 2, Box((0.0,), (math.inf,)),
                  spec, tail=lambda R: 1.0 / R)
    assert abs(r.value - math.pi / 4) <= r.error
    vol = integrate(lambda p: np.ones(len(p)), Ball((0.0, 0.0, 0.0), 0.2))
    assert vol.value == pytest.approx(4 * math.pi / 3 * 0.2 ** 3, rel=1e-12)


def test_integrate_linearity():
    f = lambda p: np.sin(p[:, 0]) * np.exp(p[:, 1])   # noqa: E731
    g = lambda p: p[:, 0] * p[:, 1] ** 2   # noqa: E731
    box = Box((0.0, -1.0), (1.0, 1.0))
    a, b = integrate(f, box), integrate(g, box)
    ab = integrate(lambda p: 2 * f(p) - 3 * g(p), box)
    assert abs(ab.value - (2 * a.value - 3 * b.value)) <= 2 * (a.error + b.error + 1e-10)


def test_integrate_nonconvergence():
    spec = QuadratureSpec(nodes=2, tol=1e-14)
    with pytest.raises(QuadratureError):
        integrate(lambda p: np.abs(p[:, 0]) ** 0.5 * np.cos(40 * p[:, 0]), Box((-1.0,), (1.0,)), spec)
    with pytest.raises(ValueError):
        integrate(lambda p: p[:, 0], Box((0.0,), (math.inf,)))


def test_fit_exponential_decay():
    d = np.arange(1, 11)
    fit = fit_exponential_decay(d, 5 * np.exp(-0.7 * d))
    assert fit.rate == pytest.approx(0.7, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)
    flat = fit_exponential_decay(d, np.full(10, 2.0))
    assert flat.rate == 0 and flat.r_squared == 0
    rng = np.random.default_rng(3)
    noisy = 5 * np.exp(-0.7 * d) * (1 + 0.01 * rng.uniform(-1, 1, 10))
    assert fit_exponential_decay(d, noisy).rate == pytest.approx(0.7, rel=0.05)
    with pytest.raises(InsufficientDataError):
        fit_exponential_decay([1, 2, 3], [1.0, 1e-320, 0.0])
