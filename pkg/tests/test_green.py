import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deltalab.disorder import DisorderSpec, constant_config, empty_config, sample
from deltalab.green import (CoincidentPointsError, EnergyPoint, NearLatticeError, assemble_gamma,
                            boundary_condition_residual, c_num, c_printed, c_parseval,
                            cell_averaged_green, cell_rule, dissipativity_certificate,
                            free_green, green_matrix, green_omega, interaction_term,
                            singular_expansion)
from deltalab.lattice import LatticeWindow
from deltalab.numerics import principal_sqrt

PI2 = math.pi ** 2


def _system(L=1, seed=3, E=2 * PI2, kappa=0.5, p0=0.0, conjugate=False):
    cfg = sample(DisorderSpec(p0=p0), LatticeWindow(L), seed)
    return assemble_gamma(cfg, EnergyPoint(E, kappa), conjugate)


def test_free_green_examples():
    g = free_green([0, 0, 0], [1, 0, 0], complex(1, 1e-300))
    assert g == pytest.approx(complex(math.cos(1), math.sin(1)) / (4 * math.pi), rel=1e-14)
    assert g.real == pytest.approx(0.043000, abs=1e-5)
    assert g.imag == pytest.approx(0.066963, abs=1e-5)
    g = free_green([0.1, 0.2, 0.3], [0.1, 0.2, 1.3], 1j)
    # closed form e^{-sqrt(2)/2}/(4π) = 0.0392372 (the rounded value 0.039149 is off in the 4th digit)
    assert abs(g) == pytest.approx(math.exp(-math.sqrt(2) / 2) / (4 * math.pi), rel=1e-14)
    assert abs(g) == pytest.approx(0.0392372, abs=1e-7)
    with pytest.raises(CoincidentPointsError):
        free_green([1, 2, 3], [1, 2, 3], 1j)


@given(st.floats(0.1, 6), st.floats(-30, 30), st.floats(0.01, 5))
def test_free_green_modulus(r, E, kappa):
    z = complex(E, kappa)
    g = free_green([0, 0, 0], [0, r, 0], z)
    tau = principal_sqrt(z).imag
    assert abs(g) == pytest.approx(math.exp(-tau * r) / (4 * math.pi * r), rel=1e-12)


def test_scalar_gamma_and_certificate():
    z = EnergyPoint(13.0, 0.7)
    sys_ = assemble_gamma(constant_config(LatticeWindow(0), -1.0), z)
    assert sys_.matrix.shape == (1, 1)
    assert sys_.matrix[0, 0] == pytest.approx(-1 - 1j * principal_sqrt(z.z) / (4 * math.pi))
    cert = dissipativity_certificate(sys_)
    assert cert.lambda_min == pytest.approx(principal_sqrt(z.z).real / (4 * math.pi))


def test_gamma_structure():
    s = _system(L=2)
    G = s.matrix
    np.testing.assert_array_equal(G, G.T)
    k = principal_sqrt(s.z)
    assert np.all(-np.diag(G).imag == pytest.approx(k.real / (4 * math.pi)))
    off = ~np.eye(s.size, dtype=bool)
    r = np.linalg.norm(s.sites[:, None] - s.sites[None], axis=-1)
    assert np.all(np.abs(G[off]) <= np.exp(-k.imag * r[off]) / (4 * math.pi) * (1 + 1e-12))


def test_constants():
    assert c_num(2 * PI2, 0.5) == pytest.approx(0.6362, abs=1e-4)
    assert c_printed(2 * PI2) == pytest.approx(2.547, abs=1e-3)
    assert c_parseval(2 * PI2, 0.5) * (2 * math.pi) ** 3 == pytest.approx(c_num(2 * PI2, 0.5))
    with pytest.raises(ValueError):
        EnergyPoint(1.0, 0.0)


def test_parseval_certificate_holds_on_random_windows():
    for seed in range(4):
        cert = _system(L=2, seed=seed, E=14.8, kappa=0.3).certificate()
        assert cert.passed_parseval
        assert cert.lambda_min > 0


def test_lambda_restriction_empty_and_single_site():
    z = EnergyPoint(PI2, 0.4)
    free = assemble_gamma(empty_config(LatticeWindow(2)), z)
    x, y = np.array([0.3, 0.2, 0.1]), np.array([2.4, -0.3, 1.2])
    assert green_omega(x, y, free) == free_green(x, y, z.z)
    assert interaction_term(x, y, free) == 0
    one = assemble_gamma(constant_config(LatticeWindow(0), -1.5), z)
    k = principal_sqrt(z.z)
    expected = free_green(x, y, z.z) + free_green(x, [0, 0, 0], z.z) * free_green([0, 0, 0], y, z.z) / (
        1 / -1.5 - 1j * k / (4 * math.pi))
    assert green_omega(x, y, one) == pytest.approx(expected, rel=1e-13)


def test_restriction_matches_inactive_removal():
    # inactive sites never enter: a p0 sample equals the same sample on its active set alone
    s = _system(L=2, seed=9, p0=0.4)
    x, y = np.array([0.31, 0.22, 0.4]), np.array([1.6, 0.7, -1.3])
    direct = free_green(x, y, s.z) + free_green(x, s.sites, s.z) @ np.linalg.solve(
        s.matrix, free_green(s.sites, y, s.z))
    assert green_omega(x, y, s) == pytest.approx(direct, rel=1e-11)


def test_symmetry_and_interaction_split(rng):
    s = _system(L=1, seed=4)
    X = rng.uniform(-1.4, 1.4, (20, 3))
    Y = rng.uniform(-1.4, 1.4, (20, 3))
    gxy, gyx = green_omega(X, Y, s), green_omega(Y, X, s)
    np.testing.assert_allclose(gxy, gyx, rtol=1e-10)
    np.testing.assert_allclose(interaction_term(X, Y, s), gxy - free_green(X, Y, s.z),
                               rtol=0, atol=1e-12)
    M = green_matrix(X[:4], Y[:3], s)
    assert M[2, 1] == pytest.approx(green_omega(X[2], Y[1], s), rel=1e-12)


def test_near_lattice_rejected():
    s = _system(L=1)
    with pytest.raises(NearLatticeError):
        green_omega([1e-8, 0, 0], [0.5, 0.5, 0.5], s)


def test_conjugate_convention_differs_but_keeps_reciprocity_broken():
    a, b = _system(L=1, seed=2), _system(L=1, seed=2, conjugate=True)
    x, y = np.array([0.3, 0.4, 0.1]), np.array([1.2, -0.6, 0.45])
    assert abs(green_omega(x, y, a) - green_omega(x, y, b)) > 1e-6
    assert abs(green_omega(x, y, b) - green_omega(y, x, b)) > 1e-8


def test_analytic_in_z():
    # Cauchy-Riemann in z away from the real axis
    cfg = sample(DisorderSpec(), LatticeWindow(1), 5)
    x, y = np.array([0.3, 0.1, 0.2]), np.array([1.3, 0.6, -0.4])
    z0, h = complex(15.0, 0.8), 1e-5
    f = lambda z: green_omega(x, y, assemble_gamma(cfg, z))   # noqa: E731
    d_re = (f(z0 + h) - f(z0 - h)) / (2 * h)
    d_im = (f(z0 + 1j * h) - f(z0 - 1j * h)) / (2j * h)
    assert abs(d_re - d_im) <= 1e-6 * abs(d_re)


def test_boundary_condition():
    one = assemble_gamma(constant_config(LatticeWindow(0), -1.2), EnergyPoint(14.8, 0.5))
    assert boundary_condition_residual((0, 0, 0), (1.7, 0.4, 0.3), one) < 1e-6
    s = _system(L=1, seed=6)
    res = [boundary_condition_residual((1, 0, -1), (-1.3, 0.4, 0.6), s, r) for r in (4e-3, 1e-3)]
    assert res[1] < res[0] and res[1] < 1e-5
    free = assemble_gamma(empty_config(LatticeWindow(1)), EnergyPoint(14.8, 0.5))
    q, _ = singular_expansion((0, 0, 0), (1.5, 0.2, 0.3), free)
    assert abs(q) < 1e-8


def test_cell_rule_integrates_reciprocal_distance():
    nodes, w = cell_rule(6)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    # ∫_{[-1/2,1/2]^3} dx/|x|, closed form
    exact = 3 * math.log((math.sqrt(3) + 1) / (math.sqrt(3) - 1)) - math.pi / 2
    assert w @ (1 / np.linalg.norm(nodes, axis=1)) == pytest.approx(exact, rel=1e-8)


def test_cell_average_against_tensor_oracle():
    z = complex(1, 1)
    free = assemble_gamma(empty_config(LatticeWindow(1)), z)
    got = cell_averaged_green((0, 0, 0), (2, 0, 0), free)
    x, w = np.polynomial.legendre.leggauss(6)
    x, w = x / 2, w / 2
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), -1).reshape(-1, 3)
    wg = np.einsum("i,j,k->ijk", w, w, w).ravel()
    oracle = wg @ np.abs(free_green(g[:, None], g[None] + [2, 0, 0], z)) @ wg
    assert got.value == pytest.approx(oracle, rel=1e-2)
    far = cell_averaged_green((0, 0, 0), (4, 0, 0), free)
    assert far.value < got.value
    tau = principal_sqrt(z).imag
    assert got.value <= math.exp(-tau * (2 - math.sqrt(3))) * (2 * math.pi * math.exp(tau / 2)) ** 2
    with pytest.raises(ValueError):
        cell_averaged_green((1, 0, 0), (1, 0, 0), free)
