import math

import numpy as np
import pytest

from deltalab.decay import (combes_thomas_fit, conjugation_diagnostic, convolution_decay,
                            decaying_kernel, free_green_cell_bounds, gamma_mu_star,
                            inverse_decay_check, lattice_sum, max_conjugation_diagnostic,
                            mu_star, site_distances, synthetic_decay_matrix,
                            verify_offdiag_decay)
from deltalab.disorder import DisorderSpec, empty_config, sample
from deltalab.green import EnergyPoint, assemble_gamma
from deltalab.lattice import LatticeWindow


def _brute_sum(a, d, power, R, norm="l2"):
    g = np.arange(-R, R + 1)
    pts = np.stack(np.meshgrid(*[g] * d, indexing="ij"), -1).reshape(-1, d)
    r = np.linalg.norm(pts, axis=1) if norm == "l2" else np.abs(pts).sum(1)
    return float(np.sum(r ** power * np.exp(-a * r)))


@pytest.mark.parametrize("a,d,power", [(0.5, 1, 1), (1.0, 1, 0), (0.5, 3, 0), (1.5, 3, 1), (0.8, 2, 1)])
def test_lattice_sum_matches_brute_force(a, d, power):
    upper, tail = lattice_sum(a, d, power)
    R = {1: 400, 2: 120, 3: 70}[d]
    brute = _brute_sum(a, d, power, R)
    assert brute <= upper + 1e-9
    assert upper - brute <= tail + 1e-9


def test_lattice_sum_closed_form_d1():
    q = math.exp(-0.5)
    assert lattice_sum(0.5, 1, 1)[0] == pytest.approx(2 * q / (1 - q) ** 2, abs=1e-9)
    assert lattice_sum(0.5, 1, 1, norm="l1")[0] == pytest.approx(7.8353961780, abs=1e-9)
    with pytest.raises(ValueError):
        lattice_sum(0.0)


def test_mu_star_examples():
    assert mu_star(1, 20, 1, d=1) == 10
    assert mu_star(1, 1, 1, d=1) == pytest.approx(0.0639, abs=1e-4)
    q = math.exp(-0.5)
    assert mu_star(1, 1, 1, d=1) == pytest.approx((1 - q) ** 2 / (4 * q), abs=1e-10)
    assert mu_star(2, 1, 1, d=1) == pytest.approx(mu_star(1, 1, 1, d=1) / 2)
    with pytest.raises(ValueError):
        mu_star(0, 1, 1)


def test_verify_offdiag_decay():
    dist = site_distances(LatticeWindow(2).sites)
    A = np.exp(-dist)
    assert verify_offdiag_decay(A, dist, 1, 1)
    assert not verify_offdiag_decay(A, dist, 1, 1.5)
    s = assemble_gamma(sample(DisorderSpec(), LatticeWindow(2), 1), EnergyPoint(14.8, 0.5))
    assert verify_offdiag_decay(s.matrix, site_distances(s.sites), 1 / (4 * math.pi), s.k.imag)


def test_inverse_decay_neumann_oracle():
    w = LatticeWindow(3, 1)
    dist = site_distances(w.sites)
    A = np.eye(len(w)) + 0.01 * (dist == 1)
    # Neumann series oracle: |A^-1 - I| <= sum_k (0.01 * 2)^k
    rho = 1 / (1 - 0.02)
    rep = inverse_decay_check(A, rho, mu_star(rho, 1.0, 0.01, d=1), dist)
    assert rep.passed and rep.worst_ratio < 0.6
    inv = np.linalg.inv(A)
    assert np.max(np.abs(inv - np.eye(len(w)))) <= 0.02 / 0.98
    D = np.diag(np.linspace(1, 2, len(w)))
    assert inverse_decay_check(D, 1.0, 0.3, dist).passed
    with pytest.raises(ValueError):
        inverse_decay_check(D, 0.5, 0.3, dist)


def test_gamma_inverse_decay_and_contraction():
    for seed in range(3):
        s = assemble_gamma(sample(DisorderSpec(), LatticeWindow(2), seed), EnergyPoint(19.74, 0.5))
        dist = site_distances(s.sites)
        mu = gamma_mu_star(s)
        assert inverse_decay_check(s.matrix, s.inverse_norm, mu, dist).passed
        assert max_conjugation_diagnostic(s.matrix, mu, s.inverse_norm, dist) <= 0.5


def test_conjugation_diagnostic_monotone():
    s = assemble_gamma(sample(DisorderSpec(), LatticeWindow(1), 2), EnergyPoint(14.8, 0.5))
    dist = site_distances(s.sites)
    rho = s.inverse_norm
    assert conjugation_diagnostic(s.matrix, 0, 0.0, rho, dist) == 0
    vals = [conjugation_diagnostic(s.matrix, 13, mu, rho, dist)
            for mu in np.linspace(0, s.k.imag / 2, 8)]
    assert np.all(np.diff(vals) > 0)


def test_convolution_examples():
    dist = site_distances(LatticeWindow(4).sites)
    I = np.eye(dist.shape[0])
    assert convolution_decay(I, I, 1.0, 1.0, dist).max_ratio == 1
    Z = np.zeros_like(I)
    assert convolution_decay(Z, Z, 1.0, 1.0, dist).max_ratio == 0
    A = np.exp(-dist)
    rep = convolution_decay(A, A, 1.0, 1.0, dist)
    assert rep.passed
    brute = np.max(np.abs(A @ A) * np.exp(0.5 * dist))
    assert rep.max_ratio == pytest.approx(brute)


def test_free_green_cell_bounds():
    rep = free_green_cell_bounds((3, 0, 0), (0, 0, 0), complex(1, 1))
    assert rep.pointwise and rep.averaged
    assert rep.averaged_value < rep.averaged_bound
    tiny = free_green_cell_bounds((1, 1, 0), (0, 0, 0), complex(9, 1e-9))
    assert np.isfinite(tiny.averaged_bound) and tiny.averaged


def test_synthetic_matrices():
    w = LatticeWindow(2)
    K = decaying_kernel(w, 1.0, 0.5, seed=4)
    dist = site_distances(w.sites)
    assert verify_offdiag_decay(K, dist, 0.5, 1.0)
    A = synthetic_decay_matrix(w, 1.0, 0.5, seed=4)
    np.testing.assert_array_equal(A, synthetic_decay_matrix(w, 1.0, 0.5, seed=4))
    rho = np.linalg.norm(np.linalg.inv(A), 2)
    assert inverse_decay_check(A, rho, mu_star(rho, 1.0, 0.5), dist).passed


@pytest.mark.slow
def test_combes_thomas_free_fit():
    s = assemble_gamma(empty_config(LatticeWindow(0)), EnergyPoint(19.74, 0.5))
    fit = combes_thomas_fit(s, rmax=5, order=2, check_stride=30)
    assert fit.fit.rate > 0
    assert fit.fit.rate >= fit.reference_rate
