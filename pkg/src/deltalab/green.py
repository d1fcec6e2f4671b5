"""Γ-matrix assembly and the Green's function of the point-interaction operator.

For couplings ``omega`` on the active sites Λ and spectral parameter ``z``
the resolvent kernel is

    G(x, y) = G0(x, y) + sum_{i,j in Λ} G0(x, i) [Γ^{-1}]_{ij} G0(j, y),

with ``Γ_jj = 1/omega_j - i sqrt(z)/(4π)`` and ``Γ_ij = -G0(i, j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
import io
import math

import numpy as np

from .lattice import dist_to_lattice
from .numerics import (LUFactorization, QuadratureError, QuadratureSpec,
                       gauss_legendre, hermitian_eigenvalues, operator_norm,
                       principal_sqrt)

__all__ = [
    "EnergyPoint", "GammaSystem", "CoincidentPointsError", "NearLatticeError",
    "FitError", "free_green", "assemble_gamma", "dissipativity_certificate",
    "green_omega", "interaction_term", "green_matrix", "cell_averaged_green",
    "cell_rule", "singular_expansion", "boundary_condition_residual",
    "c_num", "c_parseval", "c_printed", "kernel_csv", "NEAR_LATTICE",
]

NEAR_LATTICE = 1e-6
COINCIDENT = 1e-12
FOUR_PI = 4.0 * math.pi


class CoincidentPointsError(ValueError):
    pass


class NearLatticeError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyPoint:
    """Spectral parameter ``z = E + i kappa`` with ``kappa > 0``."""
    E: float
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    @property
    def z(self):
        return complex(self.E, self.kappa)

    @property
    def k(self):
        return principal_sqrt(self.z)

    @property
    def e(self):
        return self.k / FOUR_PI

    @property
    def tau(self):
        return self.k.imag


def _as_complex(z):
    return z.z if isinstance(z, EnergyPoint) else complex(z)


def _g0_of_r(r, k):
    return np.exp(1j * k * r) / (FOUR_PI * r)


def free_green(x, y, z):
    """Free kernel ``exp(i sqrt(z) r) / (4π r)`` with ``r = |x - y|``.

    Broadcasts over leading axes of `x` and `y` (last axis of length 3).
    """
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    if np.any(r <= COINCIDENT):
        raise CoincidentPointsError("free Green's function evaluated at coincident points")
    g = _g0_of_r(r, principal_sqrt(_as_complex(z)))
    return complex(g) if np.ndim(g) == 0 else g


def _pairwise_g0(X, Y, k):
    r = np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1))
    if np.any(r <= COINCIDENT):
        raise CoincidentPointsError("free Green's function evaluated at coincident points")
    return _g0_of_r(r, k)


def c_num(E, kappa):
    """Dissipativity constant as specified: ``(2π)^3 / (max(E², (3π²-E)²) + κ²)``."""
    return (2 * math.pi) ** 3 / (max(E ** 2, (3 * math.pi ** 2 - E) ** 2) + kappa ** 2)


def c_parseval(E, kappa):
    """The same infimum with the lattice Fourier series normalized by Parseval.

    ``-Im Γ`` is the Toeplitz matrix of the symbol ``(2π)^{-3} sum_k κ/|...|²``
    over dual-lattice translates; dropping all but one translate and taking
    the infimum over ``|p|² in [0, 3π²]`` leaves no ``(2π)^3`` factor.
    """
    return 1.0 / (max(E ** 2, (3 * math.pi ** 2 - E) ** 2) + kappa ** 2)


def c_printed(E):
    """Printed constant ``(2π)^3/(E - π²)^2``; reported, never asserted."""
    return (2 * math.pi) ** 3 / (E - math.pi ** 2) ** 2


@dataclass(frozen=True)
class Certificate:
    lambda_min: float
    c_num: float
    c_parseval: float
    kappa: float

    @property
    def passed(self):
        return self.lambda_min >= self.c_num * self.kappa

    @property
    def passed_parseval(self):
        return self.lambda_min >= self.c_parseval * self.kappa


@dataclass(frozen=True, eq=False)
class GammaSystem:
    """Γ(z, ω) restricted to the active sites, with a cached LU factorization.

    ``conjugate=True`` switches :meth:`interaction_factors` to the literal
    form with the first free-kernel factor complex conjugated.
    """
    config: object
    z: complex
    matrix: np.ndarray = field(repr=False)
    sites: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)
    conjugate: bool = False

    @property
    def k(self):
        return principal_sqrt(self.z)

    @property
    def size(self):
        return self.sites.shape[0]

    @cached_property
    def lu(self):
        return LUFactorization(self.matrix)

    def solve(self, B):
        if self.size == 0:
            return np.zeros((0,) + np.shape(B)[1:], dtype=complex)
        return self.lu.solve(B)

    @cached_property
    def inverse(self):
        inv = self.solve(np.eye(self.size, dtype=complex))
        inv.flags.writeable = False
        return inv

    @cached_property
    def lambda_min(self):
        if self.size == 0:
            return math.inf
        return float(hermitian_eigenvalues(-self.matrix.imag)[0])

    @cached_property
    def inverse_norm(self):
        return operator_norm(self.inverse)

    def certificate(self):
        return dissipativity_certificate(self)

    def interaction_factors(self, X, Y):
        """``U = G0(X, Λ)`` and ``V = Γ^{-1} G0(Λ, Y)`` so that the interaction is ``U @ V``."""
        X, Y = _check_points(X), _check_points(Y)
        U = _pairwise_g0(X, self.sites, self.k)
        if self.conjugate:
            U = U.conj()
        V = self.solve(_pairwise_g0(self.sites, Y, self.k))
        return U, V


def _check_points(P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[-1] != 3:
        raise ValueError("points must have three coordinates")
    if np.any(dist_to_lattice(P) <= NEAR_LATTICE):
        raise NearLatticeError("evaluation point within 1e-6 of the lattice")
    return P


def assemble_gamma(config, z, conjugate=False):
    """Assemble Γ(z, ω) on the active set of `config`.

    Parameters
    ----------
    config : DisorderConfig
    z : EnergyPoint or complex
        Complex values are accepted for symmetry and analyticity studies;
        the dissipativity certificate is only meaningful for ``Im z > 0``.
    conjugate : bool
        Use the conjugated first factor in Green's function evaluations.
    """
    z = _as_complex(z)
    k = principal_sqrt(z)
    sites = config.active_sites.astype(float)
    omega = config.active_omega
    n = sites.shape[0]
    if n:
        r = np.sqrt(((sites[:, None, :] - sites[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(r, 1.0)
        M = -_g0_of_r(r, k)
        np.fill_diagonal(M, 1.0 / omega - 1j * k / FOUR_PI)
    else:
        M = np.zeros((0, 0), dtype=complex)
    M.flags.writeable = False
    return GammaSystem(config, z, M, sites, omega, conjugate)


def dissipativity_certificate(system):
    """Smallest eigenvalue of ``-Im Γ`` and the lower-bound constants.

    Returns a :class:`Certificate`; ``passed`` tests ``lambda_min >= c_num κ``
    and ``passed_parseval`` the normalized constant.
    """
    E, kappa = system.z.real, system.z.imag
    return Certificate(system.lambda_min, c_num(E, kappa), c_parseval(E, kappa), kappa)


def interaction_term(x, y, system):
    """Interaction part of the kernel at point pairs ``(x[i], y[i])``."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if system.size == 0:
        _check_points(x), _check_points(y)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape)[0], dtype=complex)
    else:
        U, V = system.interaction_factors(x, y)
        out = np.einsum("ij,ji->i", U, V) if U.shape[0] == V.shape[1] else (U @ V).ravel()
    return complex(out[0]) if out.size == 1 else out


def green_omega(x, y, system):
    """Full kernel ``G_ω(x, y; z)`` at point pairs ``(x[i], y[i])``."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    g = free_green(x, y, system.z) + interaction_term(x, y, system)
    return complex(np.ravel(g)[0]) if np.size(g) == 1 else g


def green_matrix(X, Y, system, chunk=1024):
    """Kernel on the product grid ``X × Y`` as an ``(len(X), len(Y))`` array."""
    X, Y = _check_points(X), _check_points(Y)
    out = np.empty((X.shape[0], Y.shape[0]), dtype=complex)
    V = None
    if system.size:
        V = system.solve(_pairwise_g0(system.sites, Y, system.k))
    for s in range(0, X.shape[0], chunk):
        Xb = X[s:s + chunk]
        block = _pairwise_g0(Xb, Y, system.k)
        if V is not None:
            U = _pairwise_g0(Xb, system.sites, system.k)
            block += (U.conj() if system.conjugate else U) @ V
        out[s:s + chunk] = block
    return out


# --------------------------------------------------------------------------
# cell averages

@lru_cache(maxsize=16)
def cell_rule(order):
    """Quadrature for the unit cube centered at the origin, exact on ``1/|x|``-type terms.

    Each of the eight octants is split into three pyramids with apex at the
    center; the Duffy map ``(t, u, v) -> h t (1, u, v)`` (up to a coordinate
    permutation) has Jacobian ``h^3 t^2`` which cancels the point singularity.
    Returns nodes of shape ``(24 order^3, 3)`` and weights summing to 1.
    """
    x, w = gauss_legendre(order, 0.0, 1.0)
    T, U, V = np.meshgrid(x, x, x, indexing="ij")
    W = np.einsum("i,j,k->ijk", w * x ** 2, w, w).ravel()
    h = 0.5
    base = h * np.stack([T.ravel(), (T * U).ravel(), (T * V).ravel()], axis=-1)
    nodes, weights = [], []
    for order_ in ((0, 1, 2), (1, 0, 2), (1, 2, 0)):
        p = base[:, order_]  # the largest coordinate goes to axis 0, 1, 2 in turn
        for signs in np.array(np.meshgrid([1, -1], [1, -1], [1, -1], indexing="ij")).reshape(3, -1).T:
            nodes.append(p * signs)
            weights.append(W * h ** 3)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def _cell_average_abs(m, n, system, order, chunk):
    nodes, w = cell_rule(order)
    X = nodes + np.asarray(m, float)
    Y = nodes + np.asarray(n, float)
    total = 0.0
    V = None
    if system.size:
        V = system.solve(_pairwise_g0(system.sites, Y, system.k))
    for s in range(0, X.shape[0], chunk):
        Xb = X[s:s + chunk]
        block = _pairwise_g0(Xb, Y, system.k)
        if V is not None:
            U = _pairwise_g0(Xb, system.sites, system.k)
            block += (U.conj() if system.conjugate else U) @ V
        total += w[s:s + chunk] @ np.abs(block) @ w
    return float(total)


@dataclass(frozen=True)
class CellAverage:
    value: float
    error: float
    order: int


def cell_averaged_green(m, n, system, spec=QuadratureSpec(nodes=4, rtol=2e-2, tol=1e-300),
                        chunk=512):
    """``∬_{C0×C0} |G_ω(x + m, y + n)| dx dy`` with a refinement error estimate.

    The Duffy cell rule of order ``spec.nodes`` is compared with order
    ``spec.nodes + 1``; the finer value is returned.  Up to
    ``spec.max_doublings`` further order increments are tried before giving up.
    """
    m, n = np.asarray(m), np.asarray(n)
    if np.array_equal(m, n):
        raise ValueError("cells must differ")
    order = spec.nodes
    prev = _cell_average_abs(m, n, system, order, chunk)
    for _ in range(spec.max_doublings):
        order += 1
        cur = _cell_average_abs(m, n, system, order, chunk)
        err = abs(cur - prev)
        if err <= max(spec.tol, spec.rtol * cur):
            return CellAverage(cur, err, order)
        prev = cur
    raise QuadratureError(f"cell average did not converge (last change {err:.3e})")


# --------------------------------------------------------------------------
# behaviour at a site

_AXES = np.vstack([np.eye(3), -np.eye(3)])


def singular_expansion(j, y, system, radius=1e-3, samples=6):
    """Fit ``G_ω(x, y) ≈ q / (4π|x - j|) + r + O(|x - j|)`` for ``x`` near site `j`.

    Points sit on the six axis directions at radii in ``[radius/2, radius]``;
    opposite directions cancel the gradient of the regular part, and extra
    ``|x - j|`` and ``|x - j|^2`` columns absorb the isotropic remainder.
    Returns ``(q, r)``.
    """
    j = np.asarray(j, float)
    radii = np.linspace(radius / 2, radius, samples)
    X = (j + radii[:, None, None] * _AXES[None]).reshape(-1, 3)
    Y = np.broadcast_to(np.asarray(y, float), X.shape)
    g = green_omega(X, Y, system).reshape(samples, len(_AXES)).mean(axis=1)
    A = np.stack([1.0 / (FOUR_PI * radii), np.ones_like(radii), radii, radii ** 2],
                 axis=-1).astype(complex)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    resid = np.linalg.norm(A @ coef - g)
    if not np.all(np.isfinite(coef)) or resid > 1e-2 * np.linalg.norm(g) + 1e-12:
        raise FitError("could not isolate the singular coefficient")
    return complex(coef[0]), complex(coef[1])


def boundary_condition_residual(j, y, system, radius=1e-3):
    """Relative mismatch ``|r - q/ω_j| / (|r| + |q/ω_j|)`` at an active site.

    Expanding the kernel at ``x -> j`` and using row ``j`` of ``Γ c = G0(Λ, y)``
    gives ``q = c_j`` and ``r = c_j / ω_j``: this is the δ-coupling condition.
    """
    j = np.asarray(j, float)
    hit = np.flatnonzero(np.all(system.sites == j, axis=1))
    if hit.size == 0:
        raise ValueError("site is not in the active set")
    if np.linalg.norm(j - np.asarray(y, float)) <= 1:
        raise ValueError("y must be farther than 1 from the site")
    q, r = singular_expansion(j, y, system, radius)
    target = q / system.omega[hit[0]]
    denom = abs(r) + abs(target)
    return 0.0 if denom == 0 else abs(r - target) / denom


def kernel_csv(X, Y, system):
    """CSV text with columns ``x1,x2,x3,y1,y2,y3,re,im,abs,dist`` for pairs."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    g = np.atleast_1d(green_omega(X, Y, system))
    dist = np.linalg.norm(X - Y, axis=-1)
    buf = io.StringIO()
    buf.write("x1,x2,x3,y1,y2,y3,re,im,abs,dist\n")
    for xi, yi, gi, di in zip(X, Y, g, dist):
        vals = [*xi, *yi, gi.real, gi.imag, abs(gi), di]
        buf.write(",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue()
