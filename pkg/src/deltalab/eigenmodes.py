"""Bounded generalized eigenfunctions above π², their cutoffs and commutators.

For ``E = π² + eps`` the function

    psi_E(x) = sin(π x1) psi0(x2, x3),
    psi0(u, v) = ∫ exp(i s u + i v sqrt(eps - s²)) rho(s) ds,

solves ``-Δ psi_E = E psi_E`` and vanishes on Z³.  Multiplying by the
cutoff ``chi(x1/L) chi(x2/L)`` gives functions whose commutator with the
Laplacian has an L-independent norm, provided ``psi0(u, .)`` is square
integrable in ``v``.  That requires ``rho`` to vanish near ``s = 0``: at
``s = 0`` the phase ``v sqrt(eps - s²)`` is stationary and the ``v``-slices
decay only like ``|v|^{-1/2}``.  The ``"split"`` profile is built for this.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate as sp_integrate

from .numerics import QuadratureError, gauss_legendre

__all__ = [
    "ModeProfile", "CutoffSpec", "GeneralizedMode", "chi", "sinpi", "cospi",
    "psi0", "psi0_derivatives", "psi_E", "psi_L", "commutator_C",
    "CommutatorNorms", "commutator_norms", "slice_norm_sq", "overlap_ball",
    "overlap_lower_bound", "WeightedNorm", "weighted_mode_norm",
    "weighted_norm_bound", "admissible_radius", "laplacian_fd",
    "CHI_D1_MAX", "CHI_D2_MAX", "X0",
]

CHI_D1_MAX = 15.0 / 8.0
CHI_D2_MAX = 10.0 / math.sqrt(3.0)
X0 = np.array([0.5, 0.0, 0.0])
_SPLIT = (0.2, 0.45)   # support of the split profile in units of sqrt(eps)
_BUMP_HALF = 0.45


def sinpi(x):
    """``sin(π x)`` that is exactly zero at integers."""
    x = np.asarray(x, dtype=float)
    n = np.rint(x)
    return np.sin(math.pi * (x - n)) * (1.0 - 2.0 * np.mod(n, 2))


def cospi(x):
    x = np.asarray(x, dtype=float)
    n = np.rint(x)
    return np.cos(math.pi * (x - n)) * (1.0 - 2.0 * np.mod(n, 2))


def _bump(t):
    """C-infinity bump ``exp(-1/(1 - t²))`` on (-1, 1)."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    out = np.zeros_like(t)
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class ModeProfile:
    """Density ``rho`` on ``[-sqrt(eps)/2, sqrt(eps)/2]`` with unit mass.

    ``shape`` is one of

    * ``"uniform"``: height ``1/sqrt(eps)`` on the whole interval;
    * ``"bump"``: smooth bump on ``|s| < 0.45 sqrt(eps)``;
    * ``"split"``: smooth bump on ``0.2 <= |s|/sqrt(eps) <= 0.45``, mirrored,
      so that ``rho`` vanishes near 0.

    The mass is normalized with the same quadrature used for evaluation,
    so ``psi0(0, 0) == 1`` to rounding.
    """
    eps: float
    shape: str = "uniform"
    nodes: int = 24
    panels: int = 4
    s: np.ndarray = field(init=False, repr=False, compare=False)
    w: np.ndarray = field(init=False, repr=False, compare=False)
    pieces: tuple = field(init=False, repr=False, compare=False)
    mass: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        r = math.sqrt(self.eps)
        if self.shape == "uniform":
            pieces = ((-r / 2, r / 2),)
        elif self.shape == "bump":
            pieces = ((-_BUMP_HALF * r, _BUMP_HALF * r),)
        elif self.shape == "split":
            lo, hi = _SPLIT[0] * r, _SPLIT[1] * r
            pieces = ((-hi, -lo), (lo, hi))
        else:
            raise ValueError(f"unknown profile shape {self.shape!r}")
        object.__setattr__(self, "pieces", pieces)
        x, w = self.plain_rule(1)
        object.__setattr__(self, "mass", float(np.sum(w * self._raw_density(x))))
        s, w = self._rule(1)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "w", w)

    @property
    def L2_along_v(self):
        """Whether ``v -> psi0(u, v)`` is square integrable."""
        return self.shape == "split"

    def _raw_density(self, s):
        s = np.asarray(s, dtype=float)
        r = math.sqrt(self.eps)
        if self.shape == "uniform":
            return np.where(np.abs(s) <= r / 2, 1.0, 0.0)
        if self.shape == "bump":
            return _bump(s / (_BUMP_HALF * r))
        lo, hi = _SPLIT[0] * r, _SPLIT[1] * r
        return _bump((2 * np.abs(s) - lo - hi) / (hi - lo))

    def plain_rule(self, refine=1, positive=False):
        """Gauss-Legendre nodes and ``ds`` weights covering the support."""
        xs, ws = [], []
        for a, b in self.pieces:
            if positive:
                if b <= 0:
                    continue
                a = max(a, 0.0)
            x, w = gauss_legendre(self.nodes, a, b, self.panels * refine)
            xs.append(x)
            ws.append(w)
        return np.concatenate(xs), np.concatenate(ws)

    def _rule(self, refine):
        s, w = self.plain_rule(refine)
        return s, w * self.density(s)

    def density(self, s):
        """Normalized ``rho(s)``; the mass comes from the quadrature rule."""
        return self._raw_density(s) / self.mass

    def beta(self, s):
        return np.sqrt(self.eps - np.asarray(s) ** 2)

    def rule_for_span(self, span):
        """Nodes and ``rho``-weights refined so a phase of slope `span` is resolved."""
        width = max(b - a for a, b in self.pieces)
        refine = max(1, int(math.ceil(span * width / (8.0 * self.panels))))
        if refine == 1:
            return self.s, self.w
        return self._rule(refine)


@dataclass(frozen=True)
class CutoffSpec:
    """``chi_L(x) = chi(x1/L) chi(x2/L)`` with a quintic smoothstep transition."""
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")


@dataclass(frozen=True)
class GeneralizedMode:
    profile: ModeProfile
    cutoff: CutoffSpec | None = None

    @property
    def eps(self):
        return self.profile.eps

    @property
    def E(self):
        return math.pi ** 2 + self.profile.eps

    @classmethod
    def at_energy(cls, E, shape="uniform", L=None, **kw):
        if not E > math.pi ** 2:
            raise ValueError("energy must exceed π²")
        cut = CutoffSpec(L) if L is not None else None
        return cls(ModeProfile(E - math.pi ** 2, shape, **kw), cut)


def chi(x, derivative=0):
    """Cutoff profile: 1 on [-1, 1], 0 outside [-2, 2], C² quintic in between."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    t = np.clip(a - 1.0, 0.0, 1.0)
    mid = (a > 1) & (a < 2)
    if derivative == 0:
        return np.where(a <= 1, 1.0, np.where(mid, 1.0 - t ** 3 * (10 - 15 * t + 6 * t * t), 0.0))
    if derivative == 1:
        return np.where(mid, -np.sign(x) * 30 * t * t * (1 - t) ** 2, 0.0)
    if derivative == 2:
        return np.where(mid, -60 * t * (1 - t) * (1 - 2 * t), 0.0)
    raise ValueError("only derivatives 0, 1, 2 are available")


def _oscillatory(u, v, profile, multipliers, chunk=2048):
    """``∫ exp(i s u + i v beta(s)) rho(s) m(s) ds`` for each multiplier ``m``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    shape = u.shape
    u, v = u.ravel(), v.ravel()
    out = np.empty((len(multipliers), u.size), dtype=complex)
    order = np.argsort(np.abs(u) + np.abs(v) / math.sqrt(3), kind="stable")
    for start in range(0, u.size, chunk):
        sel = order[start:start + chunk]
        span = float(np.max(np.abs(u[sel]) + np.abs(v[sel]) / math.sqrt(3))) if sel.size else 0.0
        s, w = profile.rule_for_span(span)
        beta = profile.beta(s)
        phase = np.exp(1j * (np.outer(u[sel], s) + np.outer(v[sel], beta)))
        for k, m in enumerate(multipliers):
            out[k, sel] = phase @ (w * m(s, beta))
    return [o.reshape(shape) for o in out]


_ONE = lambda s, b: np.ones_like(s)  # noqa: E731
_IS = lambda s, b: 1j * s  # noqa: E731
_IB = lambda s, b: 1j * b  # noqa: E731


def psi0(u, v, profile):
    """Plane-wave superposition ``∫ exp(i s u + i v sqrt(eps - s²)) rho(s) ds``."""
    (val,) = _oscillatory(u, v, profile, [_ONE])
    return val if val.ndim else complex(val)


def psi0_derivatives(u, v, profile):
    """``(psi0, d/du psi0, d/dv psi0)`` by differentiating under the integral."""
    return tuple(_oscillatory(u, v, profile, [_ONE, _IS, _IB]))


def _mode_of(mode):
    return mode if isinstance(mode, GeneralizedMode) else GeneralizedMode(mode)


def psi_E(x, mode):
    """``sin(π x1) psi0(x2, x3)`` at points of shape ``(..., 3)``."""
    mode = _mode_of(mode)
    x = np.asarray(x, dtype=float)
    return sinpi(x[..., 0]) * psi0(x[..., 1], x[..., 2], mode.profile)


def _cut(mode):
    if mode.cutoff is None:
        raise ValueError("mode has no cutoff")
    return mode.cutoff.L


def psi_L(x, mode):
    """Cut-off mode ``chi(x1/L) chi(x2/L) psi_E(x)``."""
    L = _cut(mode)
    x = np.asarray(x, dtype=float)
    return chi(x[..., 0] / L) * chi(x[..., 1] / L) * psi_E(x, mode)


def commutator_C(x, mode):
    """``-2 ∇chi_L · ∇psi_E - (Δ chi_L) psi_E`` with exact derivatives."""
    L = _cut(mode)
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    c1, c2 = chi(x1 / L), chi(x2 / L)
    d1, d2 = chi(x1 / L, 1) / L, chi(x2 / L, 1) / L
    e1, e2 = chi(x1 / L, 2) / L ** 2, chi(x2 / L, 2) / L ** 2
    p, pu, _ = psi0_derivatives(x2, x3, mode.profile)
    s, c = sinpi(x1), cospi(x1)
    grad = d1 * c2 * math.pi * c * p + c1 * d2 * s * pu
    lap = (e1 * c2 + c1 * e2) * s * p
    return -2.0 * grad - lap


def laplacian_fd(f, x, h):
    """Seven-point finite-difference Laplacian of a vectorized field."""
    x = np.asarray(x, dtype=float)
    acc = -6.0 * f(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        acc = acc + f(x + e) + f(x - e)
    return acc / (h * h)


# --------------------------------------------------------------------------
# x3-integrals via Plancherel

def _slice_gram(profile, a, b, xi_weights, refine=1):
    """``∫ du W(u) ∫ dv h_a(u, v) conj(h_b(u, v))`` with ``h_a = ∫ e^{i(su + v beta)} rho a ds``.

    `a` and `b` are multiplier functions of ``s``; `xi_weights(xi)` returns
    ``∫ W(u) exp(i xi u) du``.  On ``s > 0`` the map ``s -> beta(s)`` is a
    change of variables, so Plancherel in ``v`` gives

        2π ∫_{s>0} (beta/s) [rho(s)² a b̄ (s) W^(0) + rho(-s)² a b̄ (-s) W^(0)
                             + rho(s) rho(-s) (a(s) b̄(-s) W^(2s) + a(-s) b̄(s) W^(-2s))] ds.
    """
    s, ds = profile.plain_rule(refine, positive=True)
    rp, rm = profile.density(s), profile.density(-s)
    jac = profile.beta(s) / s
    W0 = xi_weights(np.zeros(1))[0]
    Wp, Wm = xi_weights(2 * s), xi_weights(-2 * s)
    term = (rp ** 2 * a(s) * np.conj(b(s)) + rm ** 2 * a(-s) * np.conj(b(-s))) * W0
    term = term + rp * rm * (a(s) * np.conj(b(-s)) * Wp + a(-s) * np.conj(b(s)) * Wm)
    return 2 * math.pi * np.sum(ds * jac * term)


def _check_symmetric(profile):
    if not profile.L2_along_v:
        raise ValueError(
            f"profile {profile.shape!r} is not square integrable along x3; "
            "use the 'split' profile for norms over x3")


def slice_norm_sq(u, profile):
    """``∫ |psi0(u, v)|² dv`` (finite only for profiles vanishing near 0)."""
    _check_symmetric(profile)
    u = float(u)
    return float(np.real(_slice_gram(profile, _ONE_S, _ONE_S,
                                     lambda xi: np.exp(1j * np.asarray(xi) * u))))


_ONE_S = lambda s: np.ones_like(np.asarray(s, dtype=float))  # noqa: E731
_IS_S = lambda s: 1j * np.asarray(s, dtype=float)  # noqa: E731


@dataclass(frozen=True)
class CommutatorNorms:
    L: float
    A1: float
    A2: float
    A0: float
    psiL_norm_sq: float
    error: float


def _cutoff_pieces(L, kind):
    """Breakpoints of the support of ``chi``-type factors on the real line."""
    if kind == "full":
        return [(-2 * L, -L), (-L, L), (L, 2 * L)]
    return [(-2 * L, -L), (L, 2 * L)]


def _line_rule(pieces, density, nodes=16):
    xs, ws = [], []
    for a, b in pieces:
        panels = max(1, int(math.ceil((b - a) * density)))
        x, w = gauss_legendre(nodes, a, b, panels)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _commutator_terms(L):
    """``(F_k, G_k, h_k)`` with ``C = sum_k F_k(x1) G_k(x2) h_k(x2, x3)``."""
    return [
        (lambda x: -2 * math.pi * chi(x / L, 1) * cospi(x) / L, lambda y: chi(y / L), _ONE_S, "edge", "full"),
        (lambda x: -2 * chi(x / L) * sinpi(x), lambda y: chi(y / L, 1) / L, _IS_S, "full", "edge"),
        (lambda x: -chi(x / L, 2) * sinpi(x) / L ** 2, lambda y: chi(y / L), _ONE_S, "edge", "full"),
        (lambda x: -chi(x / L) * sinpi(x) / L ** 2, lambda y: chi(y / L, 2), _ONE_S, "full", "edge"),
    ]


def _gram_matrix(mode, density):
    L = _cut(mode)
    terms = _commutator_terms(L)
    x, wx = _line_rule(_cutoff_pieces(L, "full"), density)
    y, wy = _line_rule(_cutoff_pieces(L, "full"), density)
    F = np.array([t[0](x) for t in terms])
    G = np.array([t[1](y) for t in terms])
    n = len(terms)
    fx = np.einsum("kx,lx,x->kl", F, F, wx)
    gram = np.zeros((n, n), dtype=complex)
    for k in range(n):
        for l in range(k, n):
            prod = G[k] * G[l] * wy
            xiw = lambda xi, prod=prod: np.exp(1j * np.outer(xi, y)) @ prod
            g = _slice_gram(mode.profile, terms[k][2], terms[l][2], xiw)
            gram[k, l] = fx[k, l] * g
            gram[l, k] = np.conj(gram[k, l])
    # psi_L norm: ∫chi² sin² dx1 * ∫ chi² |psi0|² over x2, x3
    norm_x = np.sum(wx * chi(x / L) ** 2 * sinpi(x) ** 2)
    cy = chi(y / L) ** 2 * wy
    norm_y = _slice_gram(mode.profile, _ONE_S, _ONE_S, lambda xi: np.exp(1j * np.outer(xi, y)) @ cy)
    return gram, float(norm_x * norm_y.real)


def commutator_norms(mode, density=2.0, rtol=1e-6):
    """``A1 = ‖(Δchi_L) psi_E‖²``, ``A2 = ‖∇chi_L · ∇psi_E‖²`` and ``A0 = ‖C_{L;E}‖``.

    The x3-integrals are done exactly with Plancherel (see the module
    docstring for why the profile must vanish near 0); x1 and x2 use
    composite Gauss-Legendre rules with `density` panels per unit length,
    checked against a rule with twice as many panels.

    Returns
    -------
    CommutatorNorms
        Also carries ``psiL_norm_sq = ‖psi_{L,E}‖²`` and the refinement
        change of ``A0`` as ``error``.
    """
    mode = _mode_of(mode)
    _cut(mode)
    _check_symmetric(mode.profile)

    def evaluate(dens):
        gram, norm_sq = _gram_matrix(mode, dens)
        A1 = gram[2:, 2:].sum().real
        A2 = gram[:2, :2].sum().real / 4
        A0 = math.sqrt(max(gram.sum().real, 0.0))
        return A1, A2, A0, norm_sq

    coarse = evaluate(density)
    fine = evaluate(2 * density)
    err = abs(fine[2] - coarse[2])
    if err > rtol * max(fine[2], 1e-300):
        raise QuadratureError(f"commutator norm not converged (change {err:.3e})")
    return CommutatorNorms(_cut(mode), *fine, err)


# --------------------------------------------------------------------------
# ball overlaps, weighted norms, radii

def _ball_nodes(center, t, n):
    r, wr = gauss_legendre(n, 0.0, t)
    c, wc = gauss_legendre(n, -1.0, 1.0)
    p, wp = gauss_legendre(2 * n, 0.0, 2 * math.pi)
    R, C, P = np.meshgrid(r, c, p, indexing="ij")
    S = np.sqrt(1 - C ** 2)
    pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], -1).reshape(-1, 3) + center
    w = np.einsum("i,j,k->ijk", wr * r * r, wc, wp).ravel()
    return pts, w


def overlap_ball(t, mode, center=X0, nodes=16):
    """``<chi_{B_t(center)}, psi_E>`` by a spherical Gauss-Legendre rule."""
    if not 0 < t < 0.5:
        raise ValueError("radius must lie in (0, 1/2)")
    mode = _mode_of(mode)
    pts, w = _ball_nodes(np.asarray(center, float), t, nodes)
    return complex(np.sum(w * psi_E(pts, mode)))


def overlap_lower_bound(t):
    """``(sqrt2/2) |B_t| cos(1/2) = (2 sqrt2/3) π t³ cos(1/2)``."""
    return 2 * math.sqrt(2) / 3 * math.pi * t ** 3 * math.cos(0.5)


@dataclass(frozen=True)
class WeightedNorm:
    q: float
    value: float
    error: float
    tail: float
    radius: float
    bound: float

    @property
    def upper(self):
        return self.value + self.error + self.tail

    @property
    def passed(self):
        return self.upper <= self.bound


def weighted_norm_bound(q):
    return 4 * math.pi * q / (q - 3)


def _radial_tail(q, R):
    val, _ = sp_integrate.quad(lambda r: r * r * (1 + r * r) ** (-q / 2), R, np.inf,
                               epsabs=1e-13, epsrel=1e-10)
    return 4 * math.pi * val


def weighted_mode_norm(q, mode, radius=10.0, density=1.0, nodes=12, cutoff=False):
    """``‖phi_q^{-1/2} psi_E‖²`` over the ball of the given radius plus a tail bound.

    With ``cutoff=True`` the mode's ``chi_L`` factor is included, giving the
    norm of ``psi_{L,E}`` instead (the tail bound still applies).

    Since ``|psi_E|² = sin²(π x1) |psi0(x2, x3)|²``, the x1-integral over
    the chord of the ball depends only on ``r = |(x2, x3)|`` and is done
    first.  The disc integral uses Gauss-Legendre in ``r`` and the periodic
    trapezoid rule in angle, which is exact once the ring carries more
    points than twice the angular bandwidth ``2 sqrt(eps) r`` of
    ``|psi0|²``.
    The discarded exterior is bounded by ``4π ∫_R^∞ r² (1 + r²)^{-q/2} dr``
    using ``|psi_E| <= 1``.
    """
    if not q > 3:
        raise ValueError("q must exceed 3")
    mode = _mode_of(mode)
    R = float(radius)
    L = _cut(mode) if cutoff else None

    def disc(dens):
        r, wr = gauss_legendre(nodes, 0.0, R, int(math.ceil(R * dens)))
        wline = np.empty_like(r)
        for i, ri in enumerate(r):
            half = math.sqrt(max(R * R - ri * ri, 0.0))
            x, wx = gauss_legendre(nodes, -half, half, max(1, int(math.ceil(2 * half * dens))))
            cx = chi(x / L) ** 2 if L else 1.0
            wline[i] = np.sum(wx * cx * sinpi(x) ** 2 * (1 + x * x + ri * ri) ** (-q / 2))
        total = 0.0
        for i, ri in enumerate(r):
            m = 2 * int(math.ceil(2 * math.sqrt(mode.eps) * ri * dens)) + 16
            th = 2 * math.pi * (np.arange(m) + 0.5) / m   # periodic trapezoid
            u = ri * np.cos(th)
            vals = np.abs(psi0(u, ri * np.sin(th), mode.profile)) ** 2
            if L:
                vals = vals * chi(u / L) ** 2
            total += wr[i] * ri * wline[i] * (2 * math.pi / m) * np.sum(vals)
        return total

    coarse, fine = disc(density), disc(2 * density)
    tail = _radial_tail(q, R)
    return WeightedNorm(q, fine, abs(fine - coarse), tail, R, weighted_norm_bound(q))


def admissible_radius(eps=None, I_minus=None, default=0.25):
    """Ball radius for the overlap lower bound.

    With `eps`: ``t_E = min(1/(3 sqrt(eps)), 1/4)``.  With `I_minus`:
    ``t_I = 1/(3 sqrt(I_minus - π²))`` when ``I_minus > π² + 4/9``, else
    `default`.
    """
    if (eps is None) == (I_minus is None):
        raise ValueError("give exactly one of eps and I_minus")
    if eps is not None:
        if not eps > 0:
            raise ValueError("eps must be positive")
        return min(1.0 / (3.0 * math.sqrt(eps)), 0.25)
    if not I_minus > math.pi ** 2:
        raise ValueError("I_minus must exceed π²")
    if I_minus > math.pi ** 2 + 4.0 / 9.0:
        return 1.0 / (3.0 * math.sqrt(I_minus - math.pi ** 2))
    return default
