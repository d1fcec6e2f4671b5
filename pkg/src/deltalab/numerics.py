"""Dense complex linear algebra, quadrature and decay regression.

Every other module of the package goes through these helpers, so the
conventions fixed here (square-root branch, singularity threshold,
quadrature certification) hold package wide.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
import scipy.linalg as la

__all__ = [
    "SingularMatrixError", "NotHermitianError", "QuadratureError",
    "InsufficientDataError", "principal_sqrt", "LUFactorization", "lu_factor",
    "lu_solve", "hermitian_eigenvalues", "operator_norm", "Box", "Ball",
    "QuadratureSpec", "QuadResult", "gauss_legendre", "integrate",
    "DecayFit", "fit_exponential_decay", "UNDERFLOW_FLOOR",
]

PIVOT_THRESHOLD = 1e-14
HERMITIAN_TOL = 1e-12
UNDERFLOW_FLOOR = 1e-300


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when LU elimination meets a pivot below the relative threshold."""

    def __init__(self, message, condition=math.inf):
        super().__init__(f"{message} (estimated condition number {condition:.3e})")
        self.condition = condition


class NotHermitianError(ValueError):
    pass


class QuadratureError(RuntimeError):
    """Raised when panel doubling cannot certify the requested tolerance."""


class InsufficientDataError(ValueError):
    pass


def principal_sqrt(z):
    """Square root with ``Im w >= 0``.

    On the upper half-plane and on the positive real axis this is the
    principal branch.  For ``Im z < 0`` the root with non-negative imaginary
    part is returned instead, which keeps ``exp(i w r)`` bounded and makes
    the free Green's function satisfy ``G0(conj z) = conj(G0(z))``.
    """
    w = np.sqrt(np.asarray(z, dtype=complex))
    w = np.where(w.imag < 0, -w, w)
    if w.ndim == 0:
        return complex(w)
    return w


class LUFactorization:
    """Partial-pivoting LU factorization, reusable across right-hand sides.

    Parameters
    ----------
    A : (N, N) array_like
        Square matrix.  Real input is promoted to complex.

    Raises
    ------
    SingularMatrixError
        If a pivot falls below ``1e-14`` times the largest entry of `A`.
    """

    def __init__(self, A):
        A = np.array(A, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("matrix has non-finite entries")
        self.shape = A.shape
        scale = np.abs(A).max() if A.size else 0.0
        lu, piv = la.lu_factor(A, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if scale == 0.0 or pivots.min() < PIVOT_THRESHOLD * scale:
            with np.errstate(all="ignore"):
                cond = np.linalg.cond(A) if scale > 0 else math.inf
            raise SingularMatrixError("matrix is singular to working precision", cond)
        self._lu = (lu, piv)

    def solve(self, B):
        B = np.asarray(B)
        if B.shape[0] != self.shape[0]:
            raise ValueError("right-hand side has incompatible shape")
        return la.lu_solve(self._lu, B.astype(complex, copy=False), check_finite=False)

    def inverse(self):
        return self.solve(np.eye(self.shape[0], dtype=complex))


def lu_factor(A):
    return LUFactorization(A)


def lu_solve(A, B):
    """Solve ``A X = B``; `A` may be a matrix or an existing factorization."""
    fac = A if isinstance(A, LUFactorization) else LUFactorization(A)
    return fac.solve(B)


def _check_hermitian(A, tol=HERMITIAN_TOL):
    scale = max(np.abs(A).max(), 1.0) if A.size else 1.0
    if A.shape[0] != A.shape[1] or np.abs(A - A.conj().T).max() > tol * scale:
        raise NotHermitianError("matrix is not Hermitian within tolerance")


def hermitian_eigenvalues(A, vectors=False):
    """Ascending eigenvalues of a Hermitian matrix.

    With ``vectors=True`` returns ``(w, V)`` such that ``A = V diag(w) V^*``.
    """
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    _check_hermitian(A)
    if vectors:
        return la.eigh(A)
    return la.eigvalsh(A)


def operator_norm(A):
    """Spectral norm (largest singular value)."""
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(la.svdvals(A)[0])


# --------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not 1 <= len(lo) <= 3:
            raise ValueError("box must have 1 to 3 matching bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.upper, self.lower)))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    @property
    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius ** 3


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule with panel-doubling certification.

    ``nodes`` is the rule order per panel; ``tol`` is absolute and ``rtol``
    relative (a result is accepted when either holds).  ``radius`` truncates
    semi-infinite 1D domains.
    """
    nodes: int = 16
    panels: int = 1
    tol: float = 1e-10
    rtol: float = 0.0
    radius: float | None = None
    max_doublings: int = 3

    def __post_init__(self):
        if self.nodes < 1 or self.panels < 1:
            raise ValueError("nodes and panels must be positive")
        if self.tol <= 0 and self.rtol <= 0:
            raise ValueError("a positive tolerance is required")


@dataclass(frozen=True)
class QuadResult:
    value: complex
    error: float
    panels: int


@lru_cache(maxsize=64)
def _gl_reference(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n, a=-1.0, b=1.0, panels=1, breaks=None):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``.

    ``breaks`` (optional, sorted, strictly inside) overrides the uniform
    panel layout; each sub-interval then receives ``panels`` panels.
    """
    x0, w0 = _gl_reference(n)
    edges = [a, b] if breaks is None else [a, *breaks, b]
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        e = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(e)[:, None]
        mid = 0.5 * (e[1:] + e[:-1])[:, None]
        xs.append((mid + half * x0).ravel())
        ws.append((half * w0).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def _tensor_rule(lower, upper, n, panels):
    axes = [gauss_legendre(n, lo, hi, panels) for lo, hi in zip(lower, upper)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return pts, w


def _ball_rule(center, radius, n, panels):
    r, wr = gauss_legendre(n, 0.0, radius, panels)
    c, wc = gauss_legendre(n, -1.0, 1.0, panels)
    p, wp = gauss_legendre(n, 0.0, 2 * math.pi, panels)
    R, C, P = np.meshgrid(r, c, p, indexing="ij")
    W = np.einsum("i,j,k->ijk", wr * r ** 2, wc, wp)
    S = np.sqrt(1.0 - C ** 2)
    pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], axis=-1).reshape(-1, 3)
    return pts + np.asarray(center), W.ravel()


def integrate(f, domain, spec=QuadratureSpec(), tail=None):
    """Integrate a vectorized field over a box or a ball.

    Parameters
    ----------
    f : callable
        ``f(points) -> values`` with ``points`` of shape ``(N, d)``.
    domain : Box or Ball
        A 1D box may have ``upper = inf``; it is then truncated at
        ``lower + spec.radius`` and `tail` must bound the discarded piece.
    spec : QuadratureSpec
    tail : callable, optional
        ``tail(R) -> float`` upper bound on the integral beyond ``R``.

    Returns
    -------
    QuadResult
        Value from the finest rule and the certified error estimate.
    """
    tail_err = 0.0
    if isinstance(domain, Box) and not np.all(np.isfinite(domain.upper)):
        if domain.dim != 1 or spec.radius is None or tail is None:
            raise ValueError("improper domains need 1D, a truncation radius and a tail bound")
        cut = domain.lower[0] + spec.radius
        tail_err = float(tail(cut))
        domain = Box(domain.lower, (cut,))

    def rule(panels):
        if isinstance(domain, Ball):
            return _ball_rule(domain.center, domain.radius, spec.nodes, panels)
        return _tensor_rule(domain.lower, domain.upper, spec.nodes, panels)

    def apply(panels):
        pts, w = rule(panels)
        vals = np.asarray(f(pts))
        return complex(np.sum(w * vals))

    panels = spec.panels
    prev = apply(panels)
    for _ in range(spec.max_doublings):
        panels *= 2
        cur = apply(panels)
        err = abs(cur - prev) + tail_err
        if err <= max(spec.tol, spec.rtol * abs(cur)):
            return QuadResult(_real_if_close(cur), err, panels)
        prev = cur
    raise QuadratureError(
        f"no convergence after {spec.max_doublings} panel doublings "
        f"(last change {abs(cur - prev):.3e}, tail {tail_err:.3e})")


def _real_if_close(v):
    return v.real if v.imag == 0.0 else v


# --------------------------------------------------------------------------
# decay regression

@dataclass(frozen=True)
class DecayFit:
    """Least-squares line through ``(distance, log magnitude)``."""
    log_amplitude: float
    rate: float
    r_squared: float
    count: int

    def predict(self, distance):
        return np.exp(self.log_amplitude - self.rate * np.asarray(distance))


def fit_exponential_decay(distances, magnitudes):
    """Fit ``magnitude ~ A exp(-rate * distance)``.

    Magnitudes at or below 1e-300 are discarded before taking logs.  When
    the log-magnitudes are all equal, the rate is 0 and ``r_squared`` is 0
    by convention.
    """
    d = np.asarray(distances, dtype=float).ravel()
    m = np.asarray(magnitudes, dtype=float).ravel()
    if d.shape != m.shape:
        raise ValueError("distances and magnitudes differ in length")
    keep = (m > UNDERFLOW_FLOOR) & np.isfinite(m)
    d, y = d[keep], np.log(m[keep])
    if d.size < 3:
        raise InsufficientDataError("need at least 3 samples above the underflow floor")
    dm, ym = d.mean(), y.mean()
    sxx = np.sum((d - dm) ** 2)
    if sxx == 0:
        raise InsufficientDataError("all distances coincide")
    slope = np.sum((d - dm) * (y - ym)) / sxx
    intercept = ym - slope * dm
    ss_tot = np.sum((y - ym) ** 2)
    if ss_tot <= 1e-28 * max(1.0, np.sum(y ** 2)):
        return DecayFit(float(ym), 0.0, 0.0, int(d.size))
    ss_res = np.sum((y - intercept - slope * d) ** 2)
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return DecayFit(float(intercept), float(-slope), float(r2), int(d.size))
