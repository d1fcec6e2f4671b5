"""Seeded iid coupling constants on lattice windows.

Random numbers come from a counter-based hash of ``(seed, site, stream)``
so that a site's coupling does not depend on traversal order or on how the
work is split between workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import json

import numpy as np

from .lattice import LatticeWindow

__all__ = ["DisorderSpec", "DisorderConfig", "sample", "constant_config",
           "empty_config", "uniform_hash"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix64(x):
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def uniform_hash(seed, index, stream=0):
    """Uniform variates in [0, 1) from the triple ``(seed, index, stream)``.

    Each triple maps to one fixed 53-bit float, independent of array shape.
    """
    idx = np.asarray(index, dtype=np.uint64)
    key = _splitmix64(np.full_like(idx, np.uint64(seed & _MASK64)))
    key = _splitmix64(key ^ np.uint64(stream & _MASK64))
    z = _splitmix64(key ^ _splitmix64(idx))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@lru_cache(maxsize=4)
def _bump_inverse_cdf(n=4097):
    # density proportional to exp(-1/(1-t^2)) on (-1, 1)
    t = np.linspace(-1.0, 1.0, n)
    with np.errstate(divide="ignore"):
        dens = np.where(np.abs(t) < 1, np.exp(-1.0 / np.maximum(1 - t ** 2, 1e-300)), 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return cdf[keep], t[keep]


@dataclass(frozen=True)
class DisorderSpec:
    """Law of a single coupling: inactive with probability ``p0``, else in [-b, -a]."""
    a: float = 1.0
    b: float = 2.0
    shape: str = "uniform"
    p0: float = 0.0

    def __post_init__(self):
        if not 0 < self.a < self.b < np.inf:
            raise ValueError("need 0 < a < b < inf")
        if self.shape not in ("uniform", "truncated-bump"):
            raise ValueError(f"unknown density shape {self.shape!r}")
        if not 0 <= self.p0 < 1:
            raise ValueError("inactive fraction must lie in [0, 1)")

    def transform(self, u):
        """Map uniforms on [0, 1) to couplings on [-b, -a]."""
        if self.shape == "uniform":
            t = 2.0 * u - 1.0
        else:
            cdf, grid = _bump_inverse_cdf()
            t = np.interp(u, cdf, grid)
        mid, half = -(self.a + self.b) / 2, (self.b - self.a) / 2
        return np.clip(mid + half * t, -self.b, -self.a)


@dataclass(frozen=True)
class DisorderConfig:
    """Couplings on a window; zero marks a site removed from the active set."""
    window: LatticeWindow
    omega: np.ndarray = field(repr=False)
    seed: int | None = None
    spec: DisorderSpec | None = None

    def __post_init__(self):
        om = np.array(self.omega, dtype=float)
        if om.shape != (len(self.window),):
            raise ValueError("omega must have one entry per window site")
        om.flags.writeable = False
        object.__setattr__(self, "omega", om)

    @property
    def active(self):
        """Indices (into the window enumeration) of the active set."""
        return np.flatnonzero(self.omega != 0)

    @property
    def active_sites(self):
        return self.window.sites[self.active]

    @property
    def active_omega(self):
        return self.omega[self.active]

    def deactivate(self, indices):
        om = self.omega.copy()
        om[np.atleast_1d(indices)] = 0.0
        return DisorderConfig(self.window, om, self.seed, self.spec)

    def to_dict(self):
        spec = self.spec or DisorderSpec()
        return {"seed": self.seed, "a": spec.a, "b": spec.b, "p0": spec.p0,
                "L": self.window.L, "omega": self.omega.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text, shape="uniform"):
        data = json.loads(text)
        spec = DisorderSpec(data["a"], data["b"], shape, data["p0"])
        return cls(LatticeWindow(data["L"]), data["omega"], data["seed"], spec)


def sample(spec, window, seed):
    """Draw a configuration; site ``k`` uses hash streams 0 (activity) and 1 (value)."""
    idx = np.arange(len(window), dtype=np.uint64)
    omega = spec.transform(uniform_hash(seed, idx, 1))
    if spec.p0 > 0:
        omega = np.where(uniform_hash(seed, idx, 0) < spec.p0, 0.0, omega)
    return DisorderConfig(window, omega, int(seed), spec)


def constant_config(window, value):
    if value == 0:
        raise ValueError("a constant coupling must be nonzero")
    return DisorderConfig(window, np.full(len(window), float(value)))


def empty_config(window):
    """All sites inactive, so the interaction vanishes."""
    return DisorderConfig(window, np.zeros(len(window)))
