"""Finite cubic windows of the integer lattice and lattice geometry."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Box

__all__ = ["LatticeWindow", "dist_to_lattice", "nearest_site", "unit_cell_domain"]


@dataclass(frozen=True)
class LatticeWindow:
    """The sites ``{n in Z^d : |n|_inf <= L}`` in lexicographic order.

    The first coordinate varies slowest, so the enumeration matches
    ``itertools.product(range(-L, L + 1), repeat=d)``.
    """
    L: int
    d: int = 3
    sites: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 0:
            raise ValueError("half-width must be a non-negative integer")
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        object.__setattr__(self, "L", int(self.L))
        axis = np.arange(-self.L, self.L + 1)
        grid = np.meshgrid(*([axis] * self.d), indexing="ij")
        sites = np.stack([g.ravel() for g in grid], axis=-1)
        sites.flags.writeable = False
        object.__setattr__(self, "sites", sites)

    def __len__(self):
        return (2 * self.L + 1) ** self.d

    @property
    def count(self):
        return len(self)

    def index(self, site):
        """Position of an integer site in the enumeration."""
        site = np.asarray(site, dtype=int)
        if site.shape[-1] != self.d or np.any(np.abs(site) > self.L):
            raise KeyError(f"site {site.tolist()} is outside the window")
        w = 2 * self.L + 1
        idx = np.zeros(site.shape[:-1], dtype=int)
        for k in range(self.d):
            idx = idx * w + (site[..., k] + self.L)
        return idx if idx.ndim else int(idx)

    def interior(self, margin):
        """Mask of sites whose l-inf distance to the window complement exceeds `margin`."""
        return (self.L + 1 - np.abs(self.sites).max(axis=1)) >= margin

    def distances(self, norm="l2"):
        """Pairwise site distances (Euclidean by default, ``'l1'`` optional)."""
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        if norm == "l1":
            return np.abs(diff).sum(axis=-1).astype(float)
        if norm != "l2":
            raise ValueError(f"unknown norm {norm!r}")
        return np.sqrt((diff ** 2).sum(axis=-1))


def nearest_site(x):
    """Coordinatewise nearest integer point; half-integers go to the even integer."""
    return np.rint(np.asarray(x, dtype=float))


def dist_to_lattice(x):
    """Euclidean distance from point(s) ``x`` (shape ``(..., 3)``) to Z^3."""
    x = np.asarray(x, dtype=float)
    d = np.sqrt(((x - np.rint(x)) ** 2).sum(axis=-1))
    return float(d) if d.ndim == 0 else d


def unit_cell_domain(m):
    """The box ``m + [-1/2, 1/2]^3``."""
    m = np.asarray(m, dtype=float)
    return Box(tuple(m - 0.5), tuple(m + 0.5))
