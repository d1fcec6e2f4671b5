"""Bounded modes above π² and their cut-off Weyl sequence.

psi_E = sin(π x1) psi0(x2, x3) vanishes on the lattice, so it never sees the
point interactions.  Cutting it off at scale L costs a commutator whose
norm stays flat in L while the norm of the cut-off mode grows like L.
The profile must vanish near s = 0 for this; the "split" profile does.
"""
import math

from deltalab.eigenmodes import (GeneralizedMode, admissible_radius, commutator_norms,
                                 overlap_ball, overlap_lower_bound, weighted_mode_norm)

E = 1.5 * math.pi ** 2
print(f"{'L':>4} {'A0':>9} {'|psi_L|^2':>11}")
for L in (5, 10, 20, 40):
    n = commutator_norms(GeneralizedMode.at_energy(E, "split", L=L))
    print(f"{L:4d} {n.A0:9.5f} {n.psiL_norm_sq:11.2f}")

mode = GeneralizedMode.at_energy(E)
for q in (3.5, 4, 6):
    w = weighted_mode_norm(q, mode)
    print(f"q = {q}: weighted norm <= {w.upper:.3f}, bound 4πq/(q-3) = {w.bound:.3f}")
t = admissible_radius(eps=E - math.pi ** 2)
print(f"ball overlap at t = {t:.4f}: {overlap_ball(t, mode).real:.4e} >= {overlap_lower_bound(t):.4e}")
