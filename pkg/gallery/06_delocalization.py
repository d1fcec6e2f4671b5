"""A lower bound on transport for the free system.

For each time T the chain  eps |phi^{1/2} R(z) chi_B| |phi^{-1/2} psi_L| >=
(3/4)|<chi_B, psi_E>| - |<chi_B, R C_L>|  is evaluated, and the energy
integral of the left factor gives a lower bound on the moment of chi_B.
A coarse grid keeps this under a minute; the acceptance suite uses T = 2, 4, 8.

At these cutoff scales the commutator term is not yet below a quarter of
the overlap, so the right-hand side comes out slightly negative.  The
field decays like exp(-Im sqrt(z) r) with Im sqrt(z) about eps/(2 sqrt(E)),
so the scale at which it becomes small grows linearly in T.
"""
import math

from deltalab import LatticeWindow
from deltalab.disorder import empty_config
from deltalab.transport import deloc_chain

PI2 = math.pi ** 2
rep = deloc_chain(empty_config(LatticeWindow(0)), (1.5 * PI2, 2 * PI2), q=4.0,
                  T_grid=[2.0, 4.0], L_grid=(2, 3), energies=3)
for p in rep.points:
    print(f"T={p.T:g} E={p.E / PI2:.3f}pi2  lhs={p.lhs:.4e} >= rhs={p.rhs:.4e}  {p.passed}")
print("moment lower bounds:", [f"{m:.1f}" for m in rep.M_lower])
print(f"growth exponent in T: {rep.exponent:.3f}")
for T, sweep in rep.sweeps.items():
    print(f"T={T:g}: |<chi_B, R C_L>| = {[round(c, 4) for c in sweep['commutator']]}, "
          f"overlap/4 = {sweep['overlap'] / 4:.4f}")
