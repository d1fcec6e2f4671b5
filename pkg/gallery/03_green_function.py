"""The Green's function of the point-interaction operator.

G_ω = G0 + (interaction term).  Near an active site j the kernel behaves like
q/(4π|x - j|) + r with r = q/ω_j, the coupling condition at the site.  We
check that relation and the decay of the cell-averaged kernel.
"""
import math

import numpy as np

from deltalab import DisorderSpec, EnergyPoint, LatticeWindow, assemble_gamma, sample
from deltalab.green import (boundary_condition_residual, cell_averaged_green, green_omega,
                            singular_expansion)

config = sample(DisorderSpec(), LatticeWindow(2), seed=1)
system = assemble_gamma(config, EnergyPoint(1.5 * math.pi ** 2, 1.0))
y = np.array([1.4, -0.3, 0.6])
q, r = singular_expansion((0, 0, 0), y, system)
print(f"at site 0: q = {q:.5f}, r = {r:.5f}, q/omega = {q / system.omega[system.size // 2]:.5f}")
for radius in (4e-3, 2e-3, 1e-3):
    print(f"  coupling residual at radius {radius:g}: "
          f"{boundary_condition_residual((0, 0, 0), y, system, radius):.2e}")
x = np.array([0.31, 0.22, 0.17])
print(f"reciprocity |G(x,y) - G(y,x)| = {abs(green_omega(x, y, system) - green_omega(y, x, system)):.1e}")
print("cell averages along an axis:")
for n in range(2, 7):
    print(f"  |m - n| = {n}: {cell_averaged_green((0, 0, 0), (n, 0, 0), system).value:.4e}")
