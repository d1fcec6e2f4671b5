"""Dissipativity of the coupling matrix across energies.

The imaginary part of -Γ is positive definite whenever Im z > 0.  This
script scans the energy at fixed regularization and prints the smallest
eigenvalue of -Im Γ next to two candidate lower-bound constants: the
literal one and the Parseval-normalized one.
"""
import math

import numpy as np

from deltalab import DisorderSpec, EnergyPoint, LatticeWindow, assemble_gamma, sample
from deltalab.green import c_num, c_parseval

PI2 = math.pi ** 2
kappa = 0.5
config = sample(DisorderSpec(), LatticeWindow(3), seed=7)
print(f"{len(config.active)} active sites, kappa = {kappa}")
print(f"{'E/pi^2':>7} {'lambda_min':>11} {'c_num k':>9} {'c_pars k':>9} {'|G^-1| lam':>10}")
for E in np.linspace(PI2 + 0.5, 4 * PI2, 8):
    system = assemble_gamma(config, EnergyPoint(E, kappa))
    lam = system.lambda_min
    print(f"{E / PI2:7.3f} {lam:11.4e} {c_num(E, kappa) * kappa:9.3e} "
          f"{c_parseval(E, kappa) * kappa:9.3e} {system.inverse_norm * lam:10.4f}")
# The last column never exceeds 1: the inverse is bounded by 1/lambda_min.
