"""Exponential decay of Γ^{-1} and the certified rate mu_star.

A perturbation argument turns off-diagonal decay of a matrix into decay of
its inverse at a smaller rate.  Here the certified envelope is compared
with the decay actually observed, which is usually much faster.
"""
import math

from deltalab import DisorderSpec, EnergyPoint, LatticeWindow, assemble_gamma, sample
from deltalab.decay import gamma_mu_star, inverse_decay_check, max_conjugation_diagnostic

window = LatticeWindow(4)
config = sample(DisorderSpec(), window, seed=3)
system = assemble_gamma(config, EnergyPoint(2 * math.pi ** 2, 1.0))
dist = window.distances()
rho, mu = system.inverse_norm, gamma_mu_star(system)
report = inverse_decay_check(system.matrix, rho, mu, dist, window.interior(1))
print(f"rho = |Γ^-1| = {rho:.4f}, tau = {system.k.imag:.4f}, mu_star = {mu:.3e}")
print(f"worst |Γ^-1_nm| / (2 rho e^(-mu d)) = {report.worst_ratio:.3f}")
print(f"observed decay rate {report.fit.rate:.3f} (r^2 {report.fit.r_squared:.3f})")
print(f"contraction diagnostic at mu_star: "
      f"{max_conjugation_diagnostic(system.matrix, mu, rho, dist):.3e} (needs <= 1/2)")
