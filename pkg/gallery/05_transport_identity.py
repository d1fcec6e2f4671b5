"""Time-averaged moments two ways on a finite Hermitian proxy.

The Abel-averaged moment of a weight equals an energy integral of the
squared resolvent applied to the initial state.  Both sides are computed
independently, together with a direct time quadrature.
"""
from deltalab.transport import (moment_resolvent, moment_time_avg, moment_time_quadrature,
                                projector_tail_bounds, random_proxy)

proxy = random_proxy(10, seed=4, q=2.0)
print(f"{'T':>6} {'closed form':>14} {'resolvent':>14} {'time quad':>14}")
for T in (0.5, 5.0, 50.0):
    print(f"{T:6g} {moment_time_avg(proxy, T):14.10f} {moment_resolvent(proxy, T):14.10f} "
          f"{moment_time_quadrature(proxy, T):14.10f}")

r = projector_tail_bounds(proxy, E=0.0, delta=0.4, eps=0.1)
print(f"|P psi| = {r.proj_norm:.4f} <= a/delta = {r.proj_bound:.4f}")
print(f"|R P psi| = {r.resolvent_norm:.4f} <= a/delta^2 = {r.resolvent_bound:.4f}")
