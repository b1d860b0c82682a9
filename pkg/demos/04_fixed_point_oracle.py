"""Stable points by deployment-map iteration.

Applying the map "deploy, then fit to the shifted population" repeatedly is
a contraction whenever eps_avg * L / mu < 1. The empirical Lipschitz ratio
of the map equals eps_avg exactly for the scalar Gaussian family, and just
past the threshold the iteration runs away.
"""

import numpy as np

from perfnet import (
    apply_M,
    closed_form_multi_ps,
    contraction_probe,
    existence_check,
    make_heterogeneous_suite,
    repeated_gd_fixed_point,
)

env = make_heterogeneous_suite(25, 0.9, 0.05, zbar=10.0, sigma2=50.0)
print("closed form:", closed_form_multi_ps(env))
res = repeated_gd_fixed_point(env, tol=1e-10)
print(f"repeated GD: {res.theta_ps} after {res.deployments} deployments, "
      f"residual {res.residual:.2e}")

probe = contraction_probe(env, pairs=12)
print(f"contraction ratio: empirical {probe.empirical_ratio:.10f}, "
      f"bound eps_avg L / mu = {probe.theoretical_bound:.2f}")

print("\nexistence:", existence_check(0.9, 1.0, 1.0))
print("with populations reacting to all agents:",
      existence_check(0.9, 1.0, 1.0, variant="global_influence", n=25))

bad = make_heterogeneous_suite(25, 1.01, 0.0, zbar=10.0, sigma2=50.0)
theta = np.zeros(1)
for k in range(1, 1001):
    theta = apply_M(bad, theta)
    if k in (1, 10, 100, 1000):
        print(f"eps_avg=1.01: |M^{k}(0)| = {abs(theta[0]):.3e}")
