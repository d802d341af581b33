"""The exact filter every network is scored against.

For the scalar model X_t = alpha X_{t-1} + V_t, Y_t = X_t + beta W_t the
Kalman covariance recursion does not depend on the data and settles at the
positive root of

    alpha^2 C^2 + (q + r - r alpha^2) C - r q = 0.

This script filters one simulated sequence, shows the covariance converging
to that root, and checks that the filter's mean-square error matches the
covariance it reports.
"""

import math

import numpy as np

from rnnfilter import sample_trajectories, scalar_model
from rnnfilter.kalman import kalman_filter, kalman_means, riccati_fixed_point, steady_state_gain

alpha, beta = 0.98, 2.0
model = scalar_model(alpha, beta)

batch = sample_trajectories(model, horizon_T=50, count_N=1, seed=0)
states = kalman_filter(model, batch.observations[0])

print(" t      y_t        mean_t     C_t       K_t")
for s in states[:8]:
    y = batch.observations[0, s.t - 1, 0] if s.t else float("nan")
    print(f"{s.t:2d} {y:10.4f} {s.mean[0]:10.4f} {s.cov[0, 0]:9.5f} {s.gain[0, 0]:9.5f}")

q, r = 1.0, beta**2
b = q + r - r * alpha**2
root = (-b + math.sqrt(b * b + 4 * alpha**2 * r * q)) / (2 * alpha**2)
print(f"\nsteady state: iterated C = {riccati_fixed_point(model)[0, 0]:.10f}, "
      f"quadratic root = {root:.10f}")
print(f"steady gain K = {steady_state_gain(model)[0, 0]:.6f}")

# the conditional mean is unbiased and its error variance is C_t
many = sample_trajectories(model, 200, 5000, seed=1)
err = kalman_means(model, many.observations) - many.states[:, 1:]
print(f"empirical MSE over t > 100: {np.mean(err[:, 100:] ** 2):.4f} (C_inf = {root:.4f})")
