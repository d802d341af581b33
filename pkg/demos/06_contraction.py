"""How fast does a filter forget where it started?

Run a filter twice on the same observations from two different initial
states and watch the gap shrink.  For the steady-state Kalman filter the gap
contracts by exactly |alpha (1 - K)| per step.  The same probe applied to a
network tells whether its recursion is contracting too.
"""

import numpy as np

from rnnfilter import scalar_model
from rnnfilter.evaluate import estimate_contraction, kalman_closure, rnn_closure
from rnnfilter.kalman import steady_state_gain
from rnnfilter.rnn import RnnTopology, Variant, init_random_params

model = scalar_model(0.98, 2.0)
k = steady_state_gain(model)[0, 0]
offsets = [np.array([5.0]), np.array([-2.0])]
est = estimate_contraction(kalman_closure(model, steady_state=True), model, 50, offsets, 40, seed=0)
print(f"Kalman: fitted kappa {est.kappa_hat:.6f}, closed form |alpha (1 - K)| = "
      f"{abs(0.98 * (1 - k)):.6f}")
print("gap at lags 0..8:", np.round(est.lag_curve[:9], 4))

topology = RnnTopology(Variant.RECURSIVE, (1, 7, 7, 1))
for scale in (0.5, 3.0):
    params = init_random_params(topology, seed=0, feedback_scale=scale)
    rng = np.random.default_rng(1)
    est = estimate_contraction(rnn_closure(params, topology), model, 50,
                               [rng.standard_normal(7) for _ in range(3)], 40, seed=0)
    note = " (upper bound: the gap vanished)" if est.upper_bound else ""
    print(f"random network, feedback scale {scale}: kappa {est.kappa_hat:.3g}{note}")
