"""Bootstrap particle filter versus the exact filter.

The bootstrap filter proposes from the dynamics and corrects by the
likelihood.  When observations are accurate (small beta) the likelihood is
sharp and few particles carry the weight.  The absolute error still shrinks
with beta, because the posterior itself narrows, but measured against the
posterior spread sqrt(C_inf) the particle filter does worse.
"""

import numpy as np

from rnnfilter import sample_trajectories, scalar_model
from rnnfilter.kalman import kalman_means, riccati_fixed_point
from rnnfilter.particle import particle_filter_batch, particle_streams, pf_init, pf_step

for beta in (2.0, 1.0, 0.3):
    model = scalar_model(0.98, beta)
    test = sample_trajectories(model, 300, 40, seed=2)
    km = kalman_means(model, test.observations)
    spread = np.sqrt(riccati_fixed_point(model)[0, 0])
    for count in (100, 1000):
        pf = particle_filter_batch(model, test.observations, count, seed=3)
        rmse = np.sqrt(np.mean((pf[:, 50:] - km[:, 50:]) ** 2))
        print(f"beta={beta:3.1f}  P={count:5d}  RMSE vs Kalman mean {rmse:.4f}  "
              f"= {100 * rmse / spread:.1f}% of the posterior std")

# effective sample size before each resampling step, one short run
model = scalar_model(0.98, 0.3)
obs = sample_trajectories(model, 10, 1, seed=4).observations[0]
streams = particle_streams(5)
ens = pf_init(model, 1000, streams)
ess = []
for y in obs:
    ens = pf_step(model, ens, y, streams)
    ess.append(ens.ess)
print("ESS with beta=0.3, P=1000:", np.round(ess).astype(int))
