"""A hand-built ReLU network that stores the whole observation history.

The first hidden layer keeps a time counter, the initial estimate and a
shift register of past observations.  Every stored value is lifted by a
bias b so that the ReLU never clips it; subtracting b again gives back the
exact history.  Any filter with a fixed horizon is a function of that
history, which is why such networks can approximate it.
"""

import numpy as np

from rnnfilter.rnn import construct_memorization_params, memorization_readout, unroll_batch

horizon, d_y, b = 6, 2, 50.0
params, topology = construct_memorization_params(horizon, d_y, rho0_dim=1, bias_b=b,
                                                 rho0=[0.5])
print("layer widths:", topology.layer_widths)

ys = np.random.default_rng(0).standard_normal((1, horizon, d_y))
outputs, _, (acts, _) = unroll_batch(params, topology, ys, keep=True)
np.set_printoptions(precision=3, suppress=True, linewidth=110)
for t in (1, 3, 6):
    state = memorization_readout(acts[t - 1][1][0], b)
    print(f"t={t}: counter {state[0]:.0f}, rho0 {state[1]:.2f}, register {state[2:]}")
print("observations, newest first at t=6:", ys[0, ::-1].ravel())
print("output equals the read-out state:",
      np.allclose(outputs[0, -1], memorization_readout(acts[-1][1][0], b), atol=1e-12))

# the guarantee needs observations above -b: a huge negative value gets clipped
clipped = ys.copy()
clipped[0, 0, 0] = -80.0
out, _ = unroll_batch(params, topology, clipped)
print("y_1 = -80 with b = 50 reads back as", out[0, -1, 2 + (horizon - 1) * d_y])
