"""When the signal is not stable, short training horizons fall short.

With alpha slightly above one the state drifts to magnitudes never seen
in length-20 training sequences.  A network trained on such sequences
extrapolates badly and its error grows with time; training on long
sequences pushes the onset of that growth out.

Scaled down for speed; the bundled configs ``fig2_a1001_b2_t20`` and
``fig2_a1001_b2_t2000`` run the full versions.
"""

from rnnfilter import check_stationarity_condition, sample_trajectories, scalar_model
from rnnfilter.evaluate import evaluate_filters, onset_time, rnn_closure
from rnnfilter.rnn import RnnTopology, Variant
from rnnfilter.train import TrainConfig, train

model = scalar_model(1.001, 2.0)
print("stationarity:", check_stationarity_condition(model))
topology = RnnTopology(Variant.RECURSIVE, (1, 7, 7, 1))

nets = {}
for horizon, count, epochs in ((20, 1000, 100), (1000, 100, 15)):
    cfg = TrainConfig(horizon_T_train=horizon, count_N_train=count, epochs=epochs,
                      minibatch_size=20, learning_rate=3e-3, seed=0)
    data = sample_trajectories(model, horizon, count, seed=1)
    nets[horizon], history = train(cfg, topology, data)
    print(f"T_train={horizon:4d}: final training loss {history[-1]:.3f}")

report = evaluate_filters(model, {f"T_train={h}": rnn_closure(p, topology) for h, p in nets.items()},
                          n_test=100, horizon_T_test=2000, seed=2)
for name, curve in report.rmse_vs_oracle.items():
    print(f"{name:12s} RMSE vs Kalman at t=100: {curve[99]:.3f}, t=1000: {curve[999]:.3f}, "
          f"t=2000: {curve[-1]:.3f}; first t above 3x the t=100 value: {onset_time(curve)}")
