"""Learning a filter from simulated data.

A ReLU network whose last hidden layer feeds back into the first is trained
by backpropagation through time to predict X_t from Y_1..Y_t on short
sequences, then run over a much longer horizon.  On a stable model its error
against the Kalman mean stays flat: the learned recursion forgets its
initial state the way the exact filter does.

The bundled config ``fig1_a098_b2`` runs the full-size version of this
experiment (``python -m rnnfilter run fig1_a098_b2``); here everything is
scaled down to run in well under a minute.
"""

import numpy as np

from rnnfilter import sample_trajectories, scalar_model
from rnnfilter.evaluate import constant_closure, detect_error_accumulation, evaluate_filters, \
    kalman_closure, rnn_closure
from rnnfilter.rnn import RnnTopology, Variant
from rnnfilter.train import TrainConfig, train

model = scalar_model(0.98, 2.0)
topology = RnnTopology(Variant.RECURSIVE, (1, 7, 7, 1))
config = TrainConfig(horizon_T_train=20, count_N_train=1000, epochs=150, minibatch_size=50,
                     learning_rate=3e-3, seed=0)
data = sample_trajectories(model, config.horizon_T_train, config.count_N_train, seed=1)

kalman_loss = np.mean((kalman_closure(model)(data.observations) - data.states[:, 1:]) ** 2)


def progress(epoch, loss):
    if epoch % 30 == 0 or epoch == config.epochs - 1:
        print(f"epoch {epoch:4d}  loss {loss:.4f}  (Kalman mean achieves {kalman_loss:.4f})")


params, history = train(config, topology, data, progress=progress)

report = evaluate_filters(model, {"rnn": rnn_closure(params, topology),
                                  "zero": constant_closure(0.0, 1),
                                  "kalman": kalman_closure(model)},
                          n_test=200, horizon_T_test=1000, seed=2)
for name in ("rnn", "zero"):
    curve = report.rmse_vs_oracle[name]
    acc = detect_error_accumulation(report, name, (100, 300), (800, 1000))
    print(f"{name:5s} RMSE vs Kalman: t=1..20 {curve[:20].mean():.3f}, "
          f"t=100..300 {acc.early_mean:.3f}, t=800..1000 {acc.late_mean:.3f}")
