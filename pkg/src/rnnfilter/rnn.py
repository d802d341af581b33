"""ReLU recurrent state estimators.

A network with L layers maps an observation y_t to an estimate through

    s_t^(0) = y_t
    s_t^(l) = relu(W(l,l-1) s_t^(l-1) + b(l) + sum_k W(l,k) s_{t-1}^(k)),  l = 1..L-1
    out_t   = W(L,L-1) s_t^(L-1) + b(L)

The feedback sum runs over the pairs allowed by the topology:

* ``GENERAL_DENSE``: every (l, k) with 1 <= l <= k <= L-1
* ``MEMORIZATION``: only (1, 1), the observation-memorizing network
* ``RECURSIVE``: only (1, L-1), last hidden layer fed back to the first

All evaluation is batched: observations have shape (B, T, d_y) and hidden
layers (B, width).  Single sequences are handled by adding a batch axis.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from rnnfilter.errors import DimensionError, NumericError

__all__ = [
    "Variant",
    "RnnTopology",
    "RnnParams",
    "HiddenState",
    "rnn_forward",
    "rnn_unroll",
    "unroll_batch",
    "init_random_params",
    "construct_memorization_params",
    "memorization_readout",
    "embed_in_general_dense",
    "feedback_lipschitz_bound",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "rnnfilter-checkpoint"
CHECKPOINT_VERSION = 1


class Variant(enum.Enum):
    GENERAL_DENSE = "general_dense"
    MEMORIZATION = "memorization"
    RECURSIVE = "recursive"


@dataclass(frozen=True)
class RnnTopology:
    variant: Variant
    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise ValueError("a network needs L >= 2 layers, i.e. at least 3 widths")
        if min(widths) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def feedback_pairs(self) -> tuple:
        last = self.num_layers - 1
        if self.variant is Variant.GENERAL_DENSE:
            return tuple((l, k) for l in range(1, last + 1) for k in range(l, last + 1))
        if self.variant is Variant.MEMORIZATION:
            return ((1, 1),)
        return ((1, last),)

    @property
    def fed_back_layers(self) -> tuple:
        return tuple(sorted({k for _, k in self.feedback_pairs}))


@dataclass(eq=False)
class RnnParams:
    """Network parameters.

    ``feedforward[l-1]`` is W(l,l-1) with shape (width_l, width_{l-1}),
    ``feedback[(l, k)]`` is W(l,k) with shape (width_l, width_k),
    ``biases[l-1]`` is b(l), and ``init_hidden[k]`` is s_0^(k) for each
    fed-back layer k.
    """

    feedforward: list
    feedback: dict
    biases: list
    init_hidden: dict

    def arrays(self):
        """(name, array) pairs in the canonical order used for flattening."""
        out = [(f"ff_{l + 1}", w) for l, w in enumerate(self.feedforward)]
        out += [(f"fb_{l}_{k}", self.feedback[(l, k)]) for l, k in sorted(self.feedback)]
        out += [(f"b_{l + 1}", b) for l, b in enumerate(self.biases)]
        out += [(f"s0_{k}", self.init_hidden[k]) for k in sorted(self.init_hidden)]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def with_flat(self, vec) -> "RnnParams":
        vec = np.asarray(vec, dtype=np.float64)
        pieces = []
        pos = 0
        for _, a in self.arrays():
            pieces.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise DimensionError(f"flat vector has {vec.size} entries, expected {pos}")
        return self._from_pieces(pieces)

    def _from_pieces(self, pieces) -> "RnnParams":
        it = iter(pieces)
        ff = [next(it) for _ in self.feedforward]
        fb = {key: next(it) for key in sorted(self.feedback)}
        b = [next(it) for _ in self.biases]
        s0 = {k: next(it) for k in sorted(self.init_hidden)}
        return RnnParams(ff, fb, b, s0)

    def copy(self) -> "RnnParams":
        return self._from_pieces([a.copy() for _, a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def check(self, topology: RnnTopology) -> None:
        w = topology.layer_widths
        if len(self.feedforward) != topology.num_layers or len(self.biases) != topology.num_layers:
            raise DimensionError("parameter layer count does not match topology")
        for l in range(1, topology.num_layers + 1):
            if self.feedforward[l - 1].shape != (w[l], w[l - 1]):
                raise DimensionError(
                    f"W({l},{l - 1}) has shape {self.feedforward[l - 1].shape}, "
                    f"expected {(w[l], w[l - 1])}"
                )
            if self.biases[l - 1].shape != (w[l],):
                raise DimensionError(f"b({l}) has shape {self.biases[l - 1].shape}")
        if set(self.feedback) != set(topology.feedback_pairs):
            raise DimensionError(
                f"feedback blocks {sorted(self.feedback)} do not match topology "
                f"{topology.feedback_pairs}"
            )
        for (l, k), m in self.feedback.items():
            if m.shape != (w[l], w[k]):
                raise DimensionError(f"W({l},{k}) has shape {m.shape}, expected {(w[l], w[k])}")
        if set(self.init_hidden) != set(topology.fed_back_layers):
            raise DimensionError("init_hidden layers do not match the topology's fed-back layers")
        for k, v in self.init_hidden.items():
            if v.shape != (w[k],):
                raise DimensionError(f"s0^({k}) has shape {v.shape}, expected ({w[k]},)")
        for name, a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise NumericError(f"parameter {name} has non-finite entries")


@dataclass(eq=False)
class HiddenState:
    """Activations of the fed-back hidden layers, keyed by layer index."""

    layers: dict = field(default_factory=dict)
    t: int = 0


def _relu(z):
    return np.maximum(z, 0.0)


def _step(params: RnnParams, topology: RnnTopology, prev: dict, y: np.ndarray):
    """One batched step. Returns (output, activations, pre-activations)."""
    num = topology.num_layers
    acts = [y]
    pres = [None]
    fb_by_layer = {}
    for (l, k), m in params.feedback.items():
        fb_by_layer.setdefault(l, []).append((k, m))
    for l in range(1, num):
        z = acts[l - 1] @ params.feedforward[l - 1].T + params.biases[l - 1]
        for k, m in fb_by_layer.get(l, ()):
            z = z + prev[k] @ m.T
        pres.append(z)
        acts.append(_relu(z))
    out = acts[num - 1] @ params.feedforward[num - 1].T + params.biases[num - 1]
    return out, acts, pres


def initial_hidden(params: RnnParams, batch: int | None = None) -> HiddenState:
    layers = {k: (v.copy() if batch is None else np.broadcast_to(v, (batch, v.size)).copy())
              for k, v in params.init_hidden.items()}
    return HiddenState(layers, 0)


def rnn_forward(params: RnnParams, topology: RnnTopology, prev: HiddenState, y):
    """One step of the network.

    ``y`` has shape (d_y,) or (B, d_y); hidden layers in ``prev`` match.

    Returns
    -------
    output : array, shape (d_out,) or (B, d_out)
    next : HiddenState
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != topology.input_width:
        raise DimensionError(f"input width {y.shape[-1]} != {topology.input_width}")
    for k in topology.fed_back_layers:
        if k not in prev.layers or prev.layers[k].shape[-1] != topology.layer_widths[k]:
            raise DimensionError(f"hidden state for layer {k} is missing or mis-shaped")
    out, acts, _ = _step(params, topology, prev.layers, y)
    for l in range(1, topology.num_layers):
        if not np.all(np.isfinite(acts[l])):
            raise NumericError(f"non-finite activation in layer {l} at t={prev.t + 1}")
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite output at t={prev.t + 1}")
    nxt = HiddenState({k: acts[k] for k in topology.fed_back_layers}, prev.t + 1)
    return out, nxt


def unroll_batch(params: RnnParams, topology: RnnTopology, observations,
                 s0: dict | None = None, keep: bool = False):
    """Run the network over a batch of sequences without finiteness checks.

    Parameters
    ----------
    observations : array, shape (B, T, d_y)
    s0 : dict, optional
        Per-layer initial hidden state, each (width,) or (B, width).
    keep : bool
        Also return per-step activations and pre-activations for
        backpropagation.

    Returns
    -------
    outputs : array, shape (B, T, d_out)
    final : dict of final hidden layers
    trace : (acts, pres) lists over t, only when ``keep``
    """
    obs = np.asarray(observations, dtype=np.float64)
    b, horizon, _ = obs.shape
    start = params.init_hidden if s0 is None else s0
    prev = {k: np.broadcast_to(np.asarray(start[k], dtype=np.float64),
                               (b, topology.layer_widths[k]))
            for k in topology.fed_back_layers}
    outputs = np.empty((b, horizon, topology.output_width))
    acts_t, pres_t = [], []
    for t in range(horizon):
        out, acts, pres = _step(params, topology, prev, obs[:, t])
        outputs[:, t] = out
        if keep:
            acts_t.append(acts)
            pres_t.append(pres)
        prev = {k: acts[k] for k in topology.fed_back_layers}
    if keep:
        return outputs, prev, (acts_t, pres_t)
    return outputs, prev


def rnn_unroll(params: RnnParams, topology: RnnTopology, observations,
               s0_override: HiddenState | None = None):
    """Fold :func:`rnn_forward` over one sequence (T, d_y) or a batch (B, T, d_y).

    Returns the output sequence and the final :class:`HiddenState`.
    """
    obs = np.asarray(observations, dtype=np.float64)
    single = obs.ndim == 2
    if single:
        obs = obs[None]
    if obs.shape[-1] != topology.input_width:
        raise DimensionError(f"input width {obs.shape[-1]} != {topology.input_width}")
    start = params.init_hidden if s0_override is None else s0_override.layers
    t0 = 0 if s0_override is None else s0_override.t
    with np.errstate(over="ignore", invalid="ignore"):
        outputs, final = unroll_batch(params, topology, obs, start)
    bad = ~np.isfinite(outputs)
    if bad.any():
        n, t, _ = np.argwhere(bad)[0]
        raise NumericError(f"non-finite output at t={t0 + t + 1} (sequence {n})")
    if single:
        outputs = outputs[0]
        final = {k: v[0] for k, v in final.items()}
    if obs.shape[1] == 0:
        final = {k: np.array(start[k], dtype=np.float64) for k in topology.fed_back_layers}
        if not single:
            final = {k: np.broadcast_to(v, (obs.shape[0], v.size)).copy()
                     for k, v in final.items()}
    else:
        final = {k: np.array(v) for k, v in final.items()}
    return outputs, HiddenState(final, t0 + obs.shape[1])


def _zero_params(topology: RnnTopology) -> RnnParams:
    w = topology.layer_widths
    num = topology.num_layers
    return RnnParams(
        feedforward=[np.zeros((w[l], w[l - 1])) for l in range(1, num + 1)],
        feedback={(l, k): np.zeros((w[l], w[k])) for l, k in topology.feedback_pairs},
        biases=[np.zeros(w[l]) for l in range(1, num + 1)],
        init_hidden={k: np.zeros(w[k]) for k in topology.fed_back_layers},
    )


def init_random_params(topology: RnnTopology, seed: int, scale_rule: str = "glorot_uniform",
                       feedback_scale: float = 0.5) -> RnnParams:
    """Glorot-uniform weights, zero biases and zero initial hidden state.

    Feedback blocks are damped by ``feedback_scale``.
    """
    if scale_rule != "glorot_uniform":
        raise ValueError(f"unknown scale rule {scale_rule!r}")
    rng = np.random.default_rng(seed)
    params = _zero_params(topology)

    def draw(shape, scale=1.0):
        limit = np.sqrt(6.0 / (shape[0] + shape[1]))
        return scale * rng.uniform(-limit, limit, size=shape)

    params.feedforward = [draw(m.shape) for m in params.feedforward]
    params.feedback = {key: draw(params.feedback[key].shape, feedback_scale)
                       for key in sorted(params.feedback)}
    return params


def construct_memorization_params(horizon_T: int, d_y: int, rho0_dim: int, bias_b: float,
                                  rho0=None) -> tuple[RnnParams, RnnTopology]:
    """Weights of the observation-memorizing network.

    Layer 1 keeps a time counter, the initial estimate ``rho0`` and a shift
    register of the last ``horizon_T`` observations, all offset by
    ``bias_b`` so that ReLU passes them unchanged.  The read-out
    s^(1.5) = s^(1) + b(1.5), with b(1.5) = [0, -b, ..., -b], is

        [t, rho0, y_t, y_{t-1}, ..., y_1, 0, ..., 0]

    for t <= horizon_T, provided every observation coordinate and every
    ``rho0`` entry exceeds ``-bias_b``.  Layer 2 holds (relu(s^(1.5)),
    relu(-s^(1.5))) and the affine output recombines them, so the network
    output equals s^(1.5).
    """
    if bias_b <= 0:
        raise ValueError("bias_b must be positive")
    rho0 = np.zeros(rho0_dim) if rho0 is None else np.asarray(rho0, dtype=np.float64).reshape(-1)
    if rho0.shape != (rho0_dim,):
        raise DimensionError(f"rho0 has shape {rho0.shape}, expected ({rho0_dim},)")
    obs0 = 1 + rho0_dim
    width = obs0 + horizon_T * d_y
    eye_y = np.eye(d_y)

    w10 = np.zeros((width, d_y))
    w10[obs0:obs0 + d_y] = eye_y

    w11 = np.zeros((width, width))
    w11[0, 0] = 1.0
    w11[1:obs0, 1:obs0] = np.eye(rho0_dim)
    for slot in range(1, horizon_T):
        dst = obs0 + slot * d_y
        w11[dst:dst + d_y, dst - d_y:dst] = eye_y

    b1 = np.zeros(width)
    b1[0] = 1.0
    b1[obs0:obs0 + d_y] = bias_b

    b15 = np.full(width, -bias_b)
    b15[0] = 0.0

    # every register slot starts at b so the not-yet-filled slots read out 0
    s0 = np.full(width, float(bias_b))
    s0[0] = 0.0
    s0[1:obs0] = rho0 + bias_b

    # layer 2 = relu([I; -I] s^(1.5)); folded: W(2,1) = W(2,1.5) W(1.5,1), b(2) = W(2,1.5) b(1.5)
    w2_15 = np.vstack([np.eye(width), -np.eye(width)])
    w21 = w2_15 @ np.eye(width)
    b2 = w2_15 @ b15
    w32 = np.hstack([np.eye(width), -np.eye(width)])

    topology = RnnTopology(Variant.MEMORIZATION, (d_y, width, 2 * width, width))
    params = RnnParams(
        feedforward=[w10, w21, w32],
        feedback={(1, 1): w11},
        biases=[b1, b2, np.zeros(width)],
        init_hidden={1: s0},
    )
    return params, topology


def memorization_readout(layer1, bias_b: float) -> np.ndarray:
    """s^(1.5) = s^(1) + [0, -b, ..., -b] from first-layer activations."""
    out = np.array(layer1, dtype=np.float64)
    out[..., 1:] -= bias_b
    return out


def embed_in_general_dense(params: RnnParams, topology: RnnTopology):
    """The same network expressed in the GENERAL_DENSE topology."""
    dense = RnnTopology(Variant.GENERAL_DENSE, topology.layer_widths)
    out = _zero_params(dense)
    out.feedforward = [w.copy() for w in params.feedforward]
    out.biases = [b.copy() for b in params.biases]
    for key, m in params.feedback.items():
        out.feedback[key] = m.copy()
    for k, v in params.init_hidden.items():
        out.init_hidden[k] = v.copy()
    return out, dense


def feedback_lipschitz_bound(params: RnnParams, topology: RnnTopology) -> float:
    """Upper bound on the Lipschitz constant of s_{t-1} -> s_t (spectral norms).

    ReLU is 1-Lipschitz, so the bound is the product of operator norms along
    the feedback path.
    """
    if topology.variant is Variant.MEMORIZATION:
        return float(np.linalg.norm(params.feedback[(1, 1)], 2))
    if topology.variant is Variant.RECURSIVE:
        last = topology.num_layers - 1
        bound = np.linalg.norm(params.feedback[(1, last)], 2)
        for l in range(2, last + 1):
            bound *= np.linalg.norm(params.feedforward[l - 1], 2)
        return float(bound)
    raise NotImplementedError("bound is only defined for single-path feedback topologies")


def save_checkpoint(params: RnnParams, topology: RnnTopology, path) -> None:
    """Write an .npz container: JSON header plus little-endian float64 arrays."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": topology.variant.value,
        "layer_widths": list(topology.layer_widths),
        "arrays": [name for name, _ in params.arrays()],
    }
    payload = {name: np.ascontiguousarray(a, dtype="<f8") for name, a in params.arrays()}
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=header, **payload)


def load_checkpoint(path) -> tuple[RnnParams, RnnTopology]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not an rnnfilter checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        topology = RnnTopology(Variant(meta["variant"]), tuple(meta["layer_widths"]))
        template = _zero_params(topology)
        names = [name for name, _ in template.arrays()]
        if names != meta["arrays"]:
            raise ValueError("checkpoint arrays do not match its topology")
        params = template._from_pieces([data[name].astype(np.float64) for name in names])
    params.check(topology)
    return params, topology
