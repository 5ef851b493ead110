"""LSTM cell and unroll, state pooling, and state-transition regularizers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .errors import ConfigurationError, EmptySequenceError, ShapeError

POOLING_KINDS = ("mean", "last", "expsmooth")
REGULARIZER_KINDS = ("none", "norm_stabilizer", "coherence")
GATES = ("c", "f", "i", "o")  # candidate memory, forget, input, output


@dataclass(frozen=True)
class PoolingConfig:
    kind: str = "last"
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in POOLING_KINDS:
            raise ConfigurationError(f"unknown pooling {self.kind!r}; expected one of {POOLING_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "none"
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ConfigurationError(f"unknown regularizer {self.kind!r}")
        if not self.beta >= 0.0:
            raise ConfigurationError(f"beta must be nonnegative, got {self.beta}")


class LstmState(NamedTuple):
    c: dc.Node
    h: dc.Node


class LstmParams:
    """Weights of a single-layer LSTM without peepholes.

    Each of the four blocks (candidate ``c`` and gates ``f``, ``i``, ``o``)
    has an input matrix ``W_*`` (hidden x input), a recurrent matrix
    ``U_*`` (hidden x hidden) and a bias ``b_*``.
    """

    def __init__(self, input_dim, hidden_dim, rng=None, forget_bias=1.0):
        if input_dim < 1 or hidden_dim < 1:
            raise ConfigurationError("LSTM dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(0) if rng is None else rng
        H, m = hidden_dim, input_dim
        lim_w = np.sqrt(6.0 / (m + H))
        lim_u = np.sqrt(6.0 / (2 * H))
        self.W, self.U, self.b = {}, {}, {}
        for g in GATES:
            self.W[g] = dc.Parameter(rng.uniform(-lim_w, lim_w, (H, m)), name=f"lstm.W_{g}")
            self.U[g] = dc.Parameter(rng.uniform(-lim_u, lim_u, (H, H)), name=f"lstm.U_{g}")
            bias = np.full(H, forget_bias) if g == "f" else np.zeros(H)
            self.b[g] = dc.Parameter(bias, name=f"lstm.b_{g}")

    def parameters(self):
        out = []
        for g in GATES:
            out += [self.W[g], self.U[g], self.b[g]]
        return out

    def zero_state(self, batch=None):
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return LstmState(dc.Node(np.zeros(shape)), dc.Node(np.zeros(shape)))


def _affine(params, g, v, h):
    return dc.affine([(params.W[g], v), (params.U[g], h)], params.b[g])


def lstm_step(params, v, prev, return_gates=False):
    """One LSTM update from input ``v`` and previous state ``prev``.

    ``v`` is a vector of length input_dim or a (batch, input_dim) array.
    """
    v = dc.as_node(v)
    if v.shape[-1] != params.input_dim:
        raise ShapeError(f"input of width {v.shape[-1]} given to LSTM expecting {params.input_dim}")
    if prev.h.shape[-1] != params.hidden_dim or prev.c.shape != prev.h.shape:
        raise ShapeError(f"state shapes {prev.c.shape}/{prev.h.shape} do not match hidden dim {params.hidden_dim}")
    f = dc.elementwise("sigmoid", _affine(params, "f", v, prev.h))
    i = dc.elementwise("sigmoid", _affine(params, "i", v, prev.h))
    o = dc.elementwise("sigmoid", _affine(params, "o", v, prev.h))
    cand = dc.elementwise("tanh", _affine(params, "c", v, prev.h))
    c = dc.add(dc.mul(f, prev.c), dc.mul(i, cand))
    h = dc.mul(o, dc.elementwise("tanh", c))
    state = LstmState(c, h)
    if return_gates:
        return state, {"f": f.value, "i": i.value, "o": o.value, "candidate": cand.value}
    return state


def unroll(params, visit_vectors, initial=None):
    """Run the LSTM over a sequence of inputs, returning every state."""
    visit_vectors = list(visit_vectors)
    if not visit_vectors:
        return []
    if initial is None:
        first = dc.as_node(visit_vectors[0])
        initial = params.zero_state(None if first.value.ndim == 1 else first.shape[0])
    states, state = [], initial
    for v in visit_vectors:
        state = lstm_step(params, v, state)
        states.append(state)
    return states


def _hs(states):
    return [s.h if isinstance(s, LstmState) else dc.as_node(s) for s in states]


def pooled_prefixes(states, cfg):
    """Pooled state after each prefix ``h_1..h_t``, for t = 1..T, in O(T)."""
    hs = _hs(states)
    out = []
    if cfg.kind == "last":
        return hs
    if cfg.kind == "mean":
        running = None
        for t, h in enumerate(hs, start=1):
            running = h if running is None else dc.add(running, h)
            out.append(running if t == 1 else dc.scale(running, 1.0 / t))
        return out
    a = cfg.alpha
    smooth = None
    for h in hs:
        smooth = h if smooth is None else dc.add(dc.scale(smooth, a), dc.scale(h, 1.0 - a))
        out.append(smooth)
    return out


def pool(states, cfg=PoolingConfig()):
    """Reduce ``h_1..h_T`` to one vector: mean, last, or exponential smoothing.

    Exponential smoothing uses ``s_1 = h_1`` and
    ``s_t = alpha * s_(t-1) + (1 - alpha) * h_t``.
    """
    hs = _hs(states)
    if not hs:
        raise EmptySequenceError("cannot pool an empty state sequence")
    if cfg.kind == "last":
        return hs[-1]
    return pooled_prefixes(hs, cfg)[-1]


def _lengths_weight(hs, lengths):
    """Per-step validity mask for padded batches, or None for a single sequence."""
    if lengths is None:
        return None
    lengths = np.asarray(lengths)
    T = len(hs)
    return (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)


def _transition_penalty(hs, beta, lengths, term):
    hs = _hs(hs)
    if not hs:
        raise EmptySequenceError("regularizer needs at least one state")
    T = len(hs)
    batch_shape = hs[0].shape[:-1]
    if T == 1 or beta == 0.0:
        return dc.Node(np.zeros(batch_shape))
    mask = _lengths_weight(hs, lengths)
    acc = None
    for t in range(1, T):
        d = term(hs[t], hs[t - 1])
        if mask is not None:
            d = dc.mul(d, mask[t])
        acc = d if acc is None else dc.add(acc, d)
    denom = float(T) if lengths is None else np.asarray(lengths, dtype=np.float64)
    return dc.scale(dc.div(acc, denom), beta)


def _norm_gap(a, b):
    d = dc.sub(dc.norm(a), dc.norm(b))
    return dc.mul(d, d)


def _sq_dist(a, b):
    d = dc.sub(a, b)
    return dc.total(dc.mul(d, d), axis=-1)


def norm_stabilizer(states, beta, lengths=None):
    """``beta / T * sum_t (|h_t| - |h_(t-1)|)**2`` over t = 2..T.

    For a padded batch pass ``lengths``; each sequence is then divided by
    its own length and the result has one entry per sequence.
    """
    return _transition_penalty(states, beta, lengths, _norm_gap)


def coherence_penalty(states, beta, lengths=None):
    """``beta / T * sum_t |h_t - h_(t-1)|**2`` over t = 2..T."""
    return _transition_penalty(states, beta, lengths, _sq_dist)


def regularizer(states, cfg, lengths=None):
    if cfg.kind == "norm_stabilizer":
        return norm_stabilizer(states, cfg.beta, lengths)
    if cfg.kind == "coherence":
        return coherence_penalty(states, cfg.beta, lengths)
    batch_shape = _hs(states)[0].shape[:-1] if states else ()
    return dc.Node(np.zeros(batch_shape))
