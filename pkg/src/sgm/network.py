"""Fully-connected SiLU network with exact input jets and parameter gradients.

forward_jet propagates value, first, and second directional derivatives
through every layer as truncated Taylor coefficients, so PDE residuals get
machine-precision input derivatives. Because the propagation is written in
terms of the autodiff primitives, running it with taped parameters yields
exact reverse-mode parameter gradients of any scalar built from the jets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, linmap, reshape, silu

CHECKPOINT_VERSION = 1


@dataclass
class Network:
    weights: list  # W_l of shape (d_l, d_{l-1})
    biases: list  # b_l of shape (d_l,)
    encoder: str = "identity"  # or "fourier"
    fourier_freqs: np.ndarray | None = None  # (n_freq, in_dim), fixed

    def __post_init__(self):
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError("layer dimensions do not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape does not match its layer")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("parameters must be finite")
        if self.encoder == "fourier" and self.fourier_freqs is None:
            raise ValueError("fourier encoder needs a frequency matrix")

    @property
    def in_dim(self) -> int:
        if self.encoder == "fourier":
            return self.fourier_freqs.shape[1]
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class JetValue:
    """Value plus first/second directional derivatives along requested axes."""

    value: object  # (B, d_out)
    first: dict  # direction -> (B, d_out)
    second: dict  # (direction, direction) ordered pair i <= j -> (B, d_out)
    directions: tuple


# SiLU shrinks activation variance by ~3-4x at desk activation scales;
# hidden layers get a compensating weight gain so the output stays O(1).
SILU_INIT_GAIN = 2.0


def init_network(in_dim: int, width: int, depth: int, out_dim: int, seed: int = 0,
                 encoder: str = "identity", n_fourier: int = 16,
                 fourier_scale: float = 1.0) -> Network:
    """Gain-corrected Xavier-uniform init with `depth` hidden SiLU layers."""
    rng = np.random.default_rng(seed)
    freqs = None
    first_in = in_dim
    if encoder == "fourier":
        freqs = rng.normal(0.0, fourier_scale, size=(n_fourier, in_dim))
        first_in = 2 * n_fourier
    dims = [first_in] + [width] * depth + [out_dim]
    weights, biases = [], []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        gain = 1.0 if i == len(dims) - 2 else SILU_INIT_GAIN
        limit = gain * np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return Network(weights, biases, encoder, freqs)


def _as_batch(x, in_dim):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != in_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {in_dim}")
    return x, squeeze


def _encode_value(net, x):
    if net.encoder == "identity":
        return x
    z = x @ net.fourier_freqs.T
    return np.concatenate([np.sin(z), np.cos(z)], axis=1)


def _bias_row(b):
    if isinstance(b, Var):
        return reshape(b, (1, -1))
    return np.reshape(b, (1, -1))


def _apply_layers(params, h):
    """Affine+SiLU chain; the final layer stays affine."""
    n = len(params)
    for i, (w, b) in enumerate(params):
        h = linmap(h, w) + _bias_row(b)
        if i < n - 1:
            h = silu(h)
    return h


def forward(net: Network, x, params=None):
    """Batch evaluation; accepts (B, M) or a single M-vector."""
    if params is None:
        params = list(zip(net.weights, net.biases))
    xb, squeeze = _as_batch(x, net.in_dim)
    h = _encode_value(net, xb)
    out = _apply_layers(params, h)
    val = ad._val(out)
    if squeeze and not isinstance(out, Var):
        return val[0]
    return out


def _seed_jets(net, xb, directions):
    """Initial (value, first, second) jets of the encoder output."""
    b = xb.shape[0]
    if net.encoder == "identity":
        m = xb.shape[1]
        value = xb
        first = {}
        for d in directions:
            e = np.zeros((1, m))
            e[0, d] = 1.0
            first[d] = np.broadcast_to(e, (b, m)).copy()
        second = {pair: np.zeros((b, m)) for pair in _pairs(directions)}
        return value, first, second
    freqs = net.fourier_freqs
    z = xb @ freqs.T  # (B, F)
    sin_z, cos_z = np.sin(z), np.cos(z)
    value = np.concatenate([sin_z, cos_z], axis=1)
    first = {}
    for d in directions:
        fd = freqs[:, d][None, :]
        first[d] = np.concatenate([cos_z * fd, -sin_z * fd], axis=1)
    second = {}
    for i, j in _pairs(directions):
        fij = (freqs[:, i] * freqs[:, j])[None, :]
        second[(i, j)] = np.concatenate([-sin_z * fij, -cos_z * fij], axis=1)
    return value, first, second


def _pairs(directions):
    out = []
    for a, i in enumerate(directions):
        for j in directions[a:]:
            out.append((i, j))
    return out


def forward_jet(net: Network, x, directions, params=None) -> JetValue:
    """Exact first and second directional derivatives along coordinate axes.

    directions is a sequence of input feature indices. Mixed second
    derivatives are available for every ordered pair (i, j) with i listed
    before j; symmetry gives the rest.
    """
    directions = tuple(directions)
    if any(d < 0 or d >= net.in_dim for d in directions):
        raise ValueError(f"directions must index input features 0..{net.in_dim - 1}")
    if params is None:
        params = list(zip(net.weights, net.biases))
    xb, _ = _as_batch(x, net.in_dim)
    value, first, second = _seed_jets(net, xb, directions)
    pairs = list(second.keys())

    n = len(params)
    for li, (w, b) in enumerate(params):
        value = linmap(value, w) + _bias_row(b)
        first = {d: linmap(j, w) for d, j in first.items()}
        second = {p: linmap(h, w) for p, h in second.items()}
        if li == n - 1:
            break
        s1 = silu(value, 1)
        s2 = silu(value, 2)
        new_second = {}
        for (i, j) in pairs:
            new_second[(i, j)] = s2 * first[i] * first[j] + s1 * second[(i, j)]
        first = {d: s1 * j for d, j in first.items()}
        second = new_second
        value = silu(value)

    return JetValue(value, first, second, directions)


def jet_first(jet: JetValue, d: int):
    return jet.first[d]


def jet_second(jet: JetValue, i: int, j: int):
    if (i, j) in jet.second:
        return jet.second[(i, j)]
    return jet.second[(j, i)]


class TapedParams:
    """Network parameters wrapped as tape Vars for one gradient evaluation."""

    def __init__(self, net: Network, tape: Tape):
        self.net = net
        self.tape = tape
        self.weight_vars = [tape.new_var(w) for w in net.weights]
        self.bias_vars = [tape.new_var(b) for b in net.biases]
        self.params = list(zip(self.weight_vars, self.bias_vars))

    def forward(self, x):
        return forward(self.net, x, params=self.params)

    def forward_jet(self, x, directions):
        return forward_jet(self.net, x, directions, params=self.params)


def param_grad(net: Network, loss_fn):
    """Reverse-mode gradient of a scalar loss w.r.t. every weight and bias.

    loss_fn receives a TapedParams handle exposing forward/forward_jet and
    must return a scalar Var built from them via the autodiff ops.
    Returns (loss_value, grads) with grads a list of (dW, db) per layer.
    """
    tape = Tape()
    handle = TapedParams(net, tape)
    loss = loss_fn(handle)
    if not isinstance(loss, Var):
        raise TypeError("loss_fn must return a taped scalar")
    grads_by_index = tape.backward(loss)
    grads = []
    for wv, bv in handle.params:
        dw = grads_by_index.get(wv.index)
        db = grads_by_index.get(bv.index)
        dw = np.zeros_like(net.weights[len(grads)]) if dw is None else dw
        db = np.zeros_like(net.biases[len(grads)]) if db is None else db
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise FloatingPointError(
                f"non-finite parameter gradient in layer {len(grads)} "
                f"(loss={float(loss.value)!r})"
            )
        grads.append((dw, db))
    return float(loss.value), grads


@dataclass
class Optimizer:
    kind: str = "adam"
    lr: float = 1e-3
    decay: float = 1.0  # multiplicative factor applied every decay_every steps
    decay_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1] so the schedule never increases")

    def current_lr(self) -> float:
        if self.decay_every and self.decay < 1.0:
            return self.lr * self.decay ** (self.t // self.decay_every)
        return self.lr


def step(opt: Optimizer, net: Network, grads) -> Network:
    """One update in place; plain gradient descent or bias-corrected Adam."""
    lr = opt.current_lr()
    if opt.kind == "sgd":
        for (w, b), (dw, db) in zip(zip(net.weights, net.biases), grads):
            w -= lr * dw
            b -= lr * db
        opt.t += 1
        return net
    if not opt.m:
        opt.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
        opt.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for layer, (dw, db) in enumerate(grads):
        for slot, g, p in ((0, dw, net.weights[layer]), (1, db, net.biases[layer])):
            m = opt.m[layer][slot]
            v = opt.v[layer][slot]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net


def save_checkpoint(net: Network, path) -> None:
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "n_layers": np.int64(len(net.weights)),
        "encoder": np.bytes_(net.encoder.encode()),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    if net.fourier_freqs is not None:
        payload["fourier_freqs"] = net.fourier_freqs
    np.savez(path, **payload)


def load_checkpoint(path) -> Network:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n_layers = int(data["n_layers"])
        weights = [data[f"w{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
        encoder = bytes(data["encoder"]).decode()
        freqs = data["fourier_freqs"] if "fourier_freqs" in data else None
    return Network(weights, biases, encoder, freqs)
