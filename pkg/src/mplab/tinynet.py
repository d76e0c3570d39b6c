"""Dense ReLU networks with manual backpropagation, dropout and Adam.

A :class:`Network` is a chain of affine layers.  Hidden layers apply ReLU
followed by (inverted) dropout; the last layer is linear.  All randomness
comes from explicit seeds.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"MPLAB-CK v1\n"


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class Layer:
    W: np.ndarray          # (fan_in, fan_out)
    b: np.ndarray          # (fan_out,)
    relu: bool
    dropout: float = 0.0


@dataclass
class Network:
    layers: list[Layer]
    bayesian: bool = False
    _cache: list | None = field(default=None, repr=False, compare=False)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].W.shape[0]] + [L.W.shape[1] for L in self.layers]

    @property
    def rates(self) -> list[float]:
        return [L.dropout for L in self.layers]

    @property
    def parameter_count(self) -> int:
        return sum(L.W.size + L.b.size for L in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for L in self.layers:
            out += [L.W, L.b]
        return out

    def copy(self) -> "Network":
        return Network([Layer(L.W.copy(), L.b.copy(), L.relu, L.dropout) for L in self.layers],
                       self.bayesian)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])


def init_network(sizes, seed: int, dropout=0.0, bayesian: bool = False) -> Network:
    """Glorot-uniform weights, zero biases.

    ``dropout`` is a single rate for every hidden layer or one rate per
    hidden layer.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be >= 2 positive integers, got {sizes}")
    n_hidden = len(sizes) - 2
    rates = [float(dropout)] * n_hidden if np.isscalar(dropout) else [float(r) for r in dropout]
    if len(rates) != n_hidden:
        raise ValueError(f"{len(rates)} dropout rates for {n_hidden} hidden layers")
    if any(not 0.0 <= r < 1.0 for r in rates):
        raise ValueError(f"dropout rates must lie in [0, 1), got {rates}")
    rng = np.random.default_rng([seed, 0x1417])
    layers = []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = glorot_bound(fi, fo)
        W = rng.uniform(-lim, lim, size=(fi, fo))
        hidden = i < n_hidden
        layers.append(Layer(W, np.zeros(fo), relu=hidden, dropout=rates[i] if hidden else 0.0))
    return Network(layers, bayesian)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def forward(net: Network, x, mode: str = "eval", seed: int = 0, mc: bool | None = None):
    """Run the network on ``x`` of shape ``(n_in,)`` or ``(batch, n_in)``.

    Dropout is active in ``"train"`` mode, and in ``"eval"`` mode when
    ``mc`` is set (defaults to the network's Bayesian flag).  Train mode
    retains activations for :func:`backward`.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.ndim != 2 or h.shape[1] != net.sizes[0]:
        raise ValueError(f"input shape {x.shape} does not match network input ({net.sizes[0]},)")
    use_mc = net.bayesian if mc is None else mc
    drop = mode == "train" or use_mc
    rng = np.random.default_rng([seed, 0xD409]) if drop else None
    cache = []
    for L in net.layers:
        inp = h
        z = inp @ L.W + L.b
        mask = None
        if L.relu:
            h = np.maximum(z, 0.0)
            if drop and L.dropout > 0:
                mask = (rng.random(h.shape) >= L.dropout) / (1.0 - L.dropout)
                h = h * mask
        else:
            h = z
        cache.append((inp, z, mask))
    net._cache = cache if mode == "train" else None
    if not np.all(np.isfinite(h)):
        raise TrainingDivergence("non-finite network output")
    return h[0] if single else h


def backward(net: Network, grad_out) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients ``[(dW, db), ...]`` for the last train-mode forward pass."""
    if net._cache is None:
        raise RuntimeError("backward needs a preceding forward pass in train mode")
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None]
    grads = []
    last = len(net.layers) - 1
    for i, (L, (inp, z, mask)) in enumerate(zip(reversed(net.layers), reversed(net._cache))):
        if L.relu:
            if mask is not None:
                g = g * mask
            g = g * (z > 0)
        grads.append((inp.T @ g, g.sum(axis=0)))
        if i < last:  # the input gradient of the first layer is never needed
            g = g @ L.W.T
    grads.reverse()
    return grads


def input_gradient(net: Network, grad_out) -> np.ndarray:
    """Gradient with respect to the input of the last train-mode forward pass."""
    if net._cache is None:
        raise RuntimeError("input_gradient needs a preceding forward pass in train mode")
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    for L, (inp, z, mask) in zip(reversed(net.layers), reversed(net._cache)):
        if L.relu:
            if mask is not None:
                g = g * mask
            g = g * (z > 0)
        g = g @ L.W.T
    return g


@dataclass
class AdamState:
    t: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, net: Network) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in net.params()],
                   [np.zeros_like(p) for p in net.params()])


def adam_step(net: Network, grads, state: AdamState | None, lr: float):
    """One bias-corrected Adam update, applied in place; returns ``(net, state)``."""
    if state is None:
        state = AdamState.fresh(net)
    flat = [g for pair in grads for g in pair]
    params = net.params()
    if len(flat) != len(params):
        raise ValueError(f"{len(flat)} gradient arrays for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, flat)):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter array {i} at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def gradient_check(loss_and_grad, net: Network, n_probes: int = 100, seed: int = 0,
                   step: float = 1e-5, floor: float = 1e-7) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The denominator is ``max(|numeric|, |analytic|, floor)``, so gradients
    that are both near zero are compared in absolute terms.

    ``loss_and_grad(net)`` returns ``(loss, grads)`` in :func:`backward` layout
    and must be deterministic.  ``n_probes`` parameters are sampled at random.
    """
    _, grads = loss_and_grad(net)
    params = net.params()
    flat_g = [g for pair in grads for g in pair]
    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = np.unravel_index(int(rng.integers(params[k].size)), params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + step
        lp, _ = loss_and_grad(net)
        params[k][idx] = orig - step
        lm, _ = loss_and_grad(net)
        params[k][idx] = orig
        num = (lp - lm) / (2 * step)
        ana = flat_g[k][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


# checkpoints ------------------------------------------------------------

def _write_network(buf, net: Network):
    sizes = net.sizes
    buf.write(struct.pack("<I", len(sizes)))
    buf.write(struct.pack(f"<{len(sizes)}I", *sizes))
    buf.write(struct.pack("<B", int(net.bayesian)))
    for L in net.layers:
        buf.write(struct.pack("<dB", L.dropout, int(L.relu)))
    for p in net.params():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_network(buf) -> Network:
    (n,) = struct.unpack("<I", buf.read(4))
    sizes = struct.unpack(f"<{n}I", buf.read(4 * n))
    (bayes,) = struct.unpack("<B", buf.read(1))
    meta = [struct.unpack("<dB", buf.read(9)) for _ in range(n - 1)]
    layers = []
    for (fi, fo), (rate, relu) in zip(zip(sizes[:-1], sizes[1:]), meta):
        W = np.frombuffer(buf.read(8 * fi * fo), dtype="<f8").reshape(fi, fo).astype(float)
        b = np.frombuffer(buf.read(8 * fo), dtype="<f8").astype(float)
        if W.size != fi * fo or b.size != fo:
            raise ValueError("truncated checkpoint")
        layers.append(Layer(W, b, bool(relu), rate))
    return Network(layers, bool(bayes))


def checkpoint_bytes(nets: dict[str, Network], meta: dict | None = None) -> bytes:
    """Serialise named networks plus JSON metadata as MPLAB-CK v1."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    m = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(m)))
    buf.write(m)
    buf.write(struct.pack("<I", len(nets)))
    for name in sorted(nets):
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        _write_network(buf, nets[name])
    return buf.getvalue()


def parse_checkpoint(data: bytes) -> tuple[dict[str, Network], dict]:
    buf = io.BytesIO(data)
    if buf.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("not an MPLAB-CK v1 checkpoint")
    (ml,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(ml).decode())
    (count,) = struct.unpack("<I", buf.read(4))
    nets = {}
    for _ in range(count):
        (nl,) = struct.unpack("<I", buf.read(4))
        name = buf.read(nl).decode()
        nets[name] = _read_network(buf)
    if buf.read(1):
        raise ValueError("trailing bytes after checkpoint")
    return nets, meta


def save_checkpoint(path, nets: dict[str, Network], meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(nets, meta))


def load_checkpoint(path) -> tuple[dict[str, Network], dict]:
    return parse_checkpoint(Path(path).read_bytes())
