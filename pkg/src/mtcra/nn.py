"""Small fully connected Q-network with hand-written backpropagation.

All parameters live in one flat float64 vector ``theta``; the per-layer weight
and bias arrays are reshaped views into it. That keeps the optimizer, target
copies and checkpoints trivial (one array each).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

CHECKPOINT_FORMAT = "mtcra-mlp"
CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Raised when a gradient, loss or target stops being finite."""


def _layout(sizes):
    shapes = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((d_in, d_out))
        shapes.append((d_out,))
    return shapes


class Mlp:
    """ReLU network ``sizes[0] -> sizes[1] -> sizes[2] -> sizes[3]``.

    Exactly two hidden layers; the output layer is linear.
    """

    def __init__(self, sizes, theta=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) != 4 or min(sizes) < 1:
            raise ValueError(f"need 4 positive layer sizes, got {sizes}")
        self.sizes = sizes
        self.shapes = _layout(sizes)
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)
        if theta is None:
            theta = np.zeros(self.n_params)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.n_params},)")
        self.theta = theta
        self.params = self.views(self.theta)

    @classmethod
    def init(cls, sizes, rng):
        """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        net = cls(sizes)
        for i, p in enumerate(net.params):
            fan_in = net.sizes[i // 2]
            bound = 1.0 / np.sqrt(fan_in)
            p[...] = rng.uniform(-bound, bound, size=p.shape)
        return net

    def views(self, flat):
        out = []
        offset = 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(flat[offset:offset + size].reshape(shape))
            offset += size
        return out

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def copy(self):
        return Mlp(self.sizes, self.theta.copy())

    def __repr__(self):
        return f"Mlp(sizes={self.sizes})"


def _check_input(net, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(
            f"input must have shape (M, {net.in_dim}), got {x.shape}")
    return x


def forward(net, states):
    """Q-values for every row of ``states``; shape ``(M, n_actions)``."""
    x = _check_input(net, states)
    return kernels.mlp_forward(x, *net.params)


def loss_and_gradient(net, states, actions, targets):
    """Mean squared TD error over the batch and its gradient w.r.t. theta.

    Only the output unit of the taken action receives signal; ``targets`` are
    treated as constants.
    """
    x = _check_input(net, states)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    m = x.shape[0]
    if actions.shape != (m,) or targets.shape != (m,):
        raise ValueError("actions and targets must be 1-D with one entry per row")
    if m and (actions.min() < 0 or actions.max() >= net.out_dim):
        raise ValueError("action index out of range")
    grad = np.empty(net.n_params)
    loss = kernels.mlp_grad(x, actions, targets, *net.params, *net.views(grad))
    return loss, grad


def backward(net, states, actions, targets):
    return loss_and_gradient(net, states, actions, targets)[1]


@dataclass
class Adam:
    n_params: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m1: np.ndarray = field(default=None, repr=False)
    m2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.m1 is None:
            self.m1 = np.zeros(self.n_params)
        if self.m2 is None:
            self.m2 = np.zeros(self.n_params)


def step(net, opt, grad):
    """One Adam update of ``net.theta`` in place. Returns ``net``."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.shape != net.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != {net.theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient entries")
    opt.t += 1
    kernels.adam_update(net.theta, grad, opt.m1, opt.m2, opt.lr,
                        opt.beta1, opt.beta2, opt.eps, float(opt.t))
    return net


def clone_into_target(net, target=None):
    """Deep copy of ``net``; reuses ``target``'s storage when given."""
    if target is None:
        return net.copy()
    if target.sizes != net.sizes:
        raise ValueError("target architecture differs from source")
    target.theta[...] = net.theta
    return target


def save_checkpoint(net, path, meta=None):
    """Write ``theta`` and the layer sizes to an ``.npz`` file (bit-exact)."""
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sizes": list(net.sizes),
        "meta": meta or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                 theta=net.theta)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Returns ``(net, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        theta = data["theta"].copy()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return Mlp(header["sizes"], theta), header.get("meta", {})
