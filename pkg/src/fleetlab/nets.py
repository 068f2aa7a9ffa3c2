"""Dense networks with hand-rolled backprop.

Policies and critics are small multilayer perceptrons (tanh hidden layers,
linear output) over float64 numpy arrays. Forward passes are pure functions
of (parameters, input); gradients come from explicit reverse passes and are
validated against central finite differences by `grad_check`.

Checkpoints use a flat binary layout: magic bytes, world metadata, then for
each of the four networks its layer widths and row-major float64 weights and
biases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .util import as_rng

CHECKPOINT_MAGIC = b"FLTPOL01"


class Mlp:
    """Fully connected tanh network. `widths` includes input and output."""

    def __init__(self, widths, weights=None, biases=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("widths must list at least input and output sizes")
        if weights is None:
            self.weights = [np.zeros((o, i)) for i, o in zip(self.widths, self.widths[1:])]
            self.biases = [np.zeros(o) for o in self.widths[1:]]
        else:
            self.weights = [np.asarray(w, dtype=float) for w in weights]
            self.biases = [np.asarray(b, dtype=float) for b in biases]
            for w, b, i, o in zip(self.weights, self.biases,
                                  self.widths, self.widths[1:]):
                if w.shape != (o, i) or b.shape != (o,):
                    raise ValueError("parameter shapes do not match widths")

    @classmethod
    def init(cls, widths, seed, final_scale: float = 1.0) -> "Mlp":
        """Scaled-normal init (std 1/sqrt(fan_in)); the last layer can be
        shrunk to start policies near uniform."""
        rng = as_rng(seed)
        net = cls(widths)
        last = len(net.weights) - 1
        for k, w in enumerate(net.weights):
            std = 1.0 / np.sqrt(w.shape[1])
            if k == last:
                std *= final_scale
            net.weights[k] = rng.normal(0.0, std, size=w.shape)
        return net

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping activations for a later backward pass.
        Accepts a single vector or a (batch, in_dim) matrix."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != self.in_dim:
            raise ValueError(f"input width {a.shape[1]} != expected {self.in_dim}")
        acts = [a]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            acts.append(z if k == last else np.tanh(z))
        out = acts[-1]
        return (out[0] if single else out), (acts, single)

    def backward(self, cache, dout):
        """Gradients of sum(dout * output) w.r.t. all parameters.

        Returns (grads, dinput) where grads is a list of (dW, db) matching
        layer order.
        """
        acts, single = cache
        d = np.asarray(dout, dtype=float)
        if single:
            d = d[None, :]
        grads = []
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            a_prev = acts[k]
            dw = d.T @ a_prev
            db = d.sum(axis=0)
            grads.append((dw, db))
            if k > 0:
                d = (d @ self.weights[k]) * (1.0 - acts[k] ** 2)
        grads.reverse()
        return grads, (d @ self.weights[0] if last >= 0 else d)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases)
                               for p in pair])

    def set_flat_params(self, theta: np.ndarray) -> None:
        k = 0
        for idx in range(len(self.weights)):
            w, b = self.weights[idx], self.biases[idx]
            self.weights[idx] = theta[k:k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[idx] = theta[k:k + b.size].copy()
            k += b.size
        if k != theta.size:
            raise ValueError("flat parameter vector has the wrong length")

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def grad_check(net: Mlp, x: np.ndarray, loss_fn, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn(output_vector) -> (loss, dloss_doutput)` defines the scalar
    objective; every parameter of the net is perturbed.
    """
    out, cache = net.forward_cached(x)
    _, dout = loss_fn(out)
    grads, _ = net.backward(cache, np.asarray(dout, dtype=float))
    analytic = np.concatenate([g.ravel() for pair in grads for g in pair])

    theta0 = net.flat_params()
    numeric = np.zeros_like(theta0)
    probe = net.copy()
    for k in range(theta0.size):
        theta = theta0.copy()
        theta[k] += step
        probe.set_flat_params(theta)
        lp, _ = loss_fn(probe.forward(x))
        theta[k] -= 2.0 * step
        probe.set_flat_params(theta)
        lm, _ = loss_fn(probe.forward(x))
        numeric[k] = (lp - lm) / (2.0 * step)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class PolicyBundle:
    """The four networks of the two-level scheduler plus world metadata."""

    high_policy: Mlp
    high_critic: Mlp
    low_policy: Mlp
    low_critic: Mlp
    regions: int
    intervals: int
    horizon: int

    @staticmethod
    def high_input_dim(regions: int, horizon: int) -> int:
        # wide worlds pool the forecast over destinations to bound width
        if regions > 20:
            return regions + horizon * regions
        return regions + horizon * regions * regions

    @staticmethod
    def low_input_dim(regions: int) -> int:
        # one-hot location, two census vectors, origin forecast, battery, time
        return 4 * regions + 2

    @classmethod
    def create(cls, regions: int, intervals: int, horizon: int | None = None,
               seed=0, hidden=(64, 64)) -> "PolicyBundle":
        h = intervals if horizon is None else horizon
        if not 1 <= h <= intervals:
            raise ValueError("horizon must be in [1, intervals]")
        rng = as_rng(seed)
        seeds = rng.integers(0, 2**63 - 1, size=4)
        d_high = cls.high_input_dim(regions, h)
        d_low = cls.low_input_dim(regions)
        return cls(
            high_policy=Mlp.init([d_high, *hidden, regions], seeds[0], final_scale=0.01),
            high_critic=Mlp.init([d_high, *hidden, 1], seeds[1]),
            low_policy=Mlp.init([d_low, *hidden, regions], seeds[2], final_scale=0.01),
            low_critic=Mlp.init([d_low, *hidden, 1], seeds[3]),
            regions=regions, intervals=intervals, horizon=h)

    def copy(self) -> "PolicyBundle":
        return PolicyBundle(self.high_policy.copy(), self.high_critic.copy(),
                            self.low_policy.copy(), self.low_critic.copy(),
                            self.regions, self.intervals, self.horizon)

    def nets(self):
        return (self.high_policy, self.high_critic, self.low_policy, self.low_critic)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<III", self.regions, self.intervals, self.horizon))
            for net in self.nets():
                fh.write(struct.pack("<I", len(net.widths)))
                fh.write(struct.pack(f"<{len(net.widths)}I", *net.widths))
                for w, b in zip(net.weights, net.biases):
                    fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                    fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PolicyBundle":
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a policy checkpoint")
            regions, intervals, horizon = struct.unpack("<III", fh.read(12))
            nets = []
            for _ in range(4):
                (depth,) = struct.unpack("<I", fh.read(4))
                widths = struct.unpack(f"<{depth}I", fh.read(4 * depth))
                weights, biases = [], []
                for i, o in zip(widths, widths[1:]):
                    w = np.frombuffer(fh.read(8 * i * o), dtype="<f8").reshape(o, i)
                    b = np.frombuffer(fh.read(8 * o), dtype="<f8")
                    weights.append(w.astype(float))
                    biases.append(b.astype(float))
                nets.append(Mlp(widths, weights, biases))
        return cls(*nets, regions=regions, intervals=intervals, horizon=horizon)
