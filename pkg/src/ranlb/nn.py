"""Dense ReLU networks with explicit backprop, Adam and global-norm clipping.

Checkpoint format (``.npz``): ``format`` = "ranlb-densenet", ``version`` = 1,
``widths`` (int array), then ``W0, b0, W1, b1, ...`` with ``W_i`` of shape
(widths[i], widths[i+1]) stored row-major. Extra arrays may ride along
under other keys (e.g. a policy log-std).
"""

from __future__ import annotations

import numpy as np

FORMAT = "ranlb-densenet"
VERSION = 1


class DenseNet:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(self, widths, rng=None, out_scale=1.0):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2:
            raise ValueError("a network needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for i, (fi, fo) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / np.sqrt(fi)
            W = rng.uniform(-bound, bound, size=(fi, fo))
            b = rng.uniform(-bound, bound, size=fo)
            if i == len(self.widths) - 2:
                W *= out_scale
                b *= out_scale
            self.params += [W, b]
        self.version = 0  # bumped on every in-place parameter change

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x):
        """Return ``(output, cache)``; ``x`` is (in,) or (batch, in)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.widths[0]:
            raise ValueError(f"input width {h.shape[1]} does not match network input {self.widths[0]}")
        inputs = []
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        cache = (inputs, single, self.version)
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter."""
        inputs, single, version = cache
        if version != self.version:
            raise ValueError("stale cache: parameters changed since the forward pass")
        g = np.asarray(grad_out, dtype=float)
        g = g[None, :] if single else g
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            h = inputs[i]
            W = self.params[2 * i]
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ W.T
                g = g * (h > 0)  # ReLU'(0) = 0; h is the post-activation of the layer below
        return grads

    def copy(self):
        other = DenseNet.__new__(DenseNet)
        other.widths = self.widths
        other.params = [p.copy() for p in self.params]
        other.version = 0
        return other

    def load_params(self, params):
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise ValueError("parameter shapes do not match the network widths")
        self.params = [np.array(p, dtype=float) for p in params]
        self.version += 1

    def to_arrays(self, prefix=""):
        out = {f"{prefix}widths": np.array(self.widths)}
        for i in range(self.n_layers):
            out[f"{prefix}W{i}"] = self.params[2 * i]
            out[f"{prefix}b{i}"] = self.params[2 * i + 1]
        return out

    @classmethod
    def from_arrays(cls, arrays, prefix=""):
        net = cls.__new__(cls)
        net.widths = tuple(int(w) for w in arrays[f"{prefix}widths"])
        net.params = []
        for i in range(len(net.widths) - 1):
            net.params += [np.array(arrays[f"{prefix}W{i}"], dtype=float), np.array(arrays[f"{prefix}b{i}"], dtype=float)]
        net.version = 0
        return net

    def save(self, path, **extra):
        np.savez(path, format=np.array(FORMAT), version=np.array(VERSION), **self.to_arrays(), **extra)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            check_format(data)
            return cls.from_arrays(data)


def check_format(data):
    if str(data["format"]) != FORMAT or int(data["version"]) != VERSION:
        raise ValueError(f"unsupported checkpoint: {data['format']} v{data['version']}")


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place with bias-corrected Adam."""
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match the optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam):
    state.step(params, grads)
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads, max_norm=0.5):
    """Scale all gradients jointly so their global L2 norm is <= max_norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        return [g * s for g in grads], norm
    return list(grads), norm
