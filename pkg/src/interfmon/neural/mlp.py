"""Feedforward networks with hand-written reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _relu(z):
    return np.maximum(z, 0.0)


def _logistic(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# activation -> (f(z), f'(z) expressed through z and a = f(z))
ACTIVATIONS = {
    "relu": (_relu, lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "logistic": (_logistic, lambda z, a: a * (1.0 - a)),
}


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError("an MLP needs at least two positive layer sizes")
        for act in (self.activation, self.output):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "output": self.output}


class Mlp:
    """Dense layers ``a_{l+1} = act(a_l @ W_l + b_l)``; the last layer uses ``spec.output``."""

    def __init__(self, spec: MlpSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (spec.layer_sizes[l], spec.layer_sizes[l + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {l} parameters do not match spec {shape}")

    @classmethod
    def init(cls, spec: MlpSpec, rng) -> "Mlp":
        """Uniform weights in +-sqrt(6 / fan_in), zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            lim = np.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(spec, ws, bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _act(self, l):
        return self.spec.output if l == self.n_layers - 1 else self.spec.activation

    def forward(self, x):
        """Return ``(output, cache)``; the cache feeds :meth:`backward`."""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.spec.layer_sizes[0]:
            raise ValueError(f"expected input of width {self.spec.layer_sizes[0]}, got shape {a.shape}")
        cache = [(a, None)]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = ACTIVATIONS[self._act(l)][0](z)
            cache.append((a, z))
        return a, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given ``dL/d output``.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
        :attr:`params`.
        """
        g = np.asarray(grad_out, dtype=np.float64)
        grads = [None] * (2 * self.n_layers)
        for l in range(self.n_layers - 1, -1, -1):
            a, z = cache[l + 1]
            g = g * ACTIVATIONS[self._act(l)][1](z, a)
            a_prev = cache[l][0]
            grads[2 * l] = a_prev.T @ g
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.weights[l].T
        return grads, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has the wrong length")

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "params": self.get_flat().tolist()}

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        spec = MlpSpec(**{**d["spec"], "layer_sizes": tuple(d["spec"]["layer_sizes"])})
        net = cls.init(spec, np.random.default_rng(0))
        net.set_flat(d["params"])
        return net


class SquaredError:
    """Squared Euclidean error ``||out - target||^2`` averaged over rows.

    With ``per_dim`` the row error is also divided by the output width, which
    keeps the gradient scale independent of the feature count.
    """

    def __init__(self, target, per_dim=False):
        self.target = np.asarray(target, dtype=np.float64)
        self.per_dim = per_dim

    def _n(self, out):
        return out.shape[0] * (out.shape[1] if self.per_dim else 1)

    def value(self, out):
        return float(np.sum((out - self.target) ** 2) / self._n(out))

    def grad(self, out):
        return 2.0 * (out - self.target) / self._n(out)


class LogisticLoss:
    """Binary cross-entropy on probabilities; ``norm`` overrides the row count divisor."""

    def __init__(self, labels, norm=None):
        self.labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
        self.norm = norm

    def _n(self, out):
        return out.shape[0] if self.norm is None else self.norm

    def value(self, p):
        p = np.clip(p, 1e-15, 1 - 1e-15)
        d = self.labels
        return float(-np.sum(d * np.log(p) + (1 - d) * np.log(1 - p)) / self._n(p))

    def grad(self, p):
        p = np.clip(p, 1e-15, 1 - 1e-15)
        return (p - self.labels) / (p * (1 - p)) / self._n(p)


class ConstantLoss:
    def __init__(self, c=0.0):
        self.c = c

    def value(self, out):
        return float(self.c)

    def grad(self, out):
        return np.zeros_like(out)


def forward(model: Mlp, x):
    return model.forward(x)[0]


def grad(model: Mlp, x, loss):
    """Gradients of ``loss(model(x))`` for every parameter, ordered like ``model.params``."""
    out, cache = model.forward(x)
    grads, _ = model.backward(cache, loss.grad(out))
    return grads
