"""Small fully-connected network with hand-rolled backprop.

Kept deliberately tiny (tanh, dense layers) so gradients can be verified
against finite differences and parameters serialize to plain JSON arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError


def _act(name):
    if name == "tanh":
        return np.tanh, lambda a: 1.0 - a * a  # derivative from activation value
    if name == "softplus":
        return (lambda z: np.logaddexp(0.0, z),
                lambda a: 1.0 - np.exp(-a))
    raise ContractViolationError(f"unknown activation {name!r}")


class MLP:
    """Dense net: sizes = [in, hidden..., out]; linear final layer."""

    def __init__(self, sizes, activation="tanh", seed=0, zero_final=False):
        if len(sizes) < 2:
            raise ContractViolationError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.activation = activation
        self._f, self._df = _act(activation)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        if zero_final:
            self.weights[-1][:] = 0.0

    def forward(self, X):
        """X: (batch, in) -> (Y, cache) with Y: (batch, out)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = z if i == last else self._f(z)
            acts.append(h)
        return h, acts

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, acts, dY):
        """Gradients of sum(dY * Y) w.r.t. parameters; returns (dWs, dbs)."""
        dWs = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        delta = np.atleast_2d(np.asarray(dY, dtype=float))
        for i in range(len(self.weights) - 1, -1, -1):
            dWs[i] = delta.T @ acts[i]
            dbs[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * self._df(acts[i])
        return dWs, dbs

    # flat parameter vector helpers (finite-difference checks, SPSA)
    def get_flat(self):
        return np.concatenate([W.ravel() for W in self.weights]
                              + [b.ravel() for b in self.biases])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        i = 0
        for W in self.weights:
            W[:] = flat[i:i + W.size].reshape(W.shape)
            i += W.size
        for b in self.biases:
            b[:] = flat[i:i + b.size]
            i += b.size
        if i != flat.size:
            raise ContractViolationError("flat parameter vector has wrong length")

    def flat_grads(self, dWs, dbs):
        return np.concatenate([g.ravel() for g in dWs] + [g.ravel() for g in dbs])

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "activation": self.activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc):
        net = cls(doc["sizes"], activation=doc["activation"])
        net.weights = [np.asarray(W, dtype=float) for W in doc["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return net

    def copy(self):
        return MLP.from_dict(self.to_dict())


class Adam:
    """Adaptive-moment optimizer on the network's flat parameter vector."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ContractViolationError("learning rate must be nonnegative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads ** 2
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)


class SGD:
    """Plain stochastic gradient descent."""

    def __init__(self, lr=1e-2):
        if lr < 0:
            raise ContractViolationError("learning rate must be nonnegative")
        self.lr = lr

    def step(self, params, grads):
        return params - self.lr * grads
