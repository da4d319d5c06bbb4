"""Dense numerics substrate: ridge solves, seeded RNG, a tanh MLP and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class SingularDesignError(ValueError):
    pass


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox-backed generator; ``keys`` derive independent sub-streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def solve_ridge(X, y, lam: float = 0.0) -> np.ndarray:
    """Minimise ``||X theta - y||^2 + lam ||theta||^2`` via Cholesky.

    Raises SingularDesignError when the regularised Gram matrix is not
    numerically positive definite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"X must be a non-empty matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y must have length {X.shape[0]}, got shape {y.shape}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    gram = X.T @ X
    gram[np.diag_indices_from(gram)] += lam
    scale = max(float(np.max(np.abs(np.diag(gram)))), 1e-300)
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularDesignError("singular design matrix (set lam > 0)") from exc
    pivots = np.abs(np.diag(factor[0])) ** 2
    if np.min(pivots) <= 1e-13 * scale:
        raise SingularDesignError("singular design matrix (set lam > 0)")
    return linalg.cho_solve(factor, X.T @ y)


@dataclass
class Mlp:
    """Feed-forward network: tanh on hidden layers, identity on the output.

    Inputs are batched row-wise, ``x`` of shape (batch, widths[0]).
    """

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, widths, rng: np.random.Generator, zero: bool = False) -> "Mlp":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid widths {widths}")
        weights, biases = [], []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            if zero:
                weights.append(np.zeros((w_in, w_out)))
            else:
                weights.append(rng.normal(0.0, 1.0 / np.sqrt(w_in), size=(w_in, w_out)))
            biases.append(np.zeros(w_out))
        return cls(widths, weights, biases)

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ValueError(f"expected inputs of width {self.widths[0]}, got shape {x.shape}")
        return x

    def forward(self, x, keep: bool = False):
        h = self._check(x)
        acts = [h]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, grad_out):
        """Backpropagate ``grad_out`` (d loss / d output) through cached activations.

        Returns (param grads in ``params()`` order, d loss / d input).
        """
        g = np.asarray(grad_out, dtype=np.float64)
        grads: list[np.ndarray] = []
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            if k < last:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads.append(g.sum(axis=0))
            grads.append(acts[k].T @ g)
            g = g @ self.weights[k].T
        grads.reverse()
        return grads, g

    def input_gradient(self, x) -> np.ndarray:
        """d output / d input for a scalar-output network; rows match ``x``."""
        if self.widths[-1] != 1:
            raise ValueError("input_gradient needs a scalar-output network")
        out, acts = self.forward(x, keep=True)
        _, gx = self.backward(acts, np.ones_like(out))
        return gx


def mlp_forward(model: Mlp, x) -> float:
    """Scalar output for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("mlp_forward takes one input vector")
    out = model.forward(x)
    if out.shape[1] != 1:
        raise ValueError("mlp_forward needs a scalar-output network")
    return float(out[0, 0])


def mlp_backward(model: Mlp, X, y) -> list[np.ndarray]:
    """Gradient of mean squared error over the batch w.r.t. ``model.params()``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, model.widths[-1])
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a non-empty matrix")
    if y.shape[0] != X.shape[0]:
        raise ValueError("inputs and targets disagree on batch size")
    out, acts = model.forward(X, keep=True)
    grads, _ = model.backward(acts, 2.0 * (out - y) / y.size)
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """In-place Adam update of ``params`` with bias correction; returns the state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state disagree in length")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class Adam:
    """Convenience wrapper holding Adam state for a fixed parameter list."""

    params: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like(self.params)

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
