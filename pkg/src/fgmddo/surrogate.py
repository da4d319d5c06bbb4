"""Clique-decomposed surrogate models.

Discrete spaces use ridge regression on per-clique one-hot features over joint
clique configurations. Continuous spaces use one shared tanh MLP applied to
zero-masked copies of the input, one copy per clique.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bench import Dataset
from .fgm import CliqueSet
from .numkit import Adam, Mlp, make_rng, solve_ridge


class TrainingDivergedError(RuntimeError):
    pass


def _norm_cliques(cliques, d: int) -> CliqueSet:
    out = []
    for c in cliques:
        c = tuple(sorted(int(k) for k in c))
        if not c:
            raise ValueError("empty clique")
        if any(k < 0 or k >= d for k in c):
            raise ValueError(f"clique {c} references an index outside 0..{d - 1}")
        out.append(c)
    if not out:
        raise ValueError("at least one clique is required")
    return out


@dataclass
class OneHotCliqueModel:
    cliques: CliqueSet
    cardinalities: tuple[int, ...]
    theta: np.ndarray
    lam: float
    y_offset: float

    def __post_init__(self):
        self._sizes = [math.prod(self.cardinalities[k] for k in c) for c in self.cliques]
        self._starts = np.concatenate([[0], np.cumsum(self._sizes)[:-1]]).astype(np.int64)
        # mixed-radix place values, first clique variable most significant
        self._radix = []
        for c in self.cliques:
            place, r = 1, []
            for k in reversed(c):
                r.append(place)
                place *= self.cardinalities[k]
            self._radix.append(np.array(r[::-1], dtype=np.int64))

    @property
    def d(self) -> int:
        return len(self.cardinalities)

    @property
    def n_features(self) -> int:
        return int(sum(self._sizes))

    def feature_index(self, X) -> np.ndarray:
        """Column of the active one-hot feature for every (row, clique)."""
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != self.d:
            raise ValueError(f"expected designs of width {self.d}, got {X.shape[1]}")
        Xi = X.astype(np.int64)
        if np.any(Xi != X) or np.any(Xi < 0) or np.any(Xi >= np.asarray(self.cardinalities)):
            raise ValueError("design contains an out-of-domain category")
        cols = np.empty((X.shape[0], len(self.cliques)), dtype=np.int64)
        for q, (c, r) in enumerate(zip(self.cliques, self._radix)):
            cols[:, q] = self._starts[q] + Xi[:, list(c)] @ r
        return cols

    def components(self, X) -> np.ndarray:
        return self.theta[self.feature_index(X)]

    def predict(self, X) -> np.ndarray:
        comps = self.components(X)
        return self.y_offset + comps.sum(axis=1)


def onehot_design(model: OneHotCliqueModel, X) -> np.ndarray:
    cols = model.feature_index(X)
    Phi = np.zeros((cols.shape[0], model.n_features))
    rows = np.repeat(np.arange(cols.shape[0]), cols.shape[1])
    Phi[rows, cols.ravel()] = 1.0
    return Phi


def fit_onehot(data: Dataset, cliques: Sequence[Sequence[int]], lam: Optional[float] = None) -> OneHotCliqueModel:
    """Ridge fit of centred y on stacked clique one-hots (default lam = 1e-6 * N).

    Rows are put in a canonical order first so the solve does not depend on
    the order of the training data.
    """
    if not data.discrete:
        raise ValueError("fit_onehot needs a discrete dataset")
    if min(data.cardinalities) < 2:
        raise ValueError("every variable needs at least 2 categories")
    cliques = _norm_cliques(cliques, data.d)
    lam = 1e-6 * data.n if lam is None else float(lam)
    if lam <= 0:
        raise ValueError("fit_onehot needs lam > 0: stacked one-hots are rank deficient")
    order = np.lexsort(np.column_stack([data.X, data.y]).T[::-1])
    X, y = data.X[order], data.y[order]
    offset = float(np.mean(y))
    model = OneHotCliqueModel(cliques, tuple(data.cardinalities), np.zeros(0), lam, offset)
    model.theta = solve_ridge(onehot_design(model, X), y - offset, lam)
    return model


@dataclass
class MlpHyper:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    epochs: int = 200
    batch: int = 128
    seed: int = 0
    holdout: float = 0.1
    shared: bool = True


@dataclass
class MaskedMlpModel:
    """prediction = y_offset + |C| * mean_C net_C(x * mask_C)."""

    d: int
    cliques: CliqueSet
    nets: list[Mlp]
    y_offset: float
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        self.masks = np.zeros((len(self.cliques), self.d))
        for q, c in enumerate(self.cliques):
            self.masks[q, list(c)] = 1.0

    @property
    def shared(self) -> bool:
        return len(self.nets) == 1

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise ValueError(f"expected inputs of width {self.d}, got {X.shape[1]}")
        return X

    def _masked(self, X) -> np.ndarray:
        return (X[:, None, :] * self.masks[None, :, :]).reshape(-1, self.d)

    def components(self, X) -> np.ndarray:
        X = self._check(X)
        k = len(self.cliques)
        if self.shared:
            return self.nets[0].forward(self._masked(X)).reshape(X.shape[0], k)
        return np.column_stack([net.forward(X * m).ravel() for net, m in zip(self.nets, self.masks)])

    def predict(self, X) -> np.ndarray:
        comps = self.components(X)
        return self.y_offset + comps.mean(axis=1) * comps.shape[1]

    def gradient(self, X) -> np.ndarray:
        X = self._check(X)
        k = len(self.cliques)
        if self.shared:
            g = self.nets[0].input_gradient(self._masked(X)).reshape(X.shape[0], k, self.d)
            return np.sum(g * self.masks[None], axis=1)
        out = np.zeros_like(X)
        for net, m in zip(self.nets, self.masks):
            out += net.input_gradient(X * m) * m
        return out

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets for p in net.params()]

    def loss_and_grads(self, X, y):
        X = self._check(X)
        n, k = X.shape[0], len(self.cliques)
        if self.shared:
            out, acts = self.nets[0].forward(self._masked(X), keep=True)
            pred = self.y_offset + out.reshape(n, k).mean(axis=1) * k
            resid = pred - y
            g_out = np.repeat(2.0 * resid / n, k)[:, None]
            grads, _ = self.nets[0].backward(acts, g_out)
            return float(np.mean(resid ** 2)), grads
        caches = [net.forward(X * m, keep=True) for net, m in zip(self.nets, self.masks)]
        pred = self.y_offset + np.column_stack([c[0].ravel() for c in caches]).mean(axis=1) * k
        resid = pred - y
        g_out = (2.0 * resid / n)[:, None]
        grads = []
        for net, (_, acts) in zip(self.nets, caches):
            grads += net.backward(acts, g_out)[0]
        return float(np.mean(resid ** 2)), grads


def predict(model, X) -> np.ndarray:
    return model.predict(X)


def predict_gradient(model: MaskedMlpModel, X) -> np.ndarray:
    return model.gradient(X)


def split_holdout(n: int, frac: float, seed: int):
    idx = make_rng(seed, 7).permutation(n)
    n_hold = int(round(frac * n)) if n > 1 else 0
    return np.sort(idx[n_hold:]), np.sort(idx[:n_hold])


def fit_masked_mlp(data: Dataset, cliques: Sequence[Sequence[int]], hyper: Optional[MlpHyper] = None) -> MaskedMlpModel:
    """Train the clique-masked regressor with Adam on MSE.

    ``model.history`` holds per-epoch training and held-out MSE; entry 0 of
    ``train_mse`` is the untrained model.
    """
    hyper = hyper or MlpHyper()
    if data.n == 0:
        raise ValueError("empty dataset")
    d = data.d
    cliques = _norm_cliques(cliques, d)
    widths = [d, *hyper.hidden, 1]
    rng = make_rng(hyper.seed, 11)
    n_nets = 1 if hyper.shared else len(cliques)
    nets = [Mlp.init(widths, rng) for _ in range(n_nets)]
    train_idx, hold_idx = split_holdout(data.n, hyper.holdout, hyper.seed)
    Xtr, ytr = data.X[train_idx].astype(np.float64), data.y[train_idx]
    Xho, yho = data.X[hold_idx].astype(np.float64), data.y[hold_idx]
    model = MaskedMlpModel(d, cliques, nets, float(np.mean(ytr)))
    opt = Adam(model.params(), lr=hyper.lr)

    def mse(Xs, ys):
        return float(np.mean((model.predict(Xs) - ys) ** 2)) if len(ys) else float("nan")

    history = {"train_mse": [mse(Xtr, ytr)], "holdout_mse": [mse(Xho, yho)]}
    batch_rng = make_rng(hyper.seed, 13)
    n = len(ytr)
    for epoch in range(1, hyper.epochs + 1):
        perm = batch_rng.permutation(n)
        for start in range(0, n, hyper.batch):
            b = perm[start:start + hyper.batch]
            loss, grads = model.loss_and_grads(Xtr[b], ytr[b])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
            opt.step(grads)
        history["train_mse"].append(mse(Xtr, ytr))
        history["holdout_mse"].append(mse(Xho, yho))
        if not math.isfinite(history["train_mse"][-1]):
            raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
    model.history = history
    return model


def fit_full_mlp(data: Dataset, hyper: Optional[MlpHyper] = None) -> MaskedMlpModel:
    """Monolithic baseline: the masked regressor with the single clique {0..d-1}."""
    return fit_masked_mlp(data, [tuple(range(data.d))], hyper)


# -- persistence ---------------------------------------------------------

def save_model(model, path) -> None:
    """npz container: a JSON header plus flat float64 arrays (bit-exact round trip)."""
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, OneHotCliqueModel):
        meta = {"type": "onehot", "cliques": model.cliques, "cardinalities": list(model.cardinalities),
                "lam": model.lam}
        arrays["theta"] = model.theta
        arrays["y_offset"] = np.array([model.y_offset])
    elif isinstance(model, MaskedMlpModel):
        meta = {"type": "masked_mlp", "d": model.d, "cliques": model.cliques,
                "widths": [net.widths for net in model.nets]}
        arrays["y_offset"] = np.array([model.y_offset])
        for q, p in enumerate(model.params()):
            arrays[f"p{q}"] = p
    elif hasattr(model, "to_arrays"):
        meta, arrays = model.to_arrays()
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    kind = meta["type"]
    if kind == "onehot":
        return OneHotCliqueModel([tuple(c) for c in meta["cliques"]], tuple(meta["cardinalities"]),
                                 arrays["theta"], meta["lam"], float(arrays["y_offset"][0]))
    if kind == "masked_mlp":
        params = [arrays[f"p{q}"] for q in range(sum(2 * (len(w) - 1) for w in meta["widths"]))]
        nets, pos = [], 0
        for widths in meta["widths"]:
            k = len(widths) - 1
            chunk = params[pos:pos + 2 * k]
            nets.append(Mlp(list(widths), chunk[0::2], chunk[1::2]))
            pos += 2 * k
        return MaskedMlpModel(meta["d"], [tuple(c) for c in meta["cliques"]], nets, float(arrays["y_offset"][0]))
    if kind == "vae":
        from .vae import VaeModel
        return VaeModel.from_arrays(meta, arrays)
    raise ValueError(f"unknown model container type {kind!r}")


def hyper_dict(hyper: MlpHyper) -> dict:
    return asdict(hyper)
