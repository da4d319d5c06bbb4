"""Graph discovery from offline data with the second-order Stein identity.

For x ~ N(0, I), E[x_i x_j f(x)] equals the (i, j) entry of the Hessian of the
Gaussian-smoothed function at the origin. A missing FGM edge forces that entry
to zero, so sample means of x_i x_j y are tested against their standard error.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .fgm import FgmGraph


@dataclass
class PseudoHessian:
    H: np.ndarray
    sigma: np.ndarray
    M: int

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def zscores(self) -> np.ndarray:
        """|H| * sqrt(M) / sigma, with 0/0 -> 0 and x/0 -> inf."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.H) * np.sqrt(self.M) / self.sigma
        z[(self.sigma == 0) & (self.H == 0)] = 0.0
        return z

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "H", "sigma", "M"])
        for i in range(self.d):
            for j in range(i, self.d):
                w.writerow([i, j, repr(float(self.H[i, j])), repr(float(self.sigma[i, j])), self.M])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PseudoHessian":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty pseudo-Hessian CSV")
        d = max(max(int(r["i"]), int(r["j"])) for r in rows) + 1
        H = np.zeros((d, d))
        sigma = np.zeros((d, d))
        M = int(rows[0]["M"])
        for r in rows:
            i, j = int(r["i"]), int(r["j"])
            H[i, j] = H[j, i] = float(r["H"])
            sigma[i, j] = sigma[j, i] = float(r["sigma"])
        return cls(H, sigma, M)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "PseudoHessian":
        return cls.from_csv(Path(path).read_text())


def _pair_moments(X: np.ndarray, y: np.ndarray, chunk: int = 65536):
    """Per-pair sums of p and p**2 where p = x_i x_j y, accumulated in row chunks."""
    n, d = X.shape
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    for start in range(0, n, chunk):
        xs = X[start:start + chunk]
        ys = y[start:start + chunk]
        xy = xs * ys[:, None]
        s1 += xy.T @ xs
        s2 += (xy * xy).T @ (xs * xs)
    return s1, s2


def estimate_pseudo_hessian(X, y, center: bool = True) -> PseudoHessian:
    """H_ij = mean_k x_i x_j y; sigma_ij = unbiased std of the same products.

    ``y`` is centred first unless ``center=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (N, d) with y of length N")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples for a standard deviation")
    if center:
        y = y - y.mean()
    s1, s2 = _pair_moments(X, y)
    H = s1 / n
    var = np.maximum(s2 - n * H * H, 0.0) / (n - 1)
    H = 0.5 * (H + H.T)
    sigma = np.sqrt(0.5 * (var + var.T))
    return PseudoHessian(H, sigma, n)


def critical_value(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(stats.norm.isf(alpha / 2.0))


def edge_test(ph: PseudoHessian, alpha: float = 0.05, unit_sigma: bool = False) -> FgmGraph:
    """Keep (i, j) iff |H_ij| >= c_{alpha/2} sigma_ij / sqrt(M).

    ``unit_sigma`` replaces sigma by 1 (the unnormalised variant).
    """
    c = critical_value(alpha)
    if ph.M < 2:
        raise ValueError("pseudo-Hessian needs M >= 2")
    sigma = np.ones_like(ph.sigma) if unit_sigma else ph.sigma
    thresh = c * sigma / np.sqrt(ph.M)
    d = ph.d
    edges = []
    for i in range(d):
        for j in range(i + 1, d):
            h = abs(ph.H[i, j])
            if sigma[i, j] == 0.0:
                if h != 0.0:
                    edges.append((i, j))
            elif h >= thresh[i, j]:
                edges.append((i, j))
    return FgmGraph(d, edges)


class EmaPseudoHessian:
    """Exponential moving average of pair-product first and second moments.

    Not safe for concurrent updates. The effective M reported is the raw
    cumulative sample count.
    """

    def __init__(self, d: int, momentum: float = 0.99, center: bool = True):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.d = d
        self.momentum = momentum
        self.center = center
        self.mean: np.ndarray | None = None
        self.sq_mean: np.ndarray | None = None
        self.count = 0
        self.updates = 0

    def update(self, X, y) -> "EmaPseudoHessian":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != self.d or y.shape != (X.shape[0],):
            raise ValueError("batch must be non-empty (n, d) with matching y")
        if self.center:
            y = y - y.mean()
        s1, s2 = _pair_moments(X, y)
        n = X.shape[0]
        m1, m2 = s1 / n, s2 / n
        if self.mean is None:
            self.mean, self.sq_mean = m1, m2
        else:
            b = self.momentum
            self.mean = b * self.mean + (1.0 - b) * m1
            self.sq_mean = b * self.sq_mean + (1.0 - b) * m2
        self.count += n
        self.updates += 1
        return self

    def result(self) -> PseudoHessian:
        if self.mean is None:
            raise ValueError("no batches seen yet")
        H = 0.5 * (self.mean + self.mean.T)
        var = np.maximum(self.sq_mean - self.mean ** 2, 0.0)
        if self.count > 1:
            var = var * self.count / (self.count - 1)
        sigma = np.sqrt(0.5 * (var + var.T))
        return PseudoHessian(H, sigma, max(self.count, 2))


def ema_update(state: EmaPseudoHessian, X, y) -> EmaPseudoHessian:
    return state.update(X, y)


@dataclass
class WhitenTransform:
    mean: np.ndarray
    transform: np.ndarray
    inverse: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.transform.T

    def invert(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) @ self.inverse.T + self.mean


def whiten_fit(X) -> WhitenTransform:
    """Zero-mean, identity-covariance map z = L^{-1}(x - mean), cov = L L^T."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need more samples than dimensions (N={n}, d={d})")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(d, d)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sample covariance is singular; the data are rank deficient") from exc
    if np.min(np.diag(L)) <= 1e-10 * max(np.max(np.diag(L)), 1e-300):
        raise ValueError("sample covariance is singular; the data are rank deficient")
    inv = np.linalg.solve(L, np.eye(d))
    return WhitenTransform(mean, inv, L)
