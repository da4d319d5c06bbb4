"""Synthetic benchmarks with exact oracles, plus coverage and correlation diagnostics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .fgm import CliqueSet, FgmGraph
from .numkit import make_rng

# sub-stream keys so that benchmark parameters, data and transforms never share draws
_PARAM_STREAM = 101
_TRANSFORM_STREAM = 202


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    cardinalities: Optional[tuple[int, ...]] = None  # None for continuous spaces
    latent: Optional[np.ndarray] = None  # ground-truth inputs behind transformed observables

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64 if self.cardinalities is None else np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("dataset needs X of shape (N, d) and y of length N")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def discrete(self) -> bool:
        return self.cardinalities is not None

    def subset(self, idx) -> "Dataset":
        lat = None if self.latent is None else self.latent[idx]
        return Dataset(self.X[idx], self.y[idx], self.cardinalities, lat)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{k}" for k in range(self.d)] + ["y"])
        for row, val in zip(self.X, self.y):
            cells = [str(int(v)) for v in row] if self.discrete else [repr(float(v)) for v in row]
            w.writerow(cells + [repr(float(val))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, cardinalities=None) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or any(h != f"x_{k}" for k, h in enumerate(header[:-1])):
            raise ValueError("dataset CSV header must be x_0,...,x_{d-1},y")
        data = np.array([[float(c) for c in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
        X = data[:, :-1]
        if cardinalities is not None:
            X = X.astype(np.int64)
        return cls(X, data[:, -1], cardinalities)


@dataclass
class SoftplusMap:
    """x_obs = a * softplus(M x) + b, with its exact inverse on the valid image."""

    a: float
    M: np.ndarray
    b: np.ndarray
    M_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        self.M_inv = np.linalg.inv(self.M)

    def forward(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=np.float64) @ self.M.T
        return self.a * np.logaddexp(0.0, u) + self.b

    def valid(self, x_obs) -> np.ndarray:
        t = (np.atleast_2d(np.asarray(x_obs, dtype=np.float64)) - self.b) / self.a
        return np.all(t > 0.0, axis=1)

    def inverse(self, x_obs) -> np.ndarray:
        """Latent inputs; rows outside the softplus image come back as NaN."""
        x_obs = np.atleast_2d(np.asarray(x_obs, dtype=np.float64))
        t = (x_obs - self.b) / self.a
        ok = np.all(t > 0.0, axis=1)
        u = np.full_like(t, np.nan)
        tt = t[ok]
        # softplus^{-1}(t) = t + log(1 - exp(-t)), stable for both small and large t
        u[ok] = tt + np.log(-np.expm1(-tt))
        return u @ self.M_inv.T


@dataclass
class Benchmark:
    kind: str
    d: int
    seed: int
    cliques: CliqueSet
    graph: FgmGraph
    oracle: Callable[[np.ndarray], np.ndarray]  # batched: (n, d) -> (n,)
    cardinalities: Optional[tuple[int, ...]] = None
    optimum: Optional[tuple[np.ndarray, float]] = None
    upper_bound: Optional[float] = None
    weights: Optional[np.ndarray] = None
    centers: Optional[list[np.ndarray]] = None
    pattern: str = "custom"
    transform: Optional[SoftplusMap] = None
    transform_seed: Optional[int] = None
    base: Optional["Benchmark"] = None

    @property
    def discrete(self) -> bool:
        return self.cardinalities is not None

    def __call__(self, X) -> np.ndarray:
        return self.oracle(np.atleast_2d(np.asarray(X, dtype=np.float64)))

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """Offline data: uniform for discrete spaces, N(0, I) latent inputs otherwise."""
        if self.discrete:
            X = np.stack([rng.integers(0, k, size=n) for k in self.cardinalities], axis=1)
            return Dataset(X, self.oracle(X), self.cardinalities)
        Z = rng.standard_normal((n, self.d))
        if self.transform is None:
            return Dataset(Z, self.oracle(Z))
        X_obs = self.transform.forward(Z)
        return Dataset(X_obs, self.base.oracle(Z), latent=Z)

    def manifest(self) -> str:
        lines = [f"kind={self.kind}", f"d={self.d}", f"seed={self.seed}", f"pattern={self.pattern}",
                 "cliques=" + ";".join(" ".join(map(str, c)) for c in self.cliques)]
        if self.transform_seed is not None:
            lines.append(f"transform_seed={self.transform_seed}")
        return "\n".join(lines) + "\n"


def gen_quadratic_cycle(d: int) -> Benchmark:
    """f(x) = sum_i x_i x_{i+1 mod d} on {0,1}^d; optimum all-ones with value d."""
    if d < 3:
        raise ValueError("quadratic cycle needs d >= 3")
    nxt = np.roll(np.arange(d), -1)

    def oracle(X):
        X = np.asarray(X, dtype=np.float64)
        return np.sum(X * X[:, nxt], axis=1)

    cliques = sorted(tuple(sorted((i, (i + 1) % d))) for i in range(d))
    graph = FgmGraph(d, cliques)
    return Benchmark("quadratic-cycle", d, 0, cliques, graph, oracle, cardinalities=(2,) * d,
                     optimum=(np.ones(d, dtype=np.int64), float(d)), upper_bound=float(d), pattern="cycle")


def triangle_chain(d: int) -> CliqueSet:
    if d < 3 or d % 2 == 0:
        raise ValueError("triangle chain needs odd d >= 3")
    return [(k, k + 1, k + 2) for k in range(0, d - 2, 2)]


PATTERNS = {
    "triangle-chain": triangle_chain,
    # documented stand-in for the 4-d figure: two triangles sharing an edge
    "two-triangles": lambda d: [(0, 1, 2), (1, 2, 3)] if d == 4 else _bad_pattern("two-triangles", d),
}


def _bad_pattern(name, d):
    raise ValueError(f"pattern {name!r} is not defined for d={d}")


def gen_rbf_mixture(d: int, pattern: str = "triangle-chain", seed: int = 0,
                    cliques: Optional[Sequence[Sequence[int]]] = None,
                    weights=None, centers=None) -> Benchmark:
    """f(x) = sum_C w_C exp(-||x_C - mu_C||^2) with w_C = |N(0,1)| + 0.1, mu_C ~ N(0, I)."""
    if cliques is None:
        if pattern not in PATTERNS:
            raise ValueError(f"unknown clique pattern {pattern!r}")
        cliques = PATTERNS[pattern](d)
    else:
        pattern = "custom"
    cliques = [tuple(sorted(int(k) for k in c)) for c in cliques]
    covered = set(k for c in cliques for k in c)
    if covered != set(range(d)):
        raise ValueError(f"cliques {cliques} do not cover all {d} coordinates")
    rng = make_rng(seed, _PARAM_STREAM)
    w_draw = np.abs(rng.standard_normal(len(cliques))) + 0.1
    mu_draw = [rng.standard_normal(len(c)) for c in cliques]
    w = w_draw if weights is None else np.asarray(weights, dtype=np.float64)
    mu = mu_draw if centers is None else [np.asarray(m, dtype=np.float64) for m in centers]
    idx = [list(c) for c in cliques]

    def oracle(X):
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for wc, mc, ic in zip(w, mu, idx):
            out += wc * np.exp(-np.sum((X[:, ic] - mc) ** 2, axis=1))
        return out

    graph = FgmGraph.from_cliques(d, cliques)
    return Benchmark("rbf", d, seed, cliques, graph, oracle, upper_bound=float(np.sum(w)),
                     weights=w, centers=mu, pattern=pattern)


def random_affine(d: int, rng: np.random.Generator, max_cond: float = 20.0) -> np.ndarray:
    while True:
        M = rng.standard_normal((d, d)) / math.sqrt(d)
        if np.linalg.cond(M) <= max_cond:
            return M


def transform_observable(bench: Benchmark, seed: int = 0) -> Benchmark:
    """Wrap a continuous benchmark so designs are observed through a softplus map.

    The transformed oracle is NaN outside the softplus image.
    """
    if bench.discrete:
        raise ValueError("observable transforms apply to continuous benchmarks only")
    rng = make_rng(seed, _TRANSFORM_STREAM)
    a = float(np.exp(0.25 * rng.standard_normal()))
    M = random_affine(bench.d, rng)
    b = rng.standard_normal(bench.d)
    tmap = SoftplusMap(a, M, b)

    def oracle(X_obs):
        Z = tmap.inverse(X_obs)
        out = np.full(Z.shape[0], np.nan)
        ok = ~np.isnan(Z).any(axis=1)
        out[ok] = bench.oracle(Z[ok])
        return out

    return Benchmark("rbf-softplus", bench.d, bench.seed, bench.cliques, bench.graph, oracle,
                     upper_bound=bench.upper_bound, weights=bench.weights, centers=bench.centers,
                     pattern=bench.pattern, transform=tmap, transform_seed=seed, base=bench)


def benchmark_from_manifest(text: str) -> Benchmark:
    fields = {}
    for ln in text.splitlines():
        if ln.strip():
            k, _, v = ln.partition("=")
            fields[k.strip()] = v.strip()
    kind, d, seed = fields["kind"], int(fields["d"]), int(fields["seed"])
    if kind == "quadratic-cycle":
        return gen_quadratic_cycle(d)
    cliques = [tuple(int(t) for t in c.split()) for c in fields["cliques"].split(";") if c.strip()]
    pattern = fields.get("pattern", "custom")
    if pattern in PATTERNS:
        base = gen_rbf_mixture(d, pattern, seed)
    else:
        base = gen_rbf_mixture(d, seed=seed, cliques=cliques)
    if kind == "rbf":
        return base
    if kind == "rbf-softplus":
        return transform_observable(base, int(fields["transform_seed"]))
    raise ValueError(f"unknown benchmark kind {kind!r}")


@dataclass
class CoverageReport:
    full: float
    per_clique: list[float]

    @property
    def clique_max(self) -> float:
        return max(self.per_clique)


def _max_ratio(pi: np.ndarray, p: np.ndarray) -> float:
    support = pi > 0
    if np.any(support & (p <= 0)):
        return math.inf
    if not np.any(support):
        return 0.0
    return float(np.max(pi[support] / p[support]))


def coverage_ratios(pi, p, cliques: Sequence[Sequence[int]]) -> CoverageReport:
    """Full-space and clique-marginal density ratios over an explicit probability table.

    ``pi`` and ``p`` have one axis per variable. The clique-wise maximum never
    exceeds the full-space maximum; this is checked before returning.
    """
    pi = np.asarray(pi, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if pi.shape != p.shape:
        raise ValueError("pi and p must share a shape")
    if pi.size > 2 ** 16:
        raise ValueError("coverage tables are limited to 2**16 states")
    d = pi.ndim
    full = _max_ratio(pi, p)
    per = []
    for c in cliques:
        other = tuple(k for k in range(d) if k not in c)
        per.append(_max_ratio(pi.sum(axis=other), p.sum(axis=other)))
    report = CoverageReport(full, per)
    if not report.clique_max <= full * (1.0 + 1e-12):
        raise AssertionError(f"coverage inequality violated: {report.clique_max} > {full}")
    return report


@dataclass
class CorrelationReport:
    matrix: np.ndarray
    degenerate: list[int]  # cliques whose component had zero sample variance

    @property
    def sigma_hat(self) -> float:
        k = self.matrix.shape[0]
        off = self.matrix[~np.eye(k, dtype=bool)]
        return float(np.max(off)) if off.size else 0.0


def clique_correlation(model, X) -> CorrelationReport:
    """Pairwise correlation between fitted clique components over samples ``X``."""
    comps = np.asarray(model.components(X), dtype=np.float64)
    n, k = comps.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 samples and 2 cliques")
    centred = comps - comps.mean(axis=0)
    sd = np.sqrt(np.sum(centred ** 2, axis=0))
    degenerate = [c for c in range(k) if sd[c] <= 1e-12 * max(1.0, float(np.max(np.abs(comps[:, c]))))]
    safe = np.where(sd > 0, sd, 1.0)
    corr = (centred.T @ centred) / np.outer(safe, safe)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    for c in degenerate:
        corr[c, :] = 0.0
        corr[:, c] = 0.0
    np.fill_diagonal(corr, 1.0)
    return CorrelationReport(corr, degenerate)


def point_mass(cardinalities: Sequence[int], design: Sequence[int]) -> np.ndarray:
    t = np.zeros(tuple(cardinalities))
    t[tuple(design)] = 1.0
    return t


def uniform_table(cardinalities: Sequence[int]) -> np.ndarray:
    return np.full(tuple(cardinalities), 1.0 / math.prod(cardinalities))


def within_clique_pairs(cliques: CliqueSet) -> set[tuple[int, int]]:
    return {pair for c in cliques for pair in combinations(sorted(c), 2)}
