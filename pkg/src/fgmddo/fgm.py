"""Functional graphical models over variable indices.

A missing edge (i, j) means f splits additively across x_i and x_j once all
other coordinates are fixed; equivalently the mixed partial d2f/dx_i dx_j
vanishes everywhere. Maximal cliques of such a graph index the additive
components f(x) = sum_C f_C(x_C).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class FgmGraph:
    d: int
    edges: frozenset[tuple[int, int]]

    def __init__(self, d: int, edges: Iterable[tuple[int, int]] = ()):
        if d < 1:
            raise ValueError("graph needs at least one vertex")
        norm = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on vertex {i}")
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"edge ({i}, {j}) out of range for d={d}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_adjacency(cls, adj) -> "FgmGraph":
        adj = np.asarray(adj, dtype=bool)
        d = adj.shape[0]
        return cls(d, [(i, j) for i in range(d) for j in range(i + 1, d) if adj[i, j] or adj[j, i]])

    @classmethod
    def from_cliques(cls, d: int, cliques: Iterable[Sequence[int]]) -> "FgmGraph":
        return cls(d, [pair for c in cliques for pair in combinations(sorted(c), 2)])

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.d, self.d), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def neighbours(self) -> list[set[int]]:
        nb: list[set[int]] = [set() for _ in range(self.d)]
        for i, j in self.edges:
            nb[i].add(j)
            nb[j].add(i)
        return nb

    def to_text(self) -> str:
        lines = [f"d={self.d}"] + [f"{i} {j}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FgmGraph":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("d="):
            raise ValueError("edge list must start with a 'd=<n>' header")
        d = int(lines[0][2:])
        edges = []
        for n, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 2:
                raise ValueError(f"line {n}: expected 'i j', got {ln!r}")
            edges.append((int(parts[0]), int(parts[1])))
        return cls(d, edges)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "FgmGraph":
        return cls.from_text(Path(path).read_text())


CliqueSet = list[tuple[int, ...]]


def maximal_cliques(g: FgmGraph) -> CliqueSet:
    """All maximal cliques (Bron-Kerbosch with pivoting), sorted lexicographically.

    Isolated vertices come back as singleton cliques.
    """
    nb = g.neighbours()
    found: list[tuple[int, ...]] = []

    def expand(r: list[int], p: set[int], x: set[int]) -> None:
        if not p and not x:
            found.append(tuple(sorted(r)))
            return
        pivot = max(p | x, key=lambda u: len(nb[u] & p))
        for v in sorted(p - nb[pivot]):
            expand(r + [v], p & nb[v], x & nb[v])
            p = p - {v}
            x = x | {v}

    expand([], set(range(g.d)), set())
    return sorted(found)


def ged(true: FgmGraph, est: FgmGraph) -> float:
    """Normalised graph edit distance |E_true ^ E_est| / (d(d-1)/2)."""
    if true.d != est.d:
        raise ValueError("graphs differ in vertex count")
    if true.d < 2:
        return 0.0
    return len(true.edges ^ est.edges) / (true.d * (true.d - 1) / 2)


def unlabeled_ged(true: FgmGraph, est: FgmGraph) -> float:
    """Normalised edit distance minimised over vertex relabelings of ``est``.

    Used where vertex identities are not shared, e.g. learned latent axes.
    Exhaustive over permutations, so keep d small (d <= 9).
    """
    from itertools import permutations

    if true.d != est.d:
        raise ValueError("graphs differ in vertex count")
    d = true.d
    if d > 9:
        raise ValueError("unlabeled_ged is exhaustive; d must be <= 9")
    if d < 2:
        return 0.0
    a = true.adjacency()
    b = est.adjacency()
    iu = np.triu_indices(d, 1)
    best = len(iu[0])
    for perm in permutations(range(d)):
        p = np.asarray(perm)
        diff = int(np.count_nonzero(a[iu] != b[p][:, p][iu]))
        if diff < best:
            best = diff
            if best == 0:
                break
    return best / len(iu[0])


def mixed_partial(f: Callable, x: np.ndarray, i: int, j: int, h: float) -> tuple[float, float]:
    """Central-difference d2f/dx_i dx_j at ``x``; also returns |f(x)|."""
    ei = np.zeros_like(x)
    ej = np.zeros_like(x)
    ei[i] = h
    ej[j] = h
    vals = [float(f(x + ei + ej)), float(f(x + ei - ej)), float(f(x - ei + ej)), float(f(x - ei - ej)), float(f(x))]
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"non-finite function value near probe {x.tolist()}")
    est = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h * h)
    return est, abs(vals[4])


def independence_test(f: Callable, i: int, j: int, probes, h: float = 1e-3, tol: float = 1e-4) -> bool:
    """True iff the mixed partial in (i, j) is within ``tol * max(1, |f|)`` at every probe."""
    if i == j:
        raise ValueError("independence_test needs i != j")
    if h <= 0:
        raise ValueError("h must be positive")
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if probes.shape[0] == 0:
        raise ValueError("need at least one probe")
    for x in probes:
        est, fx = mixed_partial(f, x, i, j, h)
        if abs(est) > tol * max(1.0, fx):
            return False
    return True


def default_probes(d: int, n: int = 16, seed: int = 0) -> np.ndarray:
    return np.random.Generator(np.random.Philox(seed)).standard_normal((n, d))


def recover_graph_from_oracle(f: Callable, d: int, probes=None, h: float = 1e-3, tol: float = 1e-4) -> FgmGraph:
    """Edge (i, j) wherever the pairwise finite-difference test rejects independence."""
    if d < 2:
        raise ValueError("need d >= 2")
    if probes is None:
        probes = default_probes(d)
    edges = [(i, j) for i, j in combinations(range(d), 2) if not independence_test(f, i, j, probes, h, tol)]
    return FgmGraph(d, edges)


@dataclass
class DecomposedFunction:
    """f(x) = sum_C f_C(x_C); each component receives only its clique's coordinates."""

    d: int
    cliques: CliqueSet
    components: list[Callable[[np.ndarray], float]]

    def __post_init__(self):
        if len(self.cliques) != len(self.components):
            raise ValueError("one component per clique required")
        self.cliques = [tuple(int(k) for k in c) for c in self.cliques]
        for c in self.cliques:
            if any(k < 0 or k >= self.d for k in c):
                raise ValueError(f"clique {c} out of range for d={self.d}")

    def __call__(self, x) -> float:
        return eval_decomposed(self, x)


def eval_decomposed(df: DecomposedFunction, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (df.d,):
        raise ValueError(f"expected a vector of length {df.d}, got shape {x.shape}")
    total = 0.0
    for c, comp in zip(df.cliques, df.components):
        total += float(comp(x[list(c)]))
    return total
