"""Design optimisation against fitted surrogates."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bench import Benchmark, Dataset
from .numkit import AdamState, adam_step, make_rng

STD_FLOOR = 1e-6


class OptimizationError(RuntimeError):
    pass


@dataclass
class GaussianPolicy:
    mean: np.ndarray
    log_std: np.ndarray

    @classmethod
    def from_std(cls, mean, std) -> "GaussianPolicy":
        mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)
        return cls(mean, np.log(np.maximum(std, STD_FLOOR)))

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.exp(self.log_std), STD_FLOOR)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.mean.size))

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean.copy(), self.log_std.copy())


@dataclass
class TraceRecord:
    step: int
    surrogate_value: float
    true_value: float
    mean: np.ndarray


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trace steps must strictly increase")
        self.records.append(rec)

    @property
    def surrogate_values(self) -> np.ndarray:
        return np.array([r.surrogate_value for r in self.records])

    @property
    def true_values(self) -> np.ndarray:
        return np.array([r.true_value for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "surrogate_value", "true_value", "policy_mean_norm"])
        for r in self.records:
            w.writerow([r.step, repr(r.surrogate_value), repr(r.true_value), repr(float(np.linalg.norm(r.mean)))])
        return buf.getvalue()


def best_in_dataset(data: Dataset) -> tuple[np.ndarray, float]:
    """Row with the largest y; ties go to the lowest index."""
    if data.n == 0:
        raise ValueError("empty dataset")
    k = int(np.argmax(data.y))
    return data.X[k].copy(), float(data.y[k])


def enumerate_space(cardinalities: Sequence[int], start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Designs with flat indices in [start, stop), lexicographic (last coordinate fastest)."""
    total = math.prod(cardinalities)
    stop = total if stop is None else min(stop, total)
    flat = np.arange(start, stop, dtype=np.int64)
    return np.stack(np.unravel_index(flat, tuple(cardinalities)), axis=1).astype(np.int64)


EXHAUSTIVE_LIMIT = 2 ** 20


def argmax_discrete(model, cardinalities: Sequence[int], mode: str = "auto", restarts: int = 8,
                    max_sweeps: int = 100, rng: Optional[np.random.Generator] = None,
                    allow_heuristic: bool = True, chunk: int = 65536) -> np.ndarray:
    """Maximise ``model.predict`` over a product of finite domains.

    ``mode="exhaustive"`` returns the lexicographically smallest global
    maximiser; ``"coordinate"`` runs coordinate ascent from random restarts;
    ``"auto"`` picks exhaustive when the space has at most 2**20 designs.
    """
    total = math.prod(cardinalities)
    if mode == "auto":
        if total <= EXHAUSTIVE_LIMIT:
            mode = "exhaustive"
        elif allow_heuristic:
            mode = "coordinate"
        else:
            raise ValueError(f"space of {total} designs exceeds the exhaustive limit and heuristics are disabled")
    if mode == "exhaustive":
        if total > EXHAUSTIVE_LIMIT:
            raise ValueError(f"space of {total} designs exceeds the exhaustive limit {EXHAUSTIVE_LIMIT}")
        best_val, best_x = -math.inf, None
        for start in range(0, total, chunk):
            Xs = enumerate_space(cardinalities, start, start + chunk)
            vals = model.predict(Xs)
            k = int(np.argmax(vals))
            if vals[k] > best_val:
                best_val, best_x = float(vals[k]), Xs[k]
        return best_x
    if mode == "coordinate":
        return coordinate_ascent(model, cardinalities, restarts, max_sweeps, rng or make_rng(0))
    raise ValueError(f"unknown argmax mode {mode!r}")


def coordinate_ascent(model, cardinalities, restarts: int, max_sweeps: int, rng: np.random.Generator) -> np.ndarray:
    d = len(cardinalities)
    best_val, best_x = -math.inf, None
    for _ in range(restarts):
        x = np.array([rng.integers(0, k) for k in cardinalities], dtype=np.int64)
        cur = float(model.predict(x[None])[0])
        for _sweep in range(max_sweeps):
            improved = False
            for k in range(d):
                cands = np.repeat(x[None], cardinalities[k], axis=0)
                cands[:, k] = np.arange(cardinalities[k])
                vals = model.predict(cands)
                j = int(np.argmax(vals))
                if vals[j] > cur:
                    x, cur, improved = cands[j].copy(), float(vals[j]), True
            if not improved:
                break
        if cur > best_val or (cur == best_val and tuple(x) < tuple(best_x)):
            best_val, best_x = cur, x
    return best_x


def ascend_policy(model, init: GaussianPolicy, steps: int, lr: float, batch: int = 128,
                  rng: Optional[np.random.Generator] = None, learn_std: bool = True,
                  oracle: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  optimizer: str = "adam", on_step: Optional[Callable[[int, np.ndarray], None]] = None,
                  ) -> tuple[GaussianPolicy, OptimizationTrace]:
    """Gradient ascent on E_{x~pi}[model(x)] with reparameterised samples.

    ``optimizer`` is "adam" or "sgd" (plain ascent). ``on_step(step, X)``
    sees every sampled batch. The trace has
    ``steps + 1`` records; record k is the batch at the policy before update k
    (the last one after the final update).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    rng = rng or make_rng(0)
    policy = init.copy()
    state = AdamState.zeros_like([policy.mean, policy.log_std])
    trace = OptimizationTrace()
    for step in range(steps + 1):
        eps = rng.standard_normal((batch, policy.mean.size))
        std = policy.std
        X = policy.mean + std * eps
        value = float(np.mean(model.predict(X)))
        true = float(np.mean(oracle(X))) if oracle is not None else float("nan")
        trace.append(TraceRecord(step, value, true, policy.mean.copy()))
        if on_step is not None:
            on_step(step, X)
        if step == steps:
            break
        g = model.gradient(X)
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite surrogate gradient at step {step}")
        g_mean = g.mean(axis=0)
        g_log_std = np.mean(g * eps, axis=0) * std if learn_std else np.zeros_like(g_mean)
        if optimizer == "adam":
            # Adam minimises, so feed it the negated ascent direction
            adam_step([policy.mean, policy.log_std], [-g_mean, -g_log_std], state, lr)
        else:
            policy.mean += lr * g_mean
            policy.log_std += lr * g_log_std
        np.maximum(policy.log_std, math.log(STD_FLOOR), out=policy.log_std)
    return policy, trace


def rwr_baseline(data: Dataset, temperature: float) -> GaussianPolicy:
    """Gaussian fit with weights exp((y - max y) / temperature)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    X = data.X.astype(np.float64)
    w = np.exp((data.y - np.max(data.y)) / temperature)
    w = w / w.sum()
    mean = w @ X
    var = w @ (X - mean) ** 2
    return GaussianPolicy.from_std(mean, np.maximum(np.sqrt(var), STD_FLOOR))


MC_SAMPLES = 10_000


def policy_value(policy: GaussianPolicy, f: Callable[[np.ndarray], np.ndarray], n: int = MC_SAMPLES,
                 seed: int = 0) -> float:
    """Monte Carlo E_{x~pi}[f(x)] with a fixed seed (noise about std(f)/sqrt(n))."""
    X = policy.sample(n, make_rng(seed, 17))
    return float(np.mean(f(X)))


def regret(design_or_policy, bench: Benchmark, n: int = MC_SAMPLES, seed: int = 0) -> float:
    if bench.optimum is None:
        raise ValueError(f"benchmark {bench.kind!r} has no known optimum")
    best = bench.optimum[1]
    if isinstance(design_or_policy, GaussianPolicy):
        return best - policy_value(design_or_policy, bench, n, seed)
    x = np.asarray(design_or_policy)
    return best - float(bench(x[None])[0])
