"""Run configuration: a line-oriented ``key = value`` format with ``[section]`` headers.

Grammar::

    # comment            (also ';' comments; blank lines ignored)
    [experiment]         kind, d, n, seeds, seed_base, methods, out, workers
    [hyper]              overrides of HYPER_DEFAULTS

Keys before the first header belong to ``[experiment]``. ``seeds`` is either a
count (``seeds = 50`` -> seed_base .. seed_base+49) or a comma list
(``seeds = 3, 7, 11``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    pass


KINDS = ("quadratic-cycle-regret", "rbf-discovery", "rbf-optimize", "transformed-pipeline",
         "coverage-demo", "stein-check")

METHODS = ("fgm", "naive-full", "best-in-dataset", "rwr", "vae-fgm", "vae-ga")

SUPPORTED = {
    "quadratic-cycle-regret": ("fgm", "naive-full", "best-in-dataset"),
    "rbf-discovery": ("fgm",),
    "rbf-optimize": ("fgm", "naive-full", "best-in-dataset", "rwr"),
    "transformed-pipeline": ("vae-fgm", "vae-ga", "naive-full"),
    "coverage-demo": ("fgm", "naive-full"),
    "stein-check": ("fgm",),
}

DEFAULT_METHODS = {
    "quadratic-cycle-regret": ("fgm", "best-in-dataset"),
    "rbf-discovery": ("fgm",),
    "rbf-optimize": ("fgm", "naive-full", "best-in-dataset", "rwr"),
    "transformed-pipeline": ("vae-fgm", "naive-full"),
    "coverage-demo": ("fgm", "naive-full"),
    "stein-check": ("fgm",),
}

# name -> (default, help)
HYPER_DEFAULTS: dict[str, tuple[Any, str]] = {
    "alpha": (0.05, "edge-test significance level"),
    "unit_sigma": (False, "replace per-entry sigma by 1 in the edge test"),
    "pattern": ("triangle-chain", "RBF clique pattern: triangle-chain | two-triangles"),
    "ridge_lambda": (-1.0, "one-hot ridge weight; negative means 1e-6 * n"),
    "hidden": ((64, 64), "hidden widths of the surrogate MLP"),
    "lr": (1e-3, "surrogate Adam learning rate"),
    "epochs": (200, "surrogate training epochs"),
    "batch": (128, "surrogate minibatch size"),
    "holdout": (0.1, "held-out fraction for surrogate training"),
    "shared": (True, "share one network across cliques"),
    "ascent_steps": (50, "policy gradient-ascent steps"),
    "ascent_lr": (0.1, "policy ascent step size"),
    "ascent_batch": (128, "samples per ascent step"),
    "ascent_optimizer": ("adam", "adam | sgd"),
    "learn_std": (True, "optimise the policy log-std as well as the mean"),
    "init_std": (0.5, "initial policy std"),
    "init_batch": (0, "initialise at the best row of the first k rows; 0 = whole dataset"),
    "rwr_temperature": (0.1, "reward-weighted regression temperature"),
    "mc_samples": (10000, "Monte Carlo samples for policy values"),
    "designs": (1000, "designs drawn from the final policy for validity checks"),
    "vae_hidden": ((64, 64), "hidden widths of VAE encoder and decoder"),
    "vae_lr": (1e-3, "VAE Adam learning rate"),
    "vae_epochs": (100, "VAE training epochs"),
    "vae_batch": (128, "VAE minibatch size"),
    "vae_noise": (0.3, "decoder noise std in standardised units"),
    "d_z": (0, "latent width; 0 = benchmark dimension"),
    "ema_momentum": (0.99, "momentum of the interleaved pseudo-Hessian EMA"),
    "interleaved_discovery": (False, "track the pseudo-Hessian by EMA during VAE training"),
    "ema_burn_in": (10, "EMA updates required before the interleaved estimate is used"),
}

EXPERIMENT_KEYS = ("kind", "d", "n", "seeds", "seed_base", "methods", "out", "workers")


@dataclass
class RunConfig:
    kind: str
    d: int
    n: int
    seeds: list[int]
    methods: list[str]
    hyper: dict[str, Any] = field(default_factory=dict)
    out: Optional[str] = None
    workers: int = 0
    text: str = ""

    def h(self, key: str):
        return self.hyper[key]


def _coerce(key: str, raw: str, default: Any, lineno: int):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            vals = tuple(int(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
            if not vals:
                raise ValueError(raw)
            return vals
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key!r}") from None


def parse_config(source) -> RunConfig:
    """Parse a config from a path or from its text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "=" not in source
                                    and Path(source).exists()):
        text = Path(source).read_text()
    else:
        text = str(source)
    section = "experiment"
    seen: dict[tuple[str, str], int] = {}
    values: dict[str, dict[str, tuple[str, int]]] = {"experiment": {}, "hyper": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
        if m:
            section = m.group(1).lower()
            if section not in values:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip().lower(), val.strip()
        if not re.fullmatch(r"[a-z_][a-z0-9_]*", key):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        allowed = EXPERIMENT_KEYS if section == "experiment" else HYPER_DEFAULTS
        if key not in allowed:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} on lines {seen[(section, key)]} and {lineno}")
        seen[(section, key)] = lineno
        values[section][key] = (val, lineno)

    exp = values["experiment"]
    if "kind" not in exp:
        raise ConfigError("experiment kind required")
    kind, kline = exp["kind"]
    if kind not in KINDS:
        raise ConfigError(f"line {kline}: unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")

    def int_field(name, default=None, minimum=1):
        if name not in exp:
            if default is None:
                raise ConfigError(f"{name} required")
            return default
        raw, ln = exp[name]
        try:
            v = int(raw)
        except ValueError:
            raise ConfigError(f"line {ln}: {name} must be an integer, got {raw!r}") from None
        if v < minimum:
            raise ConfigError(f"line {ln}: {name} must be >= {minimum}")
        return v

    d = int_field("d")
    n = int_field("n")
    seed_base = int_field("seed_base", 0, minimum=0)
    workers = int_field("workers", 0, minimum=0)
    if "seeds" not in exp:
        raise ConfigError("seeds required")
    raw, ln = exp["seeds"]
    try:
        if "," in raw or raw.startswith("["):
            seeds = [int(s) for s in raw.strip("[]").split(",") if s.strip()]
        else:
            seeds = list(range(seed_base, seed_base + int(raw)))
    except ValueError:
        raise ConfigError(f"line {ln}: cannot parse seeds {raw!r}") from None
    if not seeds:
        raise ConfigError(f"line {ln}: seed list is empty")

    if "methods" in exp:
        raw, ln = exp["methods"]
        methods = [m.strip() for m in raw.split(",") if m.strip()]
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"line {ln}: unknown method {m!r}")
            if m not in SUPPORTED[kind]:
                raise ConfigError(f"line {ln}: method {m!r} is not available for {kind}")
        if not methods:
            raise ConfigError(f"line {ln}: method list is empty")
    else:
        methods = list(DEFAULT_METHODS[kind])

    hyper = {k: v[0] for k, v in HYPER_DEFAULTS.items()}
    for key, (raw, ln) in values["hyper"].items():
        hyper[key] = _coerce(key, raw, HYPER_DEFAULTS[key][0], ln)

    out = exp["out"][0] if "out" in exp else None
    return RunConfig(kind, d, n, seeds, methods, hyper, out, workers, text)


def describe_defaults() -> str:
    lines = ["[hyper] keys and defaults:"]
    for k, (v, h) in HYPER_DEFAULTS.items():
        shown = ",".join(map(str, v)) if isinstance(v, tuple) else v
        lines.append(f"  {k} = {shown}    {h}")
    return "\n".join(lines)
