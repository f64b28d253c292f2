"""Run configuration: a flat set of dotted keys read from YAML or JSON.

Nested mappings are flattened (``grid: {radial: 8}`` is ``grid.radial``).
Every key has a type and a default; unknown keys and bad values raise
:class:`ConfigError` naming the offending key path.  The hash of the
resolved configuration is written next to every result.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .model import INF, ModelParams, parse_cutoff


class ConfigError(ValueError):
    """Schema violation; ``key`` is the dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _cutoff(x):
    c = parse_cutoff(x)
    return "inf" if c is INF else c


def _cutoffs(x):
    if not isinstance(x, (list, tuple)):
        x = [x]
    return [_cutoff(c) for c in x]


def _floats(x):
    if not isinstance(x, (list, tuple)):
        x = [x]
    return [float(c) for c in x]


def _xis(x):
    out = []
    for p in x:
        p = [float(c) for c in p]
        if len(p) != 2:
            raise ValueError("each xi is a pair")
        out.append(p)
    return out


def _pos_int(x):
    if isinstance(x, bool) or int(x) != x or int(x) < 1:
        raise ValueError("positive integer expected")
    return int(x)


def _nonneg(x):
    x = float(x)
    if not x >= 0:
        raise ValueError("non-negative number expected")
    return x


def _eren_mode(x):
    if x not in ("modesum", "continuum"):
        raise ValueError("one of modesum, continuum")
    return x


def _opt_float(x):
    return None if x is None else float(x)


# key -> (parser, default, description)
SCHEMA = {
    "experiment": (str, "default", "run name, used for output file names"),
    "output_dir": (str, "results", "directory for JSON/CSV results and manifests"),
    "model.m_p": (_nonneg, 1.0, "particle mass"),
    "model.m_b": (_nonneg, 1.0, "boson mass (> 0)"),
    "model.g": (float, 0.3, "coupling constant"),
    "model.lambda": (_cutoff, 1.0, "ultraviolet cutoff, a number or 'inf'"),
    "grid.radial": (_pos_int, 8, "Gauss-Legendre nodes per radial panel"),
    "grid.angular": (_pos_int, 32, "angles per ring (even)"),
    "grid.r_max": (_opt_float, None, "outer radius; null picks a default"),
    "grid.tol": (_nonneg, 1e-4, "declared relative quadrature tolerance"),
    "levy.eps": (_nonneg, 0.01, "small-jump truncation radius"),
    "mc.n_paths": (_pos_int, 10_000, "number of paths"),
    "mc.seed": (int, 0, "root seed"),
    "mc.t": (_floats, [1.0], "time horizons"),
    "mc.xi": (_xis, [[0.0, 0.0]], "total momenta"),
    "mc.lambdas": (_cutoffs, [4.0, 8.0, 16.0, 32.0, "inf"], "cutoffs of a sweep"),
    "mc.refine": (int, 64, "extra uniform times per path for suprema"),
    "oracle.radial": (_pos_int, 3, "radial nodes of the oracle mode grid"),
    "oracle.angular": (_pos_int, 8, "angles of the oracle mode grid"),
    "oracle.n_max": (int, 3, "maximal total boson number"),
    "oracle.eren_mode": (_eren_mode, "modesum", "renormalization energy inside the oracle"),
    "oracle.lambdas": (_cutoffs, [2.0, 4.0, 8.0], "cutoffs of a ground-energy scan"),
    "action.tol_id": (_nonneg, 1e-4, "median tolerance of the action identity"),
    "action.n_paths": (_pos_int, 1000, "paths for the action identity battery"),
    "action.eps": (_nonneg, 1e-3, "small-jump radius for the action identity battery"),
}


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``values`` holds every schema key."""

    values: dict

    @classmethod
    def from_mapping(cls, data: dict | None) -> "RunConfig":
        flat = flatten(data or {})
        vals = {}
        for key, raw in flat.items():
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            parser = SCHEMA[key][0]
            try:
                vals[key] = parser(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"invalid value {raw!r} ({exc})") from None
        for key, (_, default, _) in SCHEMA.items():
            vals.setdefault(key, default)
        if not vals["model.m_b"] > 0:
            raise ConfigError("model.m_b", "must be > 0")
        if vals["grid.angular"] % 2 or vals["oracle.angular"] % 2:
            raise ConfigError("grid.angular" if vals["grid.angular"] % 2 else "oracle.angular", "must be even")
        if vals["oracle.n_max"] < 0:
            raise ConfigError("oracle.n_max", "must be >= 0")
        if any(t < 0 for t in vals["mc.t"]):
            raise ConfigError("mc.t", "times must be >= 0")
        return cls(vals)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.from_mapping({})
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError("<file>", str(exc)) from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("<root>", "top level must be a mapping")
        return cls.from_mapping(data)

    def __getitem__(self, key: str):
        return self.values[key]

    def with_(self, **changes) -> "RunConfig":
        """Override keys given with ``__`` for dots, e.g. ``mc__n_paths=10``."""
        data = dict(self.values)
        data.update({k.replace("__", "."): v for k, v in changes.items()})
        return RunConfig.from_mapping(data)

    @property
    def params(self) -> ModelParams:
        v = self.values
        return ModelParams(v["model.m_p"], v["model.m_b"], v["model.g"], v["model.lambda"])

    def canonical(self) -> str:
        """Sorted JSON of every key that can change a result (``output_dir`` excluded)."""
        vals = {k: v for k, v in self.values.items() if k != "output_dir"}
        return json.dumps(vals, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def describe() -> str:
    """Plain-text table of the key set."""
    lines = []
    for key, (_, default, doc) in SCHEMA.items():
        d = "null" if default is None else json.dumps(default)
        lines.append(f"{key:20s} {d:32s} {doc}")
    return "\n".join(lines)

