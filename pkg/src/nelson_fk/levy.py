"""Sampling of the planar Levy process with symbol ``-psi``.

Two samplers are provided: exact marginals ``X_t`` through Gaussian
subordination, and jump-resolved piecewise-constant paths (compound Poisson
with the jumps of modulus below ``eps`` discarded).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .model import ModelParams, jump_rate, small_jump_second_moment

PATH_STREAM = 0x5A17


def path_rng(seed: int, index: int, stream: int = PATH_STREAM) -> np.random.Generator:
    """Counter-based generator: path ``index`` of run ``seed`` gets its own stream."""
    return np.random.default_rng([int(seed), int(stream), int(index)])


def sample_subordinator(t: float, m_p: float, rng: np.random.Generator, size=None):
    """Subordinator ``S_t`` with Laplace exponent ``sqrt(lam + m_p^2) - m_p``.

    Inverse Gaussian with mean ``t/(2 m_p)`` and shape ``t^2/2`` when
    ``m_p > 0``; the one-sided 1/2-stable (Levy) law ``t^2/(2 Z^2)`` otherwise.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if m_p > 0:
        return _inverse_gaussian(t / (2.0 * m_p), t * t / 2.0, rng, size)
    z = rng.standard_normal(size=size)
    return t * t / (2.0 * z * z)


def _inverse_gaussian(mu: float, shape: float, rng: np.random.Generator, size=None):
    """Michael-Schucany-Haas sampler.

    The small root is taken as ``mu^2/x_big`` so that ``mu/shape >> 1``
    (short times) does not cancel; ``Generator.wald`` returns negative
    values there.
    """
    y = rng.standard_normal(size=size) ** 2
    my = mu * y
    big = mu + mu * (my + np.sqrt(my * (4.0 * shape + my))) / (2.0 * shape)
    small = mu * mu / big
    u = rng.random(size=size)
    return np.where(u * (mu + small) <= mu, small, big)


def sample_increment(t: float, params: ModelParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact sample(s) of ``X_t``; shape ``(2,)`` or ``(size, 2)``."""
    s = np.asarray(sample_subordinator(t, params.m_p, rng, size=size))
    z = rng.standard_normal(size=s.shape + (2,))
    return z * np.sqrt(2.0 * s)[..., None]


def subordinator_check(t: float, params: ModelParams, rng: np.random.Generator,
                       lambda_probe: float, n: int = 200_000) -> tuple[float, float, float]:
    """Monte Carlo ``E[exp(-lambda_probe S_t)]``.

    Returns ``(estimate, standard_error, exact)``.
    """
    exact = math.exp(-t * (math.sqrt(lambda_probe + params.m_p**2) - params.m_p))
    if lambda_probe == 0:
        return 1.0, 0.0, 1.0
    vals = np.exp(-lambda_probe * sample_subordinator(t, params.m_p, rng, size=n))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), exact


def sample_jump_moduli(n: int, eps: float, m_p: float, rng: np.random.Generator) -> np.ndarray:
    """Moduli drawn from ``nu`` restricted to ``|z| >= eps``.

    The survival function is ``exp(-m_p r)/r`` up to normalization, so the
    inverse CDF is explicit through the Lambert W function.
    """
    u = 1.0 - rng.random(n)  # in (0, 1]
    y = u * math.exp(-m_p * eps) / eps
    if m_p == 0:
        return 1.0 / y
    return special.lambertw(m_p / y).real / m_p


@dataclass(frozen=True, eq=False)
class LevyPath:
    """Piecewise-constant cadlag path on ``[0, horizon]`` with ``X_0 = 0``."""

    horizon: float
    eps: float
    times: np.ndarray  # (n,) strictly increasing in (0, horizon]
    jumps: np.ndarray  # (n, 2)
    seed: tuple = ()
    discarded_variance: float = 0.0
    positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        jumps = np.asarray(self.jumps, dtype=float).reshape(-1, 2)
        if times.size != jumps.shape[0]:
            raise ValueError("times and jumps differ in length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing in (0, horizon]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", jumps)
        pos = np.zeros((times.size + 1, 2))
        np.cumsum(jumps, axis=0, out=pos[1:])
        object.__setattr__(self, "positions", pos)

    @property
    def n_jumps(self) -> int:
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, LevyPath):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.eps == other.eps
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.jumps, other.jumps)
        )

    def position(self, t) -> np.ndarray:
        """``X_t`` (right-continuous)."""
        idx = np.searchsorted(self.times, t, side="right")
        return self.positions[idx]

    def position_left(self, t) -> np.ndarray:
        """``X_{t-}``."""
        idx = np.searchsorted(self.times, t, side="left")
        return self.positions[idx]

    def segments(self, t: float | None = None, split=(), start: float = 0.0):
        """Constant pieces of the path on ``[start, t]``.

        Returns ``(a, b, x)``: piece ``j`` occupies ``[a_j, b_j)`` with
        ``X = x_j`` there.  Extra ``split`` times cut pieces without a jump.
        Positions are relative to ``X_start``.
        """
        t = self.horizon if t is None else float(t)
        if t > self.horizon * (1 + 1e-12):
            raise ValueError(f"t={t} beyond the path horizon {self.horizon}")
        if start < 0 or start > t:
            raise ValueError("need 0 <= start <= t")
        inner = self.times[(self.times > start) & (self.times < t)]
        extra = np.asarray([s for s in split if start < s < t], dtype=float)
        cuts = np.union1d(inner, extra)
        a = np.concatenate([[start], cuts])
        b = np.concatenate([cuts, [t]])
        x = self.position(a) - self.position(start)
        return a, b, x

    def restart(self, s: float) -> "LevyPath":
        """The increments ``(X_{s+r} - X_s)_{r >= 0}`` as a path on ``[0, horizon - s]``."""
        keep = self.times > s
        return LevyPath(self.horizon - s, self.eps, self.times[keep] - s, self.jumps[keep],
                        self.seed, self.discarded_variance)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# T", "eps", "seed"])
        w.writerow([repr(self.horizon), repr(self.eps), ":".join(str(s) for s in self.seed)])
        w.writerow(["s", "dx", "dy"])
        for s, (dx, dy) in zip(self.times, self.jumps):
            w.writerow([repr(float(s)), repr(float(dx)), repr(float(dy))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LevyPath":
        rows = list(csv.reader(io.StringIO(text)))
        horizon, eps = float(rows[1][0]), float(rows[1][1])
        seed = tuple(int(s) for s in rows[1][2].split(":") if s)
        body = np.array([[float(c) for c in r] for r in rows[3:]]).reshape(-1, 3)
        return cls(horizon, eps, body[:, 0], body[:, 1:], seed)


@lru_cache(maxsize=128)
def _discarded_variance(eps: float, m_p: float) -> float:
    return small_jump_second_moment(eps, ModelParams(m_p=m_p)) / 2.0


def sample_path(T: float, eps: float, params: ModelParams, rng: np.random.Generator,
                seed: tuple = ()) -> LevyPath:
    """Compound Poisson path with the jumps of ``X`` of modulus ``>= eps``.

    No drift and no Gaussian part are added; ``nu`` is symmetric so the
    retained jumps need no compensation.  The discarded small-jump martingale
    has per-coordinate variance ``discarded_variance`` per unit time.
    """
    if not T > 0 or not eps > 0:
        raise ValueError("need T > 0 and eps > 0")
    rate = jump_rate(eps, params)
    n = rng.poisson(rate * T)
    times = np.sort(T * (1.0 - rng.random(n)))
    radius = sample_jump_moduli(n, eps, params.m_p, rng)
    angle = 2.0 * math.pi * rng.random(n)
    jumps = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    if n and np.any(np.diff(times) <= 0):  # measure-zero tie, resolved by resampling
        return sample_path(T, eps, params, rng, seed)
    return LevyPath(T, eps, times, jumps, tuple(seed), _discarded_variance(eps, params.m_p))


def sample_paths(n: int, T: float, eps: float, params: ModelParams, seed: int,
                 start: int = 0) -> list[LevyPath]:
    """Paths ``start .. start+n-1`` of the counter-based stream ``seed``."""
    return [sample_path(T, eps, params, path_rng(seed, i), seed=(seed, i)) for i in range(start, start + n)]
