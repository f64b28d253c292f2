"""Radial-angular momentum grids and field vectors on them.

Radii come from composite Gauss-Legendre rules on panels whose edges include
every finite cutoff in use, so the sharp cutoff ``chi_{B_lambda}`` never cuts
through a panel.  Nodes are stored radial-major, hence the nodes inside a
ball ``B_lambda`` always form a prefix of the node list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import INF, Infinity, ModelParams, coupling_v_radial, parse_cutoff


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Product quadrature for ``int_{R^2} f(k) dk``.

    Parameters
    ----------
    edges : tuple of float
        Radial panel edges, starting at 0.  The last edge is ``r_max``.
    radial : int
        Gauss-Legendre nodes per panel.
    angular : int
        Equispaced angles ``2 pi (a + 1/2)/angular``; must be even so the
        node set is invariant under ``k -> -k``.
    tol : float
        Declared relative quadrature tolerance.
    """

    edges: tuple
    radial: int = 8
    angular: int = 32
    tol: float = 1e-4

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if edges[0] != 0.0 or any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise ValueError(f"panel edges must start at 0 and increase: {edges}")
        if self.radial < 1 or self.angular < 2 or self.angular % 2:
            raise ValueError("need radial >= 1 and an even angular count")
        object.__setattr__(self, "edges", edges)

    @property
    def r_max(self) -> float:
        return self.edges[-1]

    @cached_property
    def _radial_rule(self):
        x, w = np.polynomial.legendre.leggauss(self.radial)
        rs, ws = [], []
        for a, b in zip(self.edges[:-1], self.edges[1:]):
            rs.append(0.5 * (b - a) * x + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * w)
        r = np.concatenate(rs)
        return r, np.concatenate(ws) * r  # weights for f(r) r dr

    @property
    def radii(self) -> np.ndarray:
        return self._radial_rule[0]

    @property
    def radial_weights(self) -> np.ndarray:
        return self._radial_rule[1]

    @cached_property
    def angles(self) -> np.ndarray:
        return 2.0 * math.pi * (np.arange(self.angular) + 0.5) / self.angular

    @cached_property
    def nodes(self) -> np.ndarray:
        """``(n, 2)`` node momenta, radial-major."""
        r = np.repeat(self.radii, self.angular)
        th = np.tile(self.angles, self.radii.size)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.repeat(self.radii, self.angular)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.repeat(self.radial_weights, self.angular) * (2.0 * math.pi / self.angular)

    @property
    def size(self) -> int:
        return self.radii.size * self.angular

    def n_inside(self, lam) -> int:
        """Number of nodes with ``|k| < lam`` (a prefix of the node list)."""
        lam = parse_cutoff(lam)
        if lam is INF:
            return self.size
        return int(np.searchsorted(self.radii, lam, side="left")) * self.angular

    def shell_starts(self, cutoffs) -> np.ndarray:
        """Prefix lengths for increasing cutoffs; used to bin node sums by shell."""
        return np.array([self.n_inside(c) for c in cutoffs], dtype=np.int64)

    def refined(self) -> "GridSpec":
        return GridSpec(self.edges, 2 * self.radial, 2 * self.angular, self.tol)

    def as_dict(self) -> dict:
        return {"edges": list(self.edges), "radial": self.radial, "angular": self.angular,
                "r_max": self.r_max, "tol": self.tol}


def dyadic_edges(r_max: float, cutoffs=(), r_min: float = 0.5) -> tuple:
    """Panel edges ``0, r_min, 2 r_min, ...`` up to ``r_max`` plus every finite cutoff."""
    edges = {0.0, float(r_max)}
    e = r_min
    while e < r_max:
        edges.add(e)
        e *= 2
    for c in cutoffs:
        c = parse_cutoff(c)
        if c is not INF and 0 < c < r_max:
            edges.add(float(c))
    return tuple(sorted(edges))


def r_max_for_infinity(params: ModelParams, tail_tol: float = 1e-3) -> float:
    """Smallest power of two with ``int_{|k|>R} v^2/omega^2 dk = 2 pi g^2/omega(R) < tail_tol``."""
    need = max(2 * math.pi * params.g**2 / tail_tol, 8 * params.m_b)
    return float(2 ** math.ceil(math.log2(need)))


def make_grid(params: ModelParams, cutoffs=(), radial: int = 8, angular: int = 32,
              r_max: float | None = None, tol: float = 1e-4, tail_tol: float = 1e-3) -> GridSpec:
    """Default grid covering all ``cutoffs`` (``INF`` allowed)."""
    cutoffs = [parse_cutoff(c) for c in cutoffs] or [params.lam]
    if r_max is None:
        if any(c is INF for c in cutoffs):
            r_max = r_max_for_infinity(params, tail_tol)
        else:
            r_max = max(max(4 * c for c in cutoffs), 8 * params.m_b)
    finite = [c for c in cutoffs if c is not INF]
    if finite and max(finite) > r_max:
        raise ValueError("r_max must cover every finite cutoff")
    return GridSpec(dyadic_edges(r_max, finite), radial, angular, tol)


def coarse_grid(lam: float, radial: int = 3, angular: int = 8, panels: tuple | None = None) -> GridSpec:
    """Few-mode grid inside ``B_lam`` for the exact-diagonalization arm."""
    lam = float(parse_cutoff(lam))
    edges = panels if panels is not None else (0.0, lam)
    return GridSpec(tuple(edges), radial, angular)


class FieldVector:
    """Element of ``L^2(R^2)`` sampled on the nodes of a :class:`GridSpec`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        values = np.asarray(values, dtype=complex)
        if values.shape != (grid.size,):
            raise ValueError(f"expected {grid.size} node values, got shape {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FieldVector":
        return cls(grid, np.zeros(grid.size, dtype=complex))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "FieldVector":
        return cls(grid, fn(grid.nodes))

    @classmethod
    def from_radial(cls, grid: GridSpec, fn) -> "FieldVector":
        return cls(grid, np.asarray(fn(grid.kabs), dtype=complex))

    def _check(self, other: "FieldVector"):
        if other.grid != self.grid:
            raise GridMismatchError("field vectors live on different grids")

    def __add__(self, other):
        self._check(other)
        return FieldVector(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return FieldVector(self.grid, self.values - other.values)

    def __mul__(self, c):
        return FieldVector(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldVector(self.grid, -self.values)

    def norm(self) -> float:
        return math.sqrt(max(inner(self, self).real, 0.0))

    def __repr__(self):
        return f"FieldVector(n={self.values.size}, norm={self.norm():.6g})"


def inner(f: FieldVector, g: FieldVector) -> complex:
    """``<f|g> = sum_k w_k conj(f_k) g_k`` (antilinear in ``f``)."""
    if f.grid != g.grid:
        raise GridMismatchError("field vectors live on different grids")
    return complex(np.dot(f.grid.weights * np.conj(f.values), g.values))


def phase_factor(x, grid: GridSpec) -> np.ndarray:
    """Node values of ``e_x(k) = exp(-i k.x)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-1j * (grid.nodes @ x))


def apply_phase(x, f: FieldVector) -> FieldVector:
    """Multiply by ``e_x``."""
    return FieldVector(f.grid, phase_factor(x, f.grid) * f.values)


def apply_heat(s: float, f: FieldVector, params: ModelParams) -> FieldVector:
    """Multiply by ``exp(-s omega)``."""
    if s < 0:
        raise ValueError("the heat factor needs s >= 0")
    om = np.sqrt(f.grid.kabs**2 + params.m_b**2)
    return FieldVector(f.grid, np.exp(-s * om) * f.values)


def cutoff_mask(lam, f: FieldVector) -> FieldVector:
    """Multiply by the indicator of the open ball ``B_lam``."""
    n = f.grid.n_inside(lam)
    out = np.zeros_like(f.values)
    out[:n] = f.values[:n]
    return FieldVector(f.grid, out)


def coupling_vector(grid: GridSpec, params: ModelParams, lam: float | Infinity | None = None) -> FieldVector:
    """``v_lam = chi_{B_lam} v`` on the grid."""
    lam = params.lam if lam is None else lam
    v = FieldVector(grid, coupling_v_radial(grid.kabs, params).astype(complex))
    return cutoff_mask(lam, v)
