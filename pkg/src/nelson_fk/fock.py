"""Coherent-state algebra for the Feynman-Kac integrands.

Everything closes on exponential vectors.  For one path, with ``u``, ``U+``
and ``U-`` taken at time ``t``,

    W_t(0) eps(f) = exp(u - <U-|f>) eps(exp(-t omega) f - U+),
    W_t(x)        = Gamma(e_x) W_t(0) Gamma(e_{-x}),
    What_t(xi)    = exp(-i xi.X_t) Gamma(e_{-X_t}) W_t(0),

and ``<eps(g)|eps(h)> = exp(<g|h>)``.  Amplitudes are kept as logarithms
until the final pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .action import path_functionals, t_norm_sq
from .grid import FieldVector, GridMismatchError, GridSpec, inner, phase_factor
from .levy import LevyPath
from .model import INF, ModelParams


def script_S(z: float, tol: float = 1e-13) -> float:
    """``sum_n (n!)^{-1/2} (2 z)^n``.

    Terms are summed until the ratio ``2z/sqrt(n+1)`` drops below 1/2 and
    the geometric remainder bound (twice the next term) is below ``tol``
    relative to the partial sum.
    """
    if z < 0:
        raise ValueError("script_S needs z >= 0")
    if z == 0:
        return 1.0
    lz = math.log(2.0 * z)
    total = 0.0
    n = 0
    while True:
        term = math.exp(n * lz - 0.5 * gammaln(n + 1))
        total += term
        ratio = 2.0 * z / math.sqrt(n + 2)
        nxt = term * 2.0 * z / math.sqrt(n + 1)
        if ratio < 0.5 and 2.0 * nxt < tol * total:
            return total
        n += 1


@dataclass(frozen=True)
class CoherentLabel:
    """Label ``f`` of the exponential vector ``eps(f)``; ``f = 0`` is the vacuum."""

    f: FieldVector

    @classmethod
    def vacuum(cls, grid: GridSpec) -> "CoherentLabel":
        return cls(FieldVector.zeros(grid))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "CoherentLabel":
        return cls(FieldVector.from_function(grid, fn))

    @property
    def grid(self) -> GridSpec:
        return self.f.grid

    @property
    def values(self) -> np.ndarray:
        return self.f.values

    @property
    def is_vacuum(self) -> bool:
        return not np.any(self.f.values)

    def norm(self) -> float:
        return self.f.norm()

    def pairing(self, other: "CoherentLabel") -> complex:
        """``log <eps(self)|eps(other)>``."""
        return inner(self.f, other.f)


@dataclass(frozen=True)
class RankOneWRep:
    """``W eps(f) = exp(scalar) eps(out_label)``."""

    scalar: complex
    out_label: CoherentLabel

    def pair(self, g: CoherentLabel) -> complex:
        """``log <eps(g)| W eps(f)>``."""
        return self.scalar + g.pairing(self.out_label)

    def element(self, g: CoherentLabel) -> complex:
        return complex(np.exp(self.pair(g)))


def _om(grid: GridSpec, params: ModelParams) -> np.ndarray:
    return np.sqrt(grid.kabs**2 + params.m_b**2)


def _fields(path, t, params, grid, **kw):
    form = "renormalized" if params.lam is INF else "ito"
    return path_functionals(path, t, params, grid, form=form, **kw)


def w_from_fields(u: complex, U_plus: FieldVector, U_minus: FieldVector, t: float,
                  params: ModelParams, x, f: CoherentLabel) -> RankOneWRep:
    """Apply ``W_t(x)`` to ``eps(f)`` given the path functionals at ``t``."""
    if f.grid != U_plus.grid:
        raise GridMismatchError("coherent label and field processes live on different grids")
    ph = phase_factor(x, f.grid)
    fx = np.conj(ph) * f.values  # e_{-x} f
    scalar = u - np.dot(f.grid.weights * np.conj(U_minus.values), fx)
    out = ph * (np.exp(-t * _om(f.grid, params)) * fx - U_plus.values)
    return RankOneWRep(complex(scalar), CoherentLabel(FieldVector(f.grid, out)))


def w_on_coherent(path: LevyPath, t: float, params: ModelParams, x, f: CoherentLabel, **kw) -> RankOneWRep:
    """``W_{lam,t}(x) eps(f)`` in rank-one form; identity at ``t = 0``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return RankOneWRep(0j, f)
    pf = _fields(path, t, params, f.grid, **kw)
    return w_from_fields(pf.raw, pf.U_plus, pf.U_minus, t, params, x, f)


def fiber_w_rep(path: LevyPath, t: float, params: ModelParams, xi, f: CoherentLabel, **kw) -> RankOneWRep:
    """``What_{lam,t}(xi) eps(f)`` in rank-one form."""
    if t == 0:
        return RankOneWRep(0j, f)
    rep = w_on_coherent(path, t, params, (0.0, 0.0), f, **kw)
    xt = path.position(t)
    ph = np.conj(phase_factor(xt, f.grid))
    scalar = rep.scalar - 1j * float(np.dot(xi, xt))
    return RankOneWRep(scalar, CoherentLabel(FieldVector(f.grid, ph * rep.out_label.values)))


def fiber_w_element(path: LevyPath, t: float, params: ModelParams, xi, f: CoherentLabel,
                    g: CoherentLabel, **kw) -> complex:
    """``<eps(g)| What_{lam,t}(xi) eps(f)>``."""
    return fiber_w_rep(path, t, params, xi, f, **kw).element(g)


def fiber_log_elements(u, Up, Um, xt, t, grid: GridSpec, params: ModelParams, xi, f, g):
    """Vectorized ``log <eps(g)|What_t(xi) eps(f)>`` over paths.

    ``Up``, ``Um`` have shape ``(npath, n)`` and cover the first ``n`` nodes
    of ``grid`` (the rest vanish); ``f``, ``g`` are node arrays of full size;
    ``xi`` has shape ``(2,)`` or ``(nxi, 2)``.  Returns ``(npath,)`` or
    ``(npath, nxi)``.
    """
    n = Up.shape[1]
    w = grid.weights[:n]
    om = _om(grid, params)
    decay = np.exp(-t * om)
    fv, gv = f[:n], g[:n]
    ph = np.exp(1j * (xt @ grid.nodes[:n].T))  # e_{-X_t}
    # -<U-|f> + <g| e_{-X}(e^{-t om} f - U+)>
    base = u - np.conj(Um) @ (w * fv) + (ph * (decay[:n] * fv - Up)) @ (w * np.conj(gv))
    # nodes outside the covered prefix only carry the free evolution of f
    rest = grid.weights[n:] * np.conj(g[n:]) * decay[n:] * f[n:]
    if np.any(rest):
        base = base + np.exp(1j * (xt @ grid.nodes[n:].T)) @ rest
    xi = np.asarray(xi, dtype=float)
    return (base[:, None] - 1j * (xt @ xi.T)) if xi.ndim == 2 else base - 1j * (xt @ xi)


def flow_check(path: LevyPath, s: float, t: float, params: ModelParams, xi, f: CoherentLabel,
               g_probe_set, **kw) -> float:
    """Largest relative discrepancy of ``What_t = What_{s,t} What_s`` over the probes.

    The left factor uses the path restarted at ``s``.
    """
    if not 0 <= s <= t <= path.horizon * (1 + 1e-12):
        raise ValueError("need 0 <= s <= t <= horizon")
    direct = fiber_w_rep(path, t, params, xi, f, **kw)
    first = fiber_w_rep(path, s, params, xi, f, **kw)
    if t - s > 0:
        second = fiber_w_rep(path.restart(s), t - s, params, xi, first.out_label, **kw)
        comp = RankOneWRep(first.scalar + second.scalar, second.out_label)
    else:
        comp = first
    worst = 0.0
    for g in g_probe_set:
        a, b = direct.pair(g), comp.pair(g)
        # relative difference of exp(a) and exp(b)
        worst = max(worst, abs(np.expm1(b - a)))
    return float(worst)


def t_norm(f: FieldVector, t: float, params: ModelParams) -> float:
    """``||h||_t = (||h||^2 + ||(t omega)^{-1/2} h||^2)^{1/2}``."""
    return math.sqrt(t_norm_sq(f, t, params))


def element_bound(u: float, U_plus: FieldVector, U_minus: FieldVector, t: float,
                  params: ModelParams, f: CoherentLabel, g: CoherentLabel) -> float:
    """``exp(u + ||g|| (||e^{-t omega} f|| + ||U+||) + ||U-|| ||f||)``."""
    decay = FieldVector(f.grid, np.exp(-t * _om(f.grid, params)) * f.values)
    return math.exp(u + g.norm() * (decay.norm() + U_plus.norm()) + U_minus.norm() * f.norm())
