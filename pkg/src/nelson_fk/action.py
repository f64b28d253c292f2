"""Per-path field processes ``U+-`` and the complex action ``u``.

Two evaluators are provided.  The defining form integrates
``<U+_s | e_{X_s} v_lam>`` in time and subtracts ``t E_ren``.  The Ito form
is a jump sum plus a compensator minus a boundary term,

    u = sum_{s <= t} <U+_s | e_{X_s-}(e_{dX_s} - 1) beta>
        + int_0^t <U+_s | e_{X_s} phi beta> ds - <U+_t | e_{X_t} beta>,

with ``beta = v/(omega + phi)`` and ``phi`` the symbol of the simulated
process.  It has a limit as the cutoff is removed and is what
:func:`action_renormalized` evaluates.  On piecewise-constant paths both
forms agree exactly once ``E_ren`` is taken as the grid sum ``<v|beta>``.

For a path truncated at ``eps`` the simulated process has symbol
``psi_eps = psi - small_jump_symbol``; using it as ``phi`` (the default,
``compensator="truncated"``) keeps the removed-cutoff action finite.  With
``compensator="exact"`` the full ``psi`` is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .grid import FieldVector, GridSpec, make_grid
from .levy import LevyPath, sample_paths
from .model import INF, Infinity, ModelParams, e_ren, parse_cutoff, psi_truncated_radial, psi_radial

COMPENSATORS = ("truncated", "exact")


def _sort_cutoffs(cutoffs) -> tuple:
    cut = [parse_cutoff(c) for c in cutoffs]
    finite = sorted({c for c in cut if c is not INF})
    return tuple(finite) + ((INF,) if any(c is INF for c in cut) else ())


@dataclass(frozen=True, eq=False)
class ActionKernel:
    """Node data shared by all paths for one (grid, model, eps, cutoff list).

    Shell ``c`` holds the nodes with ``cutoffs[c-1] <= |k| < cutoffs[c]``.
    ``eren[c]`` is the grid value of ``<v|beta>`` over shells ``0..c``.
    """

    grid: GridSpec
    params: ModelParams
    cutoffs: tuple
    eps: float
    compensator: str
    kx: np.ndarray
    ky: np.ndarray
    w: np.ndarray
    om: np.ndarray
    v: np.ndarray
    beta: np.ndarray
    psib: np.ndarray
    starts: np.ndarray
    eren: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.starts[-1])

    def index(self, lam) -> int:
        lam = parse_cutoff(lam)
        try:
            return self.cutoffs.index(lam)
        except ValueError:
            raise ValueError(f"cutoff {lam} not in kernel cutoffs {self.cutoffs}") from None

    def eren_continuum(self, lam) -> float:
        """Renormalization energy of the simulated model by radial quadrature."""
        lam = parse_cutoff(lam)
        if lam is INF:
            return math.nan
        if self.compensator == "exact" or self.eps <= 0:
            return e_ren(lam, self.params)
        r, wr = self.grid.radii, self.grid.radial_weights
        # only used for diagnostics; the grid prefix sum is what the identity needs
        keep = r < lam
        p = self.params
        phi = psi_truncated_radial(r[keep], p, self.eps)
        om = np.sqrt(r[keep] ** 2 + p.m_b**2)
        return float(2 * math.pi * np.sum(wr[keep] * p.g**2 / om / (om + phi)))


@lru_cache(maxsize=32)
def _build_kernel(grid: GridSpec, params: ModelParams, cutoffs: tuple, eps: float, compensator: str) -> ActionKernel:
    if compensator not in COMPENSATORS:
        raise ValueError(f"compensator must be one of {COMPENSATORS}")
    for c in cutoffs:
        if c is not INF and c > grid.r_max:
            raise ValueError(f"cutoff {c} exceeds the grid radius {grid.r_max}")
    n = grid.n_inside(cutoffs[-1])
    shells = np.array([0] + [grid.n_inside(c) for c in cutoffs], dtype=np.int64)
    k = grid.nodes[:n]
    kabs = grid.kabs[:n]
    om = np.sqrt(kabs**2 + params.m_b**2)
    v = params.g / np.sqrt(om)
    if compensator == "truncated" and eps > 0:
        # radial: evaluate once per radius
        radii = grid.radii[: n // grid.angular]
        phi = np.repeat(psi_truncated_radial(radii, params, eps), grid.angular)
    else:
        phi = psi_radial(kabs, params)
    beta = v / (om + phi)
    w = grid.weights[:n]
    shell_e = np.array([math.fsum(w[a:b] * v[a:b] * beta[a:b]) for a, b in zip(shells[:-1], shells[1:])])
    eren = np.cumsum(shell_e)
    return ActionKernel(
        grid, params, cutoffs, float(eps), compensator,
        np.ascontiguousarray(k[:, 0]), np.ascontiguousarray(k[:, 1]), np.ascontiguousarray(w),
        om, v, beta, phi * beta, shells, eren,
    )


def action_kernel(grid: GridSpec, params: ModelParams, cutoffs=None, eps: float = 0.0,
                  compensator: str = "truncated") -> ActionKernel:
    """Kernel for ``cutoffs`` (default: ``params.lam`` alone)."""
    cutoffs = _sort_cutoffs([params.lam] if cutoffs is None else cutoffs)
    if not cutoffs:
        raise ValueError("need at least one cutoff")
    base = params.with_(lam=INF)  # lam does not enter the node data
    return _build_kernel(grid, base, cutoffs, float(eps), compensator)


# --- batch evaluation --------------------------------------------------------


@dataclass
class BatchActions:
    """Per-path results of :func:`scan_paths`; arrays are indexed ``[path, cutoff]``."""

    cutoffs: tuple
    t: float
    u_ito: np.ndarray
    u_def: np.ndarray
    sup_ito: np.ndarray
    sup_diff: np.ndarray
    x_t: np.ndarray
    U_plus: np.ndarray | None = None
    U_minus: np.ndarray | None = None


def _stack_segments(paths, t, split, start=0.0):
    segs = [p.segments(t, split=split, start=start) for p in paths]
    counts = np.array([s[0].size for s in segs], dtype=np.int64)
    offsets = np.zeros(len(segs) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    a = np.concatenate([s[0] for s in segs]) - start
    b = np.concatenate([s[1] for s in segs]) - start
    x = np.ascontiguousarray(np.concatenate([s[2] for s in segs]))
    return offsets, a, b, x


def scan_paths(paths, t: float, kernel: ActionKernel, store_fields: bool = False,
               refine: int = 0, start: float = 0.0) -> BatchActions:
    """Evaluate every cutoff of ``kernel`` on each path over ``[start, t]``.

    With ``start > 0`` the path is restarted at ``start`` (increments only).
    ``refine`` adds that many uniform split points, which only matters for
    ``sup_ito`` (the action is continuous between jumps).
    """
    paths = list(paths)
    if not paths:
        raise ValueError("no paths")
    if t <= start:
        raise ValueError("need t > start")
    split = tuple(start + (t - start) * np.arange(1, refine) / refine) if refine > 1 else ()
    offsets, a, b, x = _stack_segments(paths, t, split, start)
    npath, nc, nn = len(paths), len(kernel.cutoffs), kernel.n_nodes
    u_ito = np.empty((npath, nc), dtype=complex)
    u_def = np.empty((npath, nc), dtype=complex)
    sup = np.empty((npath, nc))
    supd = np.empty((npath, nc))
    shape = (npath, nn) if store_fields else (1, 1)
    up = np.zeros(shape, dtype=complex)
    um = np.zeros(shape, dtype=complex)
    eren = np.where(np.isfinite(kernel.eren), kernel.eren, 0.0)
    _kernels.scan_batch(offsets, a, b, x, kernel.kx, kernel.ky, kernel.w, kernel.om, kernel.v,
                        kernel.beta, kernel.psib, kernel.starts, kernel.grid.angular, eren,
                        u_ito, u_def, sup, supd, up, um, store_fields)
    xt = np.array([p.position(t) - p.position(start) for p in paths])
    return BatchActions(kernel.cutoffs, t - start, u_ito, u_def, sup, supd, xt,
                        up if store_fields else None, um if store_fields else None)


def action_trajectory(path: LevyPath, t: float, kernel: ActionKernel, refine: int = 64):
    """Ito-form action at the piece ends of ``[0, t]`` (jump times plus ``refine`` uniform points).

    Returns ``(times, u)`` with ``u[j, c]`` the action at ``times[j]`` for cutoff ``c``.
    """
    split = tuple(t * np.arange(1, refine) / refine) if refine > 1 else ()
    a, b, x = path.segments(t, split=split)
    n, ns = a.size, kernel.starts.size - 1
    D, C, J, T = (np.empty((n, ns), dtype=complex) for _ in range(4))
    up = np.empty(kernel.n_nodes, dtype=complex)
    um = np.empty(kernel.n_nodes, dtype=complex)
    _kernels.scan_path(a, b, np.ascontiguousarray(x), kernel.kx, kernel.ky, kernel.w, kernel.om,
                       kernel.v, kernel.beta, kernel.psib, kernel.starts, kernel.grid.angular,
                       D, C, J, T, up, um)
    u = np.cumsum(J + C - T, axis=1)
    return np.concatenate([[0.0], b]), np.vstack([np.zeros((1, ns)), u])


# --- single-path API -----------------------------------------------------------


@dataclass(frozen=True)
class PathFunctionals:
    """Field processes and action of one path at time ``t``.

    ``action`` is the real part of ``raw``; ``imag_residual = |Im raw|``.
    """

    t: float
    U_plus: FieldVector
    U_minus: FieldVector
    raw: complex
    form_tag: str
    lam: float | Infinity

    @property
    def action(self) -> float:
        return self.raw.real

    @property
    def imag_residual(self) -> float:
        return abs(self.raw.imag)


def _eps_of(path: LevyPath, eps):
    return path.eps if eps is None else eps


def path_functionals(path: LevyPath, t: float, params: ModelParams, grid: GridSpec,
                     form: str = "renormalized", compensator: str = "truncated",
                     eren: str = "grid", eps: float | None = None) -> PathFunctionals:
    """Evaluate ``U+-`` and the action at ``params.lam`` in the requested form.

    ``form`` is one of ``defining``, ``ito``, ``renormalized``; the first two
    need a finite cutoff.  ``eren="continuum"`` replaces the grid sum by the
    radial-quadrature renormalization energy in the defining form.
    """
    if form not in ("defining", "ito", "renormalized"):
        raise ValueError(f"unknown form {form!r}")
    if form in ("defining", "ito") and params.lam is INF:
        raise ValueError(f"the {form} form needs a finite cutoff; use the renormalized form")
    if t > path.horizon * (1 + 1e-12):
        raise ValueError(f"t={t} beyond the path horizon {path.horizon}")
    U0 = FieldVector.zeros(grid)
    if t == 0:
        return PathFunctionals(0.0, U0, U0, 0j, form, params.lam)
    kern = action_kernel(grid, params, [params.lam], _eps_of(path, eps), compensator)
    res = scan_paths([path], t, kern, store_fields=True)
    n = kern.n_nodes
    up = np.zeros(grid.size, dtype=complex)
    um = np.zeros(grid.size, dtype=complex)
    up[:n] = res.U_plus[0]
    um[:n] = res.U_minus[0]
    if form == "defining":
        raw = complex(res.u_def[0, 0])
        if eren == "continuum":
            raw += t * (kern.eren[0] - kern.eren_continuum(params.lam))
    else:
        raw = complex(res.u_ito[0, 0])
    return PathFunctionals(t, FieldVector(grid, up), FieldVector(grid, um), raw, form, params.lam)


def u_pm(path: LevyPath, t: float, params: ModelParams, grid: GridSpec) -> tuple[FieldVector, FieldVector]:
    """``(U+_t, U-_t)`` for the cutoff ``params.lam``, exact in time."""
    pf = path_functionals(path, t, params, grid, form="renormalized")
    return pf.U_plus, pf.U_minus


def action_defining(path: LevyPath, t: float, params: ModelParams, grid: GridSpec, **kw) -> float:
    """``int_0^t <U+_s|e_{X_s} v_lam> ds - t E_ren`` (finite cutoff only)."""
    return path_functionals(path, t, params, grid, form="defining", **kw).action


def action_ito(path: LevyPath, t: float, params: ModelParams, grid: GridSpec, **kw) -> complex:
    """Jump sum plus compensator minus boundary term (finite cutoff only)."""
    return path_functionals(path, t, params, grid, form="ito", **kw).raw


def action_renormalized(path: LevyPath, t: float, params: ModelParams, grid: GridSpec, **kw) -> float:
    """Ito-form action with ``beta`` cut at ``params.lam``, which may be ``INF``."""
    return path_functionals(path, t, params, grid, form="renormalized", **kw).action


def t_norm_sq(f: FieldVector, t: float, params: ModelParams) -> float:
    """``||h||_t^2 = ||h||^2 + ||(t omega)^{-1/2} h||^2``."""
    om = np.sqrt(f.grid.kabs**2 + params.m_b**2)
    a2 = np.abs(f.values) ** 2
    return float(np.sum(f.grid.weights * a2 * (1.0 + 1.0 / (t * om))))


def tail_norm_sq(f: FieldVector, sigma: float, t: float, params: ModelParams) -> float:
    """``||chi_{|k| >= sigma} h||_t^2``."""
    keep = f.grid.kabs >= sigma
    om = np.sqrt(f.grid.kabs[keep] ** 2 + params.m_b**2)
    a2 = np.abs(f.values[keep]) ** 2
    return float(np.sum(f.grid.weights[keep] * a2 * (1.0 + 1.0 / (t * om))))


def tail_bound(sigma: float, params: ModelParams) -> float:
    """``6 pi g^2 (sigma^2 + m_b^2)^{-1/2}``."""
    return 6 * math.pi * params.g**2 / math.sqrt(sigma**2 + params.m_b**2)


def identity_battery(params: ModelParams, lambdas=(1.0, 2.0, 4.0), n_paths: int = 1000, eps: float = 1e-3,
                     t: float = 1.0, seed: int = 0, grid: GridSpec | None = None) -> list[dict]:
    """Defining form against Ito form on common paths, one row per cutoff.

    Rows carry the median and 99th percentile of ``|u_def - Re u_ito|`` and
    of ``|Im u_ito|``.
    """
    cutoffs = _sort_cutoffs(lambdas)
    if any(c is INF for c in cutoffs):
        raise ValueError("the defining form needs finite cutoffs")
    grid = grid or make_grid(params, cutoffs)
    kern = action_kernel(grid, params, cutoffs, eps)
    diff, imag = [], []
    for start in range(0, n_paths, 256):
        paths = sample_paths(min(256, n_paths - start), t, eps, params, seed, start=start)
        b = scan_paths(paths, t, kern)
        diff.append(np.abs(b.u_def.real - b.u_ito.real))
        imag.append(np.abs(b.u_ito.imag))
    diff, imag = np.concatenate(diff), np.concatenate(imag)
    return [{
        "lambda": float(c), "n_paths": n_paths,
        "median_diff": float(np.median(diff[:, i])), "p99_diff": float(np.percentile(diff[:, i], 99)),
        "median_imag": float(np.median(imag[:, i])), "p99_imag": float(np.percentile(imag[:, i], 99)),
    } for i, c in enumerate(cutoffs)]
