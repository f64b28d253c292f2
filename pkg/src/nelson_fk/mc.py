"""Monte Carlo estimators built on jump-resolved paths.

Path ``i`` of a run with seed ``s`` always comes from the generator
``path_rng(s, i)``, paths are processed in fixed chunks, and per-path
values are concatenated in index order before an exactly rounded
(``math.fsum``) reduction.  Results therefore do not depend on how many
worker processes were used.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .action import action_kernel, scan_paths
from .fock import CoherentLabel, fiber_log_elements, flow_check
from .grid import GridSpec, make_grid
from .levy import sample_paths
from .model import INF, ModelParams, parse_cutoff

WORKERS_ENV = "NELSONFK_WORKERS"
CHUNK = 256
DEFAULT_EPS = 0.01


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def fsum_mean(values) -> tuple[complex, float]:
    """Exactly rounded mean and standard error ``sd/sqrt(n)`` of complex samples."""
    v = np.asarray(values, dtype=complex).ravel()
    n = v.size
    if n == 0:
        raise ValueError("no samples")
    mean = complex(math.fsum(v.real) / n, math.fsum(v.imag) / n)
    if n == 1:
        return mean, math.nan
    dev = np.abs(v - mean) ** 2
    return mean, math.sqrt(math.fsum(dev) / (n - 1) / n)


@dataclass
class MCEstimate:
    """Complex Monte Carlo mean with provenance."""

    quantity: str
    mean: complex
    std_err: float
    n_paths: int
    seed: int
    params: dict
    t: float = math.nan
    xi: tuple = ()
    lam: str = ""
    eps: float = math.nan
    grid: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        xi = [[float(np.real(c)), float(np.imag(c))] if np.iscomplexobj(np.asarray(c)) else float(c) for c in self.xi]
        return {
            "quantity": self.quantity, "params": self.params, "xi": xi, "t": self.t,
            "lambda": self.lam, "mean_re": self.mean.real, "mean_im": self.mean.imag,
            "std_err": self.std_err, "n_paths": self.n_paths, "seed": self.seed,
            "grid": self.grid, "eps": self.eps, "notes": self.notes,
        }


def _estimate(quantity, samples, n_paths, seed, params, t, xi, lam, eps, grid, notes=None) -> MCEstimate:
    mean, se = fsum_mean(samples)
    return MCEstimate(quantity, mean, se, n_paths, seed, params.as_dict(), float(t), tuple(xi),
                      str(lam), float(eps), grid.as_dict() if grid is not None else {},
                      dict(notes or {}), np.asarray(samples))


# --- chunked path engine ------------------------------------------------------


@dataclass(frozen=True)
class Request:
    """One per-path quantity ``exp(i zeta.X_t) conj(<eps(f)|What_t(0) eps(g)>)`` at cutoff index ``cut``.

    For real ``zeta = xi`` this is ``conj(<eps(f)|What_t(xi) eps(g)>)``,
    whose mean is ``<eps(g)|T_t(xi) eps(f)>``.
    """

    cut: int
    zeta: tuple
    f: np.ndarray | None = None
    g: np.ndarray | None = None


@dataclass(frozen=True)
class PathJob:
    params: ModelParams
    grid: GridSpec
    cutoffs: tuple
    eps: float
    compensator: str
    t: float
    seed: int
    refine: int = 0
    requests: tuple = ()

    @property
    def need_fields(self) -> bool:
        return any(r.f is not None or r.g is not None for r in self.requests)

    def __call__(self, start: int, n: int) -> dict:
        paths = sample_paths(n, self.t, self.eps, self.params, self.seed, start=start)
        kern = action_kernel(self.grid, self.params, self.cutoffs, self.eps, self.compensator)
        nc = len(self.cutoffs)
        if self.params.g == 0:
            xt = np.array([p.position(self.t) for p in paths]).reshape(n, 2)
            zero = np.zeros((n, nc), dtype=complex)
            res = dict(u=zero, u_def=zero, sup=np.zeros((n, nc)), sup_diff=np.zeros((n, nc)), xt=xt,
                       Up=np.zeros((n, kern.n_nodes), dtype=complex), Um=np.zeros((n, kern.n_nodes), dtype=complex))
        else:
            b = scan_paths(paths, self.t, kern, store_fields=self.need_fields, refine=self.refine)
            res = dict(u=b.u_ito, u_def=b.u_def, sup=b.sup_ito, sup_diff=b.sup_diff, xt=b.x_t,
                       Up=b.U_plus, Um=b.U_minus)
        res["n_jumps"] = np.array([p.n_jumps for p in paths])
        elems = np.empty((n, len(self.requests)), dtype=complex)
        for q, r in enumerate(self.requests):
            zeta = np.asarray(r.zeta, dtype=complex)
            if r.f is None and r.g is None:
                log0 = res["u"][:, r.cut]
            else:
                m = int(kern.starts[r.cut + 1])
                zf = np.zeros(self.grid.size, dtype=complex)
                f = zf if r.f is None else r.f
                g = zf if r.g is None else r.g
                # <eps(f)|What_t(0) eps(g)>: g is the input label, f the probe
                log0 = fiber_log_elements(res["u"][:, r.cut], res["Up"][:, :m], res["Um"][:, :m],
                                          res["xt"], self.t, self.grid, self.params, (0.0, 0.0), g, f)
            elems[:, q] = np.exp(1j * (res["xt"] @ zeta) + np.conj(log0))
        res["elements"] = elems
        res.pop("Up")
        res.pop("Um")
        return res


def run_paths(job: PathJob, n_paths: int, workers: int | None = None, chunk: int = CHUNK) -> dict:
    """Evaluate ``job`` on paths ``0..n_paths-1`` and concatenate per-path arrays in index order."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    starts = list(range(0, n_paths, chunk))
    sizes = [min(chunk, n_paths - s) for s in starts]
    if workers > 1 and len(starts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, starts, sizes))
    else:
        parts = [job(s, n) for s, n in zip(starts, sizes)]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _label_values(label, grid: GridSpec):
    if label is None:
        return None
    if isinstance(label, CoherentLabel):
        if label.grid != grid:
            raise ValueError("coherent label lives on a different grid")
        return None if label.is_vacuum else label.values
    vals = np.asarray(label, dtype=complex)
    if vals.shape != (grid.size,):
        raise ValueError("label must have one value per grid node")
    return vals if np.any(vals) else None


def _setup(params: ModelParams, cutoffs, grid):
    cutoffs = tuple(parse_cutoff(c) for c in cutoffs)
    if grid is None:
        grid = make_grid(params, cutoffs)
    return cutoffs, grid


def _free_pairing(f, g, grid: GridSpec) -> complex:
    if f is None or g is None:
        return 0j
    return complex(np.dot(grid.weights * np.conj(g), f))


# --- estimators -------------------------------------------------------------------


def fiber_semigroup(xi, t: float, params: ModelParams, f=None, g=None, n_paths: int = 10_000, seed: int = 0,
                    grid: GridSpec | None = None, eps: float = DEFAULT_EPS, compensator: str = "truncated",
                    workers: int | None = None) -> MCEstimate:
    """``<eps(g)| T_{lam,t}(xi) eps(f)>`` as the mean of ``conj(<eps(f)|What_t(xi) eps(g)>)``.

    ``f`` and ``g`` are :class:`CoherentLabel` objects, node arrays or
    ``None`` (vacuum).  ``params.lam`` may be ``INF``.
    """
    cutoffs, grid = _setup(params, [params.lam], grid)
    fv, gv = _label_values(f, grid), _label_values(g, grid)
    xi = tuple(float(c) for c in np.asarray(xi, dtype=float))
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        val = np.exp(_free_pairing(fv, gv, grid))
        return MCEstimate("fiber_semigroup", complex(val), 0.0, n_paths, seed, params.as_dict(), 0.0, xi,
                          str(params.lam), eps, grid.as_dict(), {"exact": "t = 0"})
    job = PathJob(params, grid, cutoffs, eps, compensator, t, seed, requests=(Request(0, xi, fv, gv),))
    out = run_paths(job, n_paths, workers)
    return _estimate("fiber_semigroup", out["elements"][:, 0], n_paths, seed, params, t, xi, params.lam, eps, grid,
                     {"compensator": compensator, "mean_jumps": float(out["n_jumps"].mean())})


def analytic_fiber(zeta, t: float, params: ModelParams, f=None, g=None, n_paths: int = 10_000, seed: int = 0,
                   grid: GridSpec | None = None, eps: float = DEFAULT_EPS, compensator: str = "truncated",
                   workers: int | None = None) -> MCEstimate:
    """``E[exp(i zeta.X_t) conj(<eps(f)|What_t(0) eps(g)>)]`` for complex ``zeta`` in the strip ``|Im zeta| < m_p``."""
    zeta = np.asarray(zeta, dtype=complex)
    if params.m_p <= 0:
        raise ValueError("analytic continuation needs m_p > 0")
    a = float(np.linalg.norm(zeta.imag))
    if not a < params.m_p:
        raise ValueError(f"|Im zeta| = {a} outside the strip of width m_p = {params.m_p}")
    cutoffs, grid = _setup(params, [params.lam], grid)
    fv, gv = _label_values(f, grid), _label_values(g, grid)
    job = PathJob(params, grid, cutoffs, eps, compensator, t, seed, requests=(Request(0, tuple(zeta), fv, gv),))
    out = run_paths(job, n_paths, workers)
    weight = np.exp(a * np.hypot(out["xt"][:, 0], out["xt"][:, 1]))
    notes = {"weight_mean": float(weight.mean()), "weight_max": float(weight.max()),
             "weight_second_moment": float(np.mean(weight**2))}
    return _estimate("analytic_fiber", out["elements"][:, 0], n_paths, seed, params, t, tuple(zeta),
                     params.lam, eps, grid, notes)


@dataclass
class SweepResult:
    cutoffs: tuple
    estimates: list
    diff_to_top: list  # (mean, std_err) of per-path differences against the largest cutoff
    successive: list  # |mean_{i+1} - mean_i|
    sup_path_diff_median: list  # median over paths of sup_s |exp(u_lam,s) - exp(u_top,s)|

    def as_dict(self) -> dict:
        return {
            "lambda": [str(c) for c in self.cutoffs],
            "estimates": [e.as_dict() for e in self.estimates],
            "diff_to_top": [{"re": d[0].real, "im": d[0].imag, "abs": abs(d[0]), "std_err": d[1]} for d in self.diff_to_top],
            "successive": self.successive,
            "sup_path_diff_median": self.sup_path_diff_median,
        }


def lambda_sweep(xi, t: float, params_base: ModelParams, lambdas, f=None, g=None, n_paths: int = 10_000,
                 seed: int = 0, grid: GridSpec | None = None, eps: float = DEFAULT_EPS,
                 compensator: str = "truncated", workers: int | None = None) -> SweepResult:
    """Fiber elements for every cutoff on one common path set."""
    cutoffs, grid = _setup(params_base, lambdas, grid)
    order = sorted(range(len(cutoffs)), key=lambda i: (cutoffs[i] is INF, 0 if cutoffs[i] is INF else cutoffs[i]))
    cutoffs = tuple(cutoffs[i] for i in order)
    fv, gv = _label_values(f, grid), _label_values(g, grid)
    xi = tuple(float(c) for c in np.asarray(xi, dtype=float))
    reqs = tuple(Request(c, xi, fv, gv) for c in range(len(cutoffs)))
    job = PathJob(params_base.with_(lam=INF), grid, cutoffs, eps, compensator, t, seed, requests=reqs)
    out = run_paths(job, n_paths, workers)
    el = out["elements"]
    ests = [_estimate("lambda_sweep", el[:, c], n_paths, seed, params_base.with_(lam=lam), t, xi, lam, eps, grid,
                      {"compensator": compensator}) for c, lam in enumerate(cutoffs)]
    diffs = [fsum_mean(el[:, c] - el[:, -1]) for c in range(len(cutoffs))]
    succ = [abs(ests[i + 1].mean - ests[i].mean) for i in range(len(ests) - 1)]
    supd = [float(np.median(out["sup_diff"][:, c])) for c in range(len(cutoffs))]
    return SweepResult(cutoffs, ests, diffs, succ, supd)


def moment_diagnostics(t: float, params: ModelParams, lambdas, powers=(1, 2), n_paths: int = 10_000,
                       seed: int = 0, grid: GridSpec | None = None, eps: float = DEFAULT_EPS,
                       refine: int = 64, workers: int | None = None) -> dict:
    """``E[sup_{s<=t} exp(p u_{lam,s})]`` on common paths.

    The supremum runs over the jump times plus ``refine`` uniform points.
    """
    cutoffs, grid = _setup(params, lambdas, grid)
    order = sorted(range(len(cutoffs)), key=lambda i: (cutoffs[i] is INF, 0 if cutoffs[i] is INF else cutoffs[i]))
    cutoffs = tuple(cutoffs[i] for i in order)
    job = PathJob(params.with_(lam=INF), grid, cutoffs, eps, "truncated", t, seed, refine=refine)
    out = run_paths(job, n_paths, workers)
    table = {}
    for p in powers:
        row = []
        for c, lam in enumerate(cutoffs):
            vals = np.exp(p * out["sup"][:, c])
            m, se = fsum_mean(vals)
            row.append({"lambda": str(lam), "mean": m.real, "std_err": se, "max": float(vals.max())})
        means = [r["mean"] for r in row]
        table[p] = {"rows": row, "spread": (max(means) - min(means)) / min(means)}
    return {"cutoffs": [str(c) for c in cutoffs], "n_paths": n_paths, "seed": seed, "t": t, "eps": eps,
            "moments": table}


def semigroup_check(xi, t: float, s: float, params: ModelParams, f=None, g_probe_set=(), n_paths: int = 100,
                    seed: int = 0, grid: GridSpec | None = None, eps: float = DEFAULT_EPS, oracle_trunc=None) -> dict:
    """Per-path flow residuals and, at finite cutoff, the oracle factorization residual."""
    if not 0 < s < t:
        raise ValueError("need 0 < s < t")
    cutoffs, grid = _setup(params, [params.lam], grid)
    f = f if isinstance(f, CoherentLabel) else CoherentLabel.vacuum(grid) if f is None else CoherentLabel(f)
    probes = list(g_probe_set) or [CoherentLabel.vacuum(grid), f]
    paths = sample_paths(n_paths, t, eps, params, seed)
    res = [flow_check(p, s, t, params, xi, f, probes) for p in paths]
    report = {"flow_max": float(max(res)), "flow_median": float(np.median(res)), "n_paths": n_paths}
    if params.lam is not INF:
        from .oracle import build_fiber, semigroup_residual, trunc_rule

        tr = oracle_trunc or trunc_rule(params.lam, radial=1, angular=4, n_max=3)
        fm = build_fiber(xi, params.lam, tr, params)
        report["oracle_residual"] = semigroup_residual(fm, t, s)
        report["oracle_dim"] = tr.dim
    return report


# --- position space -------------------------------------------------------------


@dataclass(frozen=True)
class GaussianProfile:
    """``rho(x) = exp(-|x - c|^2/(2 s^2) + i p.x)`` with unitary Fourier transform
    ``rho_hat(xi) = s^2 exp(-i (xi - p).c - s^2 |xi - p|^2/2)``."""

    center: tuple = (0.0, 0.0)
    width: float = 1.0
    momentum: tuple = (0.0, 0.0)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c, p = np.asarray(self.center), np.asarray(self.momentum)
        d = x - c
        return np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2) + 1j * (x @ p))

    def fourier(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        c, p = np.asarray(self.center), np.asarray(self.momentum)
        q = xi - p
        return self.width**2 * np.exp(-1j * (q @ c) - self.width**2 * np.sum(q * q, axis=-1) / 2)


@dataclass(frozen=True)
class PlaneQuadrature:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, half_width: float, step: float, center=(0.0, 0.0)) -> "PlaneQuadrature":
        """Trapezoid rule on a square; spectrally accurate for rapidly decaying integrands."""
        n = int(round(half_width / step))
        ax = step * np.arange(-n, n + 1)
        gx, gy = np.meshgrid(ax + center[0], ax + center[1], indexing="ij")
        nodes = np.column_stack([gx.ravel(), gy.ravel()])
        return cls(nodes, np.full(nodes.shape[0], step * step))


def _overlaps(rho_out, rho_in, xt, x_quad: PlaneQuadrature, block: int = 512) -> np.ndarray:
    """``int conj(rho_out(x)) rho_in(x + X_t) dx`` per path."""
    a = x_quad.weights * np.conj(rho_out(x_quad.nodes))
    out = np.empty(xt.shape[0], dtype=complex)
    for i in range(0, xt.shape[0], block):
        shifted = x_quad.nodes[None, :, :] + xt[i:i + block, None, :]
        out[i:i + block] = rho_in(shifted) @ a
    return out


def _default_x_quad(rho_out) -> PlaneQuadrature:
    s = getattr(rho_out, "width", 1.0)
    return PlaneQuadrature.uniform(10 * s, s / 4, getattr(rho_out, "center", (0.0, 0.0)))


def full_pairing(rho_out, rho_in, f, g, t: float, params: ModelParams, n_paths: int = 10_000, seed: int = 0,
                 x_quad: PlaneQuadrature | None = None, grid: GridSpec | None = None, eps: float = DEFAULT_EPS,
                 workers: int | None = None) -> MCEstimate:
    """``<rho_out eps(g), exp(-t H_lam) rho_in eps(f)>`` by the full-space Feynman-Kac formula.

    Per path the integrand is ``conj(rho_out(x)) rho_in(x + X_t) conj(<eps(f)|W_t(x) eps(g)>)``
    integrated over ``x_quad``.
    """
    cutoffs, grid = _setup(params, [params.lam], grid)
    x_quad = x_quad or _default_x_quad(rho_out)
    fv, gv = _label_values(f, grid), _label_values(g, grid)
    if t == 0:
        ov = np.dot(x_quad.weights * np.conj(rho_out(x_quad.nodes)), rho_in(x_quad.nodes))
        val = ov * np.exp(_free_pairing(fv, gv, grid))
        return MCEstimate("full_pairing", complex(val), 0.0, n_paths, seed, params.as_dict(), 0.0, (),
                          str(params.lam), eps, grid.as_dict(), {"exact": "t = 0"})
    if fv is None and gv is None:
        job = PathJob(params, grid, cutoffs, eps, "truncated", t, seed)
        out = run_paths(job, n_paths, workers)
        vals = np.exp(out["u"][:, 0].real) * _overlaps(rho_out, rho_in, out["xt"], x_quad)
        return _estimate("full_pairing", vals, n_paths, seed, params, t, (), params.lam, eps, grid,
                         {"field_sector": "vacuum"})
    return _full_pairing_coherent(rho_out, rho_in, fv, gv, t, params, n_paths, seed, x_quad, grid, cutoffs, eps)


def _full_pairing_coherent(rho_out, rho_in, fv, gv, t, params, n_paths, seed, x_quad, grid, cutoffs, eps):
    zf = np.zeros(grid.size, dtype=complex)
    f = zf if fv is None else fv
    g = zf if gv is None else gv
    kern = action_kernel(grid, params, cutoffs, eps)
    n = kern.n_nodes
    w = grid.weights
    om = np.sqrt(grid.kabs**2 + params.m_b**2)
    free = np.dot(w * np.conj(f), np.exp(-t * om) * g)
    E = np.exp(1j * (x_quad.nodes @ grid.nodes[:n].T))  # e_{-x} on the covered nodes
    a = x_quad.weights * np.conj(rho_out(x_quad.nodes))
    vals = []
    for start in range(0, n_paths, CHUNK):
        m = min(CHUNK, n_paths - start)
        paths = sample_paths(m, t, eps, params, seed, start=start)
        b = scan_paths(paths, t, kern, store_fields=True)
        # log <eps(f)|W_t(x) eps(g)> = u - <U-|e_{-x} g> + <e_{-x} f|e^{-t om} e_{-x} g> - <e_{-x} f|U+>
        lu = b.u_ito[:, 0][:, None] - (np.conj(b.U_minus) * (w[:n] * g[:n])) @ E.T \
            + free - (b.U_plus * (w[:n] * np.conj(f[:n]))) @ np.conj(E).T
        rin = np.stack([rho_in(x_quad.nodes + xt) for xt in b.x_t])
        vals.append((rin * np.exp(np.conj(lu))) @ a)
    return _estimate("full_pairing", np.concatenate(vals), n_paths, seed, params, t, (), params.lam, eps, grid,
                     {"field_sector": "coherent"})


def fiber_vs_full(rho_out, rho_in, t: float, params: ModelParams, xi_quad: PlaneQuadrature | None = None,
                  n_paths: int = 10_000, seed: int = 0, x_quad: PlaneQuadrature | None = None,
                  grid: GridSpec | None = None, eps: float = DEFAULT_EPS, field_sector: str = "vacuum",
                  workers: int | None = None) -> dict:
    """Vacuum-sector comparison of the full pairing with the fiber integral on shared paths.

    Fiber side per path: ``exp(u) int conj(rho_hat_out) rho_hat_in exp(i xi.X_t) dxi``.
    """
    if field_sector != "vacuum":
        raise ValueError("only the vacuum field sector is supported")
    cutoffs, grid = _setup(params, [params.lam], grid)
    x_quad = x_quad or _default_x_quad(rho_out)
    if xi_quad is None:
        s = getattr(rho_out, "width", 1.0)
        xi_quad = PlaneQuadrature.uniform(8.0 / s, 0.2 / s, getattr(rho_out, "momentum", (0.0, 0.0)))
    if t == 0:
        full = np.dot(x_quad.weights * np.conj(rho_out(x_quad.nodes)), rho_in(x_quad.nodes))
        fib = np.dot(xi_quad.weights * np.conj(rho_out.fourier(xi_quad.nodes)), rho_in.fourier(xi_quad.nodes))
        return {"full": complex(full), "fiber": complex(fib), "residual": abs(full - fib) / abs(full)}
    job = PathJob(params, grid, cutoffs, eps, "truncated", t, seed)
    out = run_paths(job, n_paths, workers)
    eu = np.exp(out["u"][:, 0].real)
    full = eu * _overlaps(rho_out, rho_in, out["xt"], x_quad)
    spectral = xi_quad.weights * np.conj(rho_out.fourier(xi_quad.nodes)) * rho_in.fourier(xi_quad.nodes)
    fib = np.empty_like(full)
    for i in range(0, full.size, 512):
        fib[i:i + 512] = eu[i:i + 512] * (np.exp(1j * (out["xt"][i:i + 512] @ xi_quad.nodes.T)) @ spectral)
    e_full = _estimate("full_pairing", full, n_paths, seed, params, t, (), params.lam, eps, grid)
    e_fib = _estimate("fiber_integral", fib, n_paths, seed, params, t, (), params.lam, eps, grid)
    scale = max(abs(e_full.mean), 1e-300)
    return {
        "full": e_full, "fiber": e_fib,
        "residual": abs(e_full.mean - e_fib.mean) / scale,
        "max_path_residual": float(np.max(np.abs(full - fib)) / scale),
    }


def free_pairing_fourier(rho_out, rho_in, t: float, params: ModelParams, xi_quad: PlaneQuadrature | None = None) -> complex:
    """``int conj(rho_hat_out) rho_hat_in exp(-t psi) dxi`` (the uncoupled value)."""
    from .model import psi

    if xi_quad is None:
        s = getattr(rho_out, "width", 1.0)
        xi_quad = PlaneQuadrature.uniform(8.0 / s, 0.2 / s, getattr(rho_out, "momentum", (0.0, 0.0)))
    vals = np.conj(rho_out.fourier(xi_quad.nodes)) * rho_in.fourier(xi_quad.nodes) * np.exp(-t * psi(xi_quad.nodes, params))
    return complex(np.dot(xi_quad.weights, vals))
