"""Exact diagonalization of the fiber Hamiltonian on a truncated Fock space.

The field is restricted to finitely many momentum modes ``k_j`` with
quadrature weights ``w_j`` (the nodes of a coarse :class:`GridSpec` inside
``B_lam``).  Mode ``j`` carries the normalized function ``w_j^{-1/2}``
times the indicator of its cell, so a field vector ``h`` becomes the
amplitudes ``h(k_j) sqrt(w_j)``.  In the occupation basis with total boson
number at most ``n_max``

    H(xi) = phi_p(xi - sum_j n_j k_j) + sum_j n_j omega_j
            + sum_j v_j sqrt(w_j) (a_j + a_j^*) + E_ren.

This is the same discrete-mode model the Monte Carlo arm simulates when it
runs on the same grid, so the two arms differ only by Monte Carlo error,
boson-number truncation and the choice of particle dispersion ``phi_p``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .grid import GridSpec, dyadic_edges
from .model import INF, ModelParams, e_ren, parse_cutoff, psi_radial, psi_truncated_radial

MAX_DIM = 5000


class DimensionError(ValueError):
    pass


def basis_size(m: int, n_max: int) -> int:
    return math.comb(m + n_max, n_max)


def enumerate_basis(m: int, n_max: int) -> np.ndarray:
    """``(dim, m)`` occupation numbers ordered by total number, then lexicographically."""
    rows = []
    for n in range(n_max + 1):
        for combo in itertools.combinations_with_replacement(range(m), n):
            occ = np.zeros(m, dtype=np.int64)
            for j in combo:
                occ[j] += 1
            rows.append(occ)
    return np.array(rows, dtype=np.int64).reshape(-1, m)


@dataclass(frozen=True)
class TruncatedFock:
    """Occupation basis over the grid nodes inside ``B_lam`` with at most ``n_max`` bosons."""

    grid: GridSpec
    lam: float
    n_max: int = 3

    def __post_init__(self):
        lam = parse_cutoff(self.lam)
        if lam is INF:
            raise ValueError("the oracle needs a finite cutoff")
        object.__setattr__(self, "lam", lam)
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")

    @property
    def n_modes(self) -> int:
        return self.grid.n_inside(self.lam)

    @property
    def momenta(self) -> np.ndarray:
        return self.grid.nodes[: self.n_modes]

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights[: self.n_modes]

    @property
    def dim(self) -> int:
        return basis_size(self.n_modes, self.n_max)

    @cached_property
    def basis(self) -> np.ndarray:
        """``(dim, M)`` occupation numbers ordered by total number, then lexicographically."""
        if self.dim > MAX_DIM:
            raise DimensionError(f"basis dimension {self.dim} exceeds the cap {MAX_DIM}")
        return enumerate_basis(self.n_modes, self.n_max)

    @cached_property
    def _index(self) -> dict:
        return {row.tobytes(): i for i, row in enumerate(self.basis)}

    def index(self, occ) -> int:
        return self._index[np.asarray(occ, dtype=np.int64).tobytes()]

    def with_n_max(self, n_max: int) -> "TruncatedFock":
        return TruncatedFock(self.grid, self.lam, n_max)

    def coherent_vector(self, h) -> np.ndarray:
        """Components ``prod_j alpha_j^{n_j}/sqrt(n_j!)`` of ``eps(h)`` with ``alpha_j = h(k_j) sqrt(w_j)``.

        ``h`` is a node array on ``grid`` (or a label with ``.values``); ``None`` is the vacuum.
        """
        out = np.zeros(self.dim, dtype=complex)
        if h is None:
            out[0] = 1.0
            return out
        vals = np.asarray(getattr(h, "values", h), dtype=complex)
        if np.any(vals[self.n_modes:]):
            raise ValueError("coherent label has weight outside the oracle modes")
        alpha = vals[: self.n_modes] * np.sqrt(self.weights)
        b = self.basis
        fact = np.array([math.factorial(k) for k in range(self.n_max + 1)], dtype=float)
        out[:] = np.prod(alpha[None, :] ** b / np.sqrt(fact[b]), axis=1)
        return out


def trunc_rule(lam: float, radial: int = 2, angular: int = 8, n_max: int = 2, r_min: float = 0.5) -> TruncatedFock:
    """Modes on dyadic Gauss-Legendre panels up to ``lam``, so the mode set grows with the cutoff."""
    lam = float(parse_cutoff(lam))
    edges = tuple(e for e in dyadic_edges(lam, (), r_min=r_min) if e <= lam)
    return TruncatedFock(GridSpec(edges, radial, angular), lam, n_max)


@dataclass
class FiberMatrix:
    """Dense real symmetric ``H_lam(xi)`` with cached eigendecomposition."""

    matrix: np.ndarray
    xi: tuple
    lam: float
    trunc: TruncatedFock
    eren: float
    meta: dict = field(default_factory=dict)

    @cached_property
    def eig(self):
        return linalg.eigh(self.matrix)

    @property
    def ground_energy(self) -> float:
        return float(self.eig[0][0])


def mode_data(trunc: TruncatedFock, params: ModelParams, eps: float = 0.0):
    """``(k, w, omega, v, beta)`` per mode; ``eps > 0`` uses the truncated particle symbol."""
    k, w = trunc.momenta, trunc.weights
    kabs = np.hypot(k[:, 0], k[:, 1])
    om = np.sqrt(kabs**2 + params.m_b**2)
    v = params.g / np.sqrt(om)
    phi = psi_truncated_radial(kabs, params, eps) if eps > 0 else psi_radial(kabs, params)
    return k, w, om, v, v / (om + phi)


def build_fiber(xi, lam, trunc: TruncatedFock, params: ModelParams, eren_mode: str = "modesum",
                eps: float = 0.0) -> FiberMatrix:
    """Matrix of the fiber Hamiltonian at total momentum ``xi``.

    ``eren_mode`` is ``modesum`` (``sum_j w_j v_j beta_j``) or ``continuum``
    (radial quadrature).  ``eps > 0`` replaces ``psi`` by the symbol of the
    process with jumps below ``eps`` removed, which is the dispersion a
    Monte Carlo run at that truncation realizes.
    """
    lam = parse_cutoff(lam)
    if lam is INF:
        raise ValueError("build_fiber needs a finite cutoff")
    if lam != trunc.lam:
        raise ValueError(f"cutoff {lam} differs from the truncation cutoff {trunc.lam}")
    if eren_mode not in ("modesum", "continuum"):
        raise ValueError("eren_mode must be 'modesum' or 'continuum'")
    k, w, om, v, beta = mode_data(trunc, params, eps)
    if eren_mode == "modesum":
        eren = math.fsum(w * v * beta)
    else:
        if eps > 0:
            raise ValueError("the continuum renormalization energy is only defined for the exact symbol")
        eren = e_ren(lam, params)
    b = trunc.basis
    xi = np.asarray(xi, dtype=float)
    p = xi[None, :] - b @ k
    pabs = np.hypot(p[:, 0], p[:, 1])
    phi = psi_truncated_radial(pabs, params, eps) if eps > 0 else psi_radial(pabs, params)
    diag = phi + b @ om + eren
    h = np.diag(diag)
    amp = v * np.sqrt(w)
    tot = b.sum(axis=1)
    for i in np.nonzero(tot < trunc.n_max)[0]:
        row = b[i].copy()
        for j in range(trunc.n_modes):
            row[j] += 1
            m = trunc.index(row)
            row[j] -= 1
            h[i, m] = h[m, i] = amp[j] * math.sqrt(row[j] + 1)
    return FiberMatrix(h, tuple(xi), lam, trunc, eren, {"eren_mode": eren_mode, "eps": eps})


def evolve(fm: FiberMatrix, t: float, vector) -> np.ndarray:
    """``exp(-t H) vector`` by the symmetric eigendecomposition."""
    if t < 0:
        raise ValueError("t must be >= 0")
    vals, vecs = fm.eig
    vector = np.asarray(vector)
    return vecs @ (np.exp(-t * (vals - vals[0])) * (vecs.T @ vector)) * math.exp(-t * vals[0])


def expectation(fm: FiberMatrix, t: float, w, v) -> complex:
    """``<w| exp(-t H) |v>``."""
    return complex(np.vdot(w, evolve(fm, t, v)))


def semigroup_matrix(fm: FiberMatrix, t: float) -> np.ndarray:
    vals, vecs = fm.eig
    return (vecs * np.exp(-t * vals)) @ vecs.T


def semigroup_residual(fm: FiberMatrix, t: float, s: float) -> float:
    """``||T_t - T_s T_{t-s}||`` (spectral norm) in the truncated space."""
    a = semigroup_matrix(fm, t)
    b = semigroup_matrix(fm, s) @ semigroup_matrix(fm, t - s)
    return float(np.linalg.norm(a - b, 2))


def generator_check(xi, lam, trunc: TruncatedFock, params: ModelParams, hs=(1e-2, 1e-3, 1e-4),
                    probes=None, eren_mode: str = "modesum") -> dict:
    """Residuals ``max_probe ||(v - exp(-hH) v)/h - H v||`` and their log-log slope in ``h``."""
    fm = build_fiber(xi, lam, trunc, params, eren_mode)
    if probes is None:
        rng = np.random.default_rng(0)
        probes = [trunc.coherent_vector(None), fm.eig[1][:, 0], rng.standard_normal(trunc.dim)]
    probes = [np.asarray(p, dtype=float if np.isrealobj(p) else complex) for p in probes]
    res = []
    for h in hs:
        worst = 0.0
        for p in probes:
            p = p / np.linalg.norm(p)
            r = (p - evolve(fm, h, p)) / h - fm.matrix @ p
            worst = max(worst, float(np.linalg.norm(r)))
        res.append(worst)
    slope = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
    return {"h": list(hs), "residual": res, "order": slope}


def mode_symmetries(trunc: TruncatedFock) -> np.ndarray:
    """Mode permutations of the dihedral group of the angular rings, shape ``(2A, M)``.

    Modes come in rings of ``A`` angles ``2 pi (a + 1/2)/A``; rotations
    ``a -> a + r`` and reflections ``a -> A - 1 - a + r`` act on every ring
    at once and preserve ``|k|``, ``w``, ``v`` and ``|sum_j n_j k_j|``.
    """
    nang = trunc.grid.angular
    m = trunc.n_modes
    ring, a = np.divmod(np.arange(m), nang)
    perms = []
    for r in range(nang):
        perms.append(ring * nang + (a + r) % nang)
        perms.append(ring * nang + (nang - 1 - a + r) % nang)
    return np.array(perms, dtype=np.int64)


@dataclass(frozen=True)
class SymmetricSector:
    """Orbits of the occupation basis under :func:`mode_symmetries`.

    The symmetric state of orbit ``O`` is ``|O|^{-1/2} sum_{n in O} |n>``.
    """

    basis: np.ndarray
    orbit: np.ndarray  # orbit id of every basis state
    reps: np.ndarray  # basis index of each orbit's representative
    sizes: np.ndarray
    keys: np.ndarray  # sorted occupation keys (raw bytes)
    order: np.ndarray  # basis index of each sorted key

    @property
    def dim(self) -> int:
        return len(self.reps)

    def lookup(self, occ: np.ndarray) -> np.ndarray:
        return self.order[np.searchsorted(self.keys, _occ_keys(occ))]


def _occ_keys(occ: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(occ, dtype=np.int8)
    return a.view(np.dtype((np.void, a.shape[1]))).ravel()


def symmetric_sector(trunc: TruncatedFock, max_full: int = 2_000_000) -> SymmetricSector:
    if trunc.dim > max_full:
        raise DimensionError(f"full basis dimension {trunc.dim} exceeds {max_full}")
    if trunc.n_max > 127:
        raise DimensionError("n_max too large for byte keys")
    b = enumerate_basis(trunc.n_modes, trunc.n_max)
    key = _occ_keys(b)
    order = np.argsort(key, kind="stable")
    keys = key[order]
    best = np.arange(len(b))
    for perm in mode_symmetries(trunc):
        img = b[:, np.argsort(perm)]  # occupation after moving mode j to perm[j]
        best = np.minimum(best, order[np.searchsorted(keys, _occ_keys(img))])
    reps, orbit, sizes = np.unique(best, return_inverse=True, return_counts=True)
    if len(reps) > MAX_DIM:
        raise DimensionError(f"symmetric sector dimension {len(reps)} exceeds the cap {MAX_DIM}")
    return SymmetricSector(b, orbit, reps, sizes, keys, order)


def symmetric_fiber(lam, trunc: TruncatedFock, params: ModelParams, eren_mode: str = "modesum",
                    eps: float = 0.0) -> FiberMatrix:
    """``H_lam(0)`` restricted to the dihedrally symmetric sector.

    In the gauge ``(-1)^N`` the off-diagonal part is non-positive, so the
    ground state is unique with positive amplitudes and hence invariant
    under every mode symmetry: the sector carries the ground energy.
    Matrix elements are ``<O1|H|O2> = sqrt(|O1|/|O2|) sum_{n in O2} H[rep(O1), n]``.
    """
    lam = parse_cutoff(lam)
    if lam is INF or lam != trunc.lam:
        raise ValueError("symmetric_fiber needs the finite truncation cutoff")
    k, w, om, v, beta = mode_data(trunc, params, eps)
    if eren_mode == "modesum":
        eren = math.fsum(w * v * beta)
    elif eren_mode == "continuum" and eps == 0:
        eren = e_ren(lam, params)
    else:
        raise ValueError("eren_mode must be 'modesum' or 'continuum' (exact symbol)")
    sec = symmetric_sector(trunc)
    rb = sec.basis[sec.reps]
    p = rb @ k
    pabs = np.hypot(p[:, 0], p[:, 1])
    phi = psi_truncated_radial(pabs, params, eps) if eps > 0 else psi_radial(pabs, params)
    n = sec.dim
    s = np.zeros((n, n))
    s[np.arange(n), np.arange(n)] = phi + rb @ om + eren
    amp = v * np.sqrt(w)
    tot = rb.sum(axis=1)
    rows = np.arange(n)
    for j in range(trunc.n_modes):
        up = tot < trunc.n_max
        occ = rb[up].copy()
        occ[:, j] += 1
        np.add.at(s, (rows[up], sec.orbit[sec.lookup(occ)]), amp[j] * np.sqrt(occ[:, j]))
        dn = rb[:, j] > 0
        occ = rb[dn].copy()
        occ[:, j] -= 1
        np.add.at(s, (rows[dn], sec.orbit[sec.lookup(occ)]), amp[j] * np.sqrt(rb[dn, j]))
    root = np.sqrt(sec.sizes.astype(float))
    h = s * root[:, None] / root[None, :]
    h = 0.5 * (h + h.T)
    return FiberMatrix(h, (0.0, 0.0), lam, trunc, eren,
                       {"eren_mode": eren_mode, "eps": eps, "sector": "symmetric", "full_dim": trunc.dim})


def ground_energy(xi, lam, trunc: TruncatedFock, params: ModelParams, eren_mode: str = "modesum",
                  eps: float = 0.0, symmetric: bool = False) -> float:
    """Lowest eigenvalue of ``H_lam(xi)``; ``symmetric`` (``xi = 0`` only) diagonalizes the symmetric sector."""
    if symmetric:
        if np.any(np.asarray(xi, dtype=float)):
            raise ValueError("the symmetric sector reduction needs xi = 0")
        fm = symmetric_fiber(lam, trunc, params, eren_mode, eps)
    else:
        fm = build_fiber(xi, lam, trunc, params, eren_mode, eps)
    return float(linalg.eigh(fm.matrix, eigvals_only=True, subset_by_index=[0, 0])[0])


def renormalization_scan(xi, lambdas, params: ModelParams, rule=trunc_rule, eren_mode: str = "modesum",
                         symmetric: bool = False) -> list[dict]:
    """Ground energies across cutoffs.

    Each row carries the truncation error estimate ``|E(n_max) - E(n_max - 1)|``
    and ``pt_residual = E0_unren + sum_j w_j v_j^2/(omega_j + psi(k_j))``,
    which is ``O(g^4)``.
    """
    rows = []
    for lam in lambdas:
        tr = rule(lam)
        e0 = ground_energy(xi, lam, tr, params, eren_mode, symmetric=symmetric)
        e_low = (ground_energy(xi, lam, tr.with_n_max(tr.n_max - 1), params, eren_mode, symmetric=symmetric)
                 if tr.n_max > 0 else e0)
        k, w, om, v, beta = mode_data(tr, params)
        modesum = math.fsum(w * v * beta)
        eren = modesum if eren_mode == "modesum" else e_ren(lam, params)
        unren = e0 - eren
        xi_arr = np.asarray(xi, dtype=float)
        rows.append({
            "lambda": float(lam), "xi_x": float(xi_arr[0]), "xi_y": float(xi_arr[1]),
            "M": tr.n_modes, "n_max": tr.n_max, "E0": e0, "E0_unren": unren,
            "pt_residual": unren + modesum, "trunc_err": abs(e0 - e_low),
        })
    return rows


@dataclass
class Comparison:
    """Outcome of :func:`mc_vs_oracle`."""

    oracle: complex
    oracle_truncated_symbol: complex
    mc: "object"
    discrepancy: float
    trunc_budget: float
    eps_budget: float
    passed: bool

    @property
    def budget(self) -> float:
        return 3 * self.mc.std_err + self.trunc_budget + self.eps_budget

    def as_dict(self) -> dict:
        return {
            "oracle_re": self.oracle.real, "oracle_im": self.oracle.imag,
            "oracle_truncated_symbol_re": self.oracle_truncated_symbol.real,
            "oracle_truncated_symbol_im": self.oracle_truncated_symbol.imag,
            "mc": self.mc.as_dict(), "discrepancy": self.discrepancy,
            "std_err": self.mc.std_err, "trunc_budget": self.trunc_budget,
            "eps_budget": self.eps_budget, "budget": self.budget, "passed": self.passed,
        }


def oracle_element(xi, t, trunc: TruncatedFock, params: ModelParams, f=None, g=None,
                   eren_mode: str = "modesum", eps: float = 0.0) -> complex:
    """``<eps(g)| exp(-t H(xi)) eps(f)>`` with the coherent vectors cut at ``n_max``."""
    fm = build_fiber(xi, trunc.lam, trunc, params, eren_mode, eps)
    return expectation(fm, t, trunc.coherent_vector(g), trunc.coherent_vector(f))


def mc_vs_oracle(xi, t, lam, trunc: TruncatedFock, params: ModelParams, f=None, g=None,
                 n_paths: int = 100_000, seed: int = 0, eps: float = 0.01, workers: int | None = None):
    """Compare the Monte Carlo fiber element with the oracle on the same modes.

    The reference is the oracle with the exact particle dispersion.  The
    budget adds ``3 SE``, the boson-number truncation estimate
    ``|O(n_max) - O(n_max - 1)|`` and the small-jump bias
    ``|O(psi) - O(psi_eps)|``.  ``f``, ``g`` are labels on ``trunc.grid`` or
    ``None`` (vacuum).
    """
    from .mc import fiber_semigroup

    p = params.with_(lam=parse_cutoff(lam))
    ref = oracle_element(xi, t, trunc, p, f, g)
    sim = oracle_element(xi, t, trunc, p, f, g, eps=eps)
    low = oracle_element(xi, t, trunc.with_n_max(max(trunc.n_max - 1, 0)), p, f, g, eps=eps)
    est = fiber_semigroup(xi, t, p, f, g, n_paths=n_paths, seed=seed, grid=trunc.grid, eps=eps, workers=workers)
    disc = abs(est.mean - ref)
    trunc_b = abs(sim - low)
    eps_b = abs(ref - sim)
    ok = disc <= 3 * est.std_err + trunc_b + eps_b
    return Comparison(ref, sim, est, disc, trunc_b, eps_b, bool(ok))
