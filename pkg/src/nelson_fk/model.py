"""Closed-form model data: dispersions, coupling, renormalization energy, Levy measure.

All functions accept scalar or array momenta.  Momentum arguments are either
2-vectors (last axis of length 2) or, for the ``*_radial`` variants, moduli.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, special


class Infinity(enum.Enum):
    """Marker for the removed ultraviolet cutoff."""

    INF = "inf"

    def __repr__(self) -> str:
        return "INF"

    def __str__(self) -> str:
        return "inf"


INF = Infinity.INF


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature misses its declared tolerance."""


def parse_cutoff(value) -> float | Infinity:
    if value is INF:
        return INF
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        value = float(value)
    if isinstance(value, float) and math.isinf(value):
        # an IEEE infinity is accepted on input but never stored
        return INF
    value = float(value)
    if not value >= 0:
        raise ValueError(f"cutoff must be >= 0 or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model and the ultraviolet cutoff.

    Parameters
    ----------
    m_p : float
        Particle mass, ``>= 0``.
    m_b : float
        Boson mass, ``> 0``.
    g : float
        Coupling constant. Zero is only accepted with ``free_field=True``.
    lam : float or INF
        Ultraviolet cutoff.  ``INF`` removes it.
    free_field : bool
        Diagnostic mode allowing ``g == 0``.
    """

    m_p: float = 1.0
    m_b: float = 1.0
    g: float = 1.0
    lam: float | Infinity = INF
    free_field: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lam", parse_cutoff(self.lam))
        if not self.m_p >= 0:
            raise ValueError(f"m_p must be >= 0, got {self.m_p}")
        if not self.m_b > 0:
            raise ValueError(f"m_b must be > 0, got {self.m_b}")
        if self.g == 0 and not self.free_field:
            raise ValueError("g == 0 requires free_field=True")

    @property
    def finite_cutoff(self) -> bool:
        return self.lam is not INF

    def with_(self, **changes) -> "ModelParams":
        if changes.get("g", self.g) == 0:
            changes.setdefault("free_field", True)
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "m_p": self.m_p,
            "m_b": self.m_b,
            "g": self.g,
            "lambda": str(self.lam) if self.lam is INF else self.lam,
        }


def _modulus(k) -> np.ndarray | float:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return abs(float(k))
    if k.shape[-1] != 2:
        raise ValueError(f"momentum must have a trailing axis of length 2, got {k.shape}")
    return np.hypot(k[..., 0], k[..., 1])


def psi_radial(p, params: ModelParams):
    p = np.asarray(p, dtype=float)
    m = params.m_p
    # sqrt(p^2+m^2)-m without cancellation
    return p * p / (np.sqrt(p * p + m * m) + m) if m > 0 else np.abs(p)


def psi(xi, params: ModelParams):
    """Particle dispersion ``(|xi|^2 + m_p^2)^(1/2) - m_p``."""
    return psi_radial(_modulus(xi), params)


def omega_radial(k, params: ModelParams):
    k = np.asarray(k, dtype=float)
    return np.sqrt(k * k + params.m_b**2)


def omega(k, params: ModelParams):
    """Boson dispersion ``(|k|^2 + m_b^2)^(1/2)``."""
    return omega_radial(_modulus(k), params)


def coupling_v_radial(k, params: ModelParams):
    return params.g / np.sqrt(omega_radial(k, params))


def coupling_v(k, params: ModelParams):
    """Coupling function ``g * omega^(-1/2)`` (no cutoff applied)."""
    return coupling_v_radial(_modulus(k), params)


def beta_radial(k, params: ModelParams):
    return coupling_v_radial(k, params) / (omega_radial(k, params) + psi_radial(k, params))


def beta(k, params: ModelParams):
    """``v / (omega + psi)``."""
    return beta_radial(_modulus(k), params)


def e_ren(lam, params: ModelParams, epsrel: float = 1e-10) -> float:
    """Renormalization energy: integral of ``v^2/(omega+psi)`` over the open ball of radius ``lam``."""
    lam = parse_cutoff(lam)
    if lam is INF:
        raise ValueError("the renormalization energy diverges at an infinite cutoff")
    if lam == 0:
        return 0.0

    def integrand(r):
        return 2.0 * math.pi * r * float(coupling_v_radial(r, params)) ** 2 / float(
            omega_radial(r, params) + psi_radial(r, params)
        )

    val, err = integrate.quad(integrand, 0.0, lam, epsabs=0.0, epsrel=epsrel, limit=200)
    if err > max(epsrel * abs(val), 1e-300) * 10:
        raise QuadratureError(f"e_ren: error estimate {err:g} for value {val:g}")
    return val


def e_ren_closed_form(lam: float, m: float, g: float) -> float:
    """``pi g^2 ln((2 sqrt(lam^2+m^2) - m)/m)``, valid when ``m_p == m_b == m``."""
    return math.pi * g * g * math.log((2.0 * math.sqrt(lam * lam + m * m) - m) / m)


# --- Levy measure -----------------------------------------------------------


def levy_density_radial(r, params: ModelParams):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("the Levy density is singular at z = 0")
    m = params.m_p
    return (1.0 + m * r) * np.exp(-m * r) / (2.0 * math.pi * r**3)


def levy_density(z, params: ModelParams):
    """Density of the Levy measure of the process with symbol ``-psi``.

    Obtained by subordinating a Brownian motion with generator ``Laplacian``
    to the tempered 1/2-stable subordinator with Laplace exponent
    ``sqrt(lam + m_p^2) - m_p``.
    """
    return levy_density_radial(_modulus(z), params)


def levy_density_subordination(r: float, params: ModelParams) -> float:
    """Same density evaluated directly from the subordination integral (oracle)."""
    m = params.m_p

    def f(s):
        return (
            math.exp(-r * r / (4 * s) - m * m * s)
            / (4 * math.pi * s)
            / (2 * math.sqrt(math.pi))
            * s**-1.5
        )

    return integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]


def radial_jump_density(r, m_p: float):
    """``2 pi r nu(r)``: density of the jump modulus w.r.t. ``dr``."""
    r = np.asarray(r, dtype=float)
    return (1.0 + m_p * r) * np.exp(-m_p * r) / (r * r)


def jump_rate(eps: float, params: ModelParams) -> float:
    """Mass of the Levy measure outside the ball of radius ``eps``: ``exp(-m_p eps)/eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return math.exp(-params.m_p * eps) / eps


def jump_rate_quadrature(eps: float, params: ModelParams) -> float:
    val, err = integrate.quad(
        lambda r: float(radial_jump_density(r, params.m_p)), eps, np.inf, epsabs=0, epsrel=1e-11, limit=200
    )
    if err > 1e-8 * val:
        raise QuadratureError(f"jump rate quadrature did not converge (err={err:g})")
    return val


def small_jump_second_moment(eps: float, params: ModelParams) -> float:
    """``int_{|z|<eps} |z|^2 nu(dz)``, by quadrature."""
    if eps <= 0:
        return 0.0
    m = params.m_p
    val, err = integrate.quad(lambda r: (1 + m * r) * math.exp(-m * r), 0, eps, epsabs=0, epsrel=1e-12)
    return val


def _one_minus_j0(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small] ** 2
    out[small] = xs / 4 * (1 - xs / 16 * (1 - xs / 36 * (1 - xs / 64)))
    out[~small] = 1.0 - special.j0(x[~small])
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def small_jump_symbol(p, m_p: float, eps: float):
    """``int_{|z|<eps} (1 - cos(p.z)) nu(dz)`` for moduli ``p``.

    This is the part of ``psi`` carried by the jumps that a truncated path
    simulation discards.  Composite 32-point Gauss-Legendre on ``[0, eps]``;
    the integrand is entire in ``r``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if eps <= 0:
        return np.zeros_like(p)
    pmax = float(np.max(p)) if p.size else 0.0
    n_panels = max(1, int(math.ceil(pmax * eps / 2.0)))
    edges = np.linspace(0.0, eps, n_panels + 1)
    total = np.zeros_like(p)
    for a, b in zip(edges[:-1], edges[1:]):
        r = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
        wr = 0.5 * (b - a) * _GL_W
        kern = (1 + m_p * r) * np.exp(-m_p * r)  # r^2 * radial_jump_density
        x = np.outer(p, r)
        total += (_one_minus_j0(x) / (r * r)) @ (kern * wr)
    return total


def psi_truncated_radial(p, params: ModelParams, eps: float):
    """Symbol of the compound Poisson process keeping only jumps with ``|z| >= eps``."""
    p = np.asarray(p, dtype=float)
    return psi_radial(p, params) - small_jump_symbol(p, params.m_p, eps).reshape(p.shape)


@lru_cache(maxsize=64)
def _bessel_zeros(n: int) -> np.ndarray:
    return special.jn_zeros(0, n)


def symbol_from_levy(xi, params: ModelParams, r_inner: float | None = None,
                     n_zeros: int = 400, tol: float = 1e-7) -> float:
    """Levy-Khintchine reconstruction ``int (1 - cos(xi.z)) nu(dz)``.

    The radial integral is split at the zeros of ``J0(|xi| r)``: the
    non-oscillatory ``1`` part has the closed tail ``exp(-m r)/r`` and the
    Bessel part is summed interval by interval.  The truncation radius is
    ``j_{0,n_zeros}/|xi|``; the alternating tail is closed by averaging the
    last two partial sums and the size of the last interval bounds the
    remaining error.
    """
    p = float(_modulus(xi))
    if p == 0.0:
        return 0.0
    m = params.m_p
    zeros = _bessel_zeros(n_zeros)
    r0 = zeros[0] / p if r_inner is None else r_inner

    def full(r):
        return float(radial_jump_density(r, m) * _one_minus_j0(np.array([p * r]))[0])

    def bessel_part(r):
        return float(radial_jump_density(r, m) * special.j0(p * r))

    head, err = integrate.quad(full, 0.0, r0, epsabs=1e-14, epsrel=1e-12, limit=200)
    total = head + math.exp(-m * r0) / r0
    errsum = err
    edges = np.concatenate([[r0], zeros[zeros * 1.0 / p > r0] / p])
    partial = 0.0
    prev = 0.0
    last = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        piece, e = integrate.quad(bessel_part, a, b, epsabs=1e-15, epsrel=1e-12, limit=100)
        prev = partial
        partial += piece
        last = piece
        errsum += e
    tail = 0.5 * (partial + prev)
    remaining = abs(last) / 2
    if remaining + errsum > tol * (1 + total):
        raise QuadratureError(
            f"symbol_from_levy: error budget {remaining + errsum:g} exceeds tol at |xi|={p}"
        )
    return total - tail
