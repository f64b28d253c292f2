"""Compiled per-path scans over constant pieces of a Levy path.

On a piece ``[a, b)`` where ``X = x`` every time integral is elementary:
with ``d = exp(-(b-a) omega)``, ``g1 = (1-d)/omega``, ``g2 = ((b-a)-g1)/omega``,

    U+_b = d U+_a + e_x v g1
    int_a^b <U+_s | e_x h> ds = <U+_a | e_x h g1> + <v | h g2>     (h radial, real)

Node sums are binned by shell so that one scan serves a whole list of
cutoffs (the nodes inside ``B_lam`` are a prefix of the node list).
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # plain Python: correct, but orders of magnitude slower
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True, fastmath=True)
def scan_path(a, b, x, kx, ky, w, om, v, beta, psib, starts, nang, D, C, J, T, Up, Um):
    """Fill cumulative per-shell sums at every piece end.

    Nodes come in rings of ``nang`` angles sharing one radius.

    D[j, s]  int_0^{b_j} <U+|e_X v>           (defining action, without E_ren)
    C[j, s]  int_0^{b_j} <U+|e_X psi beta>    (compensator)
    J[j, s]  sum over jumps in (0, b_j) of <U+|e_{X-}(e_dX - 1) beta>
    T[j, s]  <U+_{b_j} | e_{x_j} beta>        (boundary term, pre-jump position)

    ``Up`` and ``Um`` are overwritten with ``U+`` and ``U-`` at ``b_last``.
    """
    nseg = a.shape[0]
    nsh = starts.shape[0] - 1
    nn = starts[nsh]
    for i in range(nn):
        Up[i] = 0.0
        Um[i] = 0.0
    ea = np.empty(nn)
    for i in range(nn):
        ea[i] = math.exp(-a[0] * om[i]) if a[0] > 0 else 1.0
    for j in range(nseg):
        tau = b[j] - a[j]
        x0 = x[j, 0]
        x1 = x[j, 1]
        for s in range(nsh):
            sSr = 0.0
            sSi = 0.0
            sDr = 0.0
            sDi = 0.0
            sCr = 0.0
            sCi = 0.0
            sTr = 0.0
            sTi = 0.0
            for r0 in range(starts[s], starts[s + 1], nang):
                o = om[r0]
                em = math.expm1(-tau * o)
                d = 1.0 + em
                g1 = -em / o
                y = tau * o
                if y < 1e-3:
                    g2 = tau * tau * (0.5 - y * (1.0 / 6.0 - y * (1.0 / 24.0 - y / 120.0)))
                else:
                    g2 = (tau - g1) / o
                for i in range(r0, r0 + nang):
                    arg = kx[i] * x0 + ky[i] * x1
                    pr = math.cos(arg)
                    pi = -math.sin(arg)
                    ur = Up[i].real
                    ui = Up[i].imag
                    # conj(U) * phase
                    cr = ur * pr + ui * pi
                    ci = ur * pi - ui * pr
                    wi = w[i]
                    vi = v[i]
                    bi = beta[i]
                    hi = psib[i]
                    sSr += wi * bi * cr
                    sSi += wi * bi * ci
                    sDr += wi * (vi * g1 * cr + vi * vi * g2)
                    sDi += wi * vi * g1 * ci
                    sCr += wi * (hi * g1 * cr + vi * hi * g2)
                    sCi += wi * hi * g1 * ci
                    sr = pr * vi * g1
                    si = pi * vi * g1
                    ur = d * ur + sr
                    ui = d * ui + si
                    Up[i] = complex(ur, ui)
                    Um[i] += complex(sr * ea[i], si * ea[i])
                    ea[i] *= d
                    sTr += wi * bi * (ur * pr + ui * pi)
                    sTi += wi * bi * (ur * pi - ui * pr)
            sS = complex(sSr, sSi)
            sD = complex(sDr, sDi)
            sC = complex(sCr, sCi)
            sT = complex(sTr, sTi)
            if j == 0:
                D[j, s] = sD
                C[j, s] = sC
                J[j, s] = 0.0
            else:
                D[j, s] = D[j - 1, s] + sD
                C[j, s] = C[j - 1, s] + sC
                J[j, s] = J[j - 1, s] + (sS - T[j - 1, s])
            T[j, s] = sT


@njit(cache=True, fastmath=True)
def scan_batch(offsets, a, b, x, kx, ky, w, om, v, beta, psib, starts, nang, eren,
               u_ito, u_def, sup_ito, sup_diff, Up_out, Um_out, store_fields):
    """Scan many paths stored back to back.

    Path ``p`` owns pieces ``offsets[p]:offsets[p+1]``.  For each cutoff
    index ``c`` (shells ``0..c``) this records the final Ito-form action,
    the final defining-form action ``D - t E_ren[c]``, and the supremum of
    the Ito-form action over ``{0} u {piece ends}``, and over the same times
    ``sup |exp(u_c) - exp(u_top)|`` against the largest cutoff.  Final
    ``U+``/``U-`` are stored when ``store_fields`` is set.
    """
    npath = offsets.shape[0] - 1
    nsh = starts.shape[0] - 1
    nn = starts[nsh]
    maxseg = 0
    for p in range(npath):
        maxseg = max(maxseg, offsets[p + 1] - offsets[p])
    D = np.empty((maxseg, nsh), dtype=np.complex128)
    C = np.empty((maxseg, nsh), dtype=np.complex128)
    J = np.empty((maxseg, nsh), dtype=np.complex128)
    T = np.empty((maxseg, nsh), dtype=np.complex128)
    Up = np.empty(nn, dtype=np.complex128)
    Um = np.empty(nn, dtype=np.complex128)
    uc = np.empty(nsh)
    for p in range(npath):
        lo = offsets[p]
        hi = offsets[p + 1]
        n = hi - lo
        scan_path(a[lo:hi], b[lo:hi], x[lo:hi], kx, ky, w, om, v, beta, psib, starts, nang,
                  D[:n], C[:n], J[:n], T[:n], Up, Um)
        t = b[hi - 1]
        for c in range(nsh):
            sup_ito[p, c] = 0.0
            sup_diff[p, c] = 0.0
        for j in range(n):
            acc = 0j
            for c in range(nsh):
                acc += J[j, c] + C[j, c] - T[j, c]
                uc[c] = acc.real
                if acc.real > sup_ito[p, c]:
                    sup_ito[p, c] = acc.real
            top = math.exp(uc[nsh - 1])
            for c in range(nsh):
                dd = abs(math.exp(uc[c]) - top)
                if dd > sup_diff[p, c]:
                    sup_diff[p, c] = dd
        acc = 0j
        accd = 0j
        for c in range(nsh):
            acc += J[n - 1, c] + C[n - 1, c] - T[n - 1, c]
            accd += D[n - 1, c]
            u_ito[p, c] = acc
            u_def[p, c] = accd - t * eren[c]
        if store_fields:
            for i in range(nn):
                Up_out[p, i] = Up[i]
                Um_out[p, i] = Um[i]
