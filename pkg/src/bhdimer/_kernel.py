"""Compiled no-jump propagation on the two-mode grid.

The state is held as a zero-padded ``(M1 + 2, M2 + 2)`` complex array whose
interior ``[1:-1, 1:-1]`` holds the amplitudes ``psi[n1, n2]``; the padding
absorbs the ladder operators' out-of-range neighbours so the inner loop is
branch-free.  Floating-point operations are ordered so that, for equal
cutoffs, transposing the state transposes every result bit for bit; fastmath
is deliberately off because contraction and reassociation break that.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_REACHED = 0
STATUS_JUMP = 1
STATUS_UNSTABLE = 2

# tolerated per-step growth of the squared norm before declaring the step unstable
NORM_GROWTH_TOL = 1e-9


@njit(cache=True, nogil=True)
def apply_h(dg, hop, F, s1, s2, xp, out):
    """``out = H_eff x`` for the padded state ``xp``; ``out`` has interior shape."""
    m1, m2 = out.shape
    Fc = F.conjugate()
    for a in range(m1):
        sa = s1[a]
        sa1 = s1[a + 1]
        for b in range(m2):
            sb = s2[b]
            sb1 = s2[b + 1]
            i = a + 1
            j = b + 1
            v = dg[a, b] * xp[i, j]
            v += hop * ((sa * sb1) * xp[i - 1, j + 1] + (sa1 * sb) * xp[i + 1, j - 1])
            v += F * (sa1 * xp[i + 1, j] + sb1 * xp[i, j + 1])
            v += Fc * (sa * xp[i - 1, j] + sb * xp[i, j - 1])
            out[a, b] = v


@njit(cache=True, nogil=True)
def sym_norm2(xp):
    """Squared norm summed in an order that is invariant under transposition."""
    m1 = xp.shape[0] - 2
    m2 = xp.shape[1] - 2
    r = 0.0
    c = 0.0
    for a in range(m1):
        for b in range(m2):
            v = xp[a + 1, b + 1]
            r += v.real * v.real + v.imag * v.imag
    for b in range(m2):
        for a in range(m1):
            v = xp[a + 1, b + 1]
            c += v.real * v.real + v.imag * v.imag
    return 0.5 * (r + c)


@njit(cache=True, nogil=True)
def rk4_step(dg, hop, F0, rate, s1, s2, xp, t, h, out, k1, k2, k3, k4, tp):
    """One classical RK4 step of ``dpsi/dt = -i H(t) psi`` from ``xp`` into ``out`` (padded)."""
    m1, m2 = k1.shape
    mi = -1j
    apply_h(dg, hop, F0 + rate * t, s1, s2, xp, k1)
    for a in range(m1):
        for b in range(m2):
            tp[a + 1, b + 1] = xp[a + 1, b + 1] + (0.5 * h) * (mi * k1[a, b])
    apply_h(dg, hop, F0 + rate * (t + 0.5 * h), s1, s2, tp, k2)
    for a in range(m1):
        for b in range(m2):
            tp[a + 1, b + 1] = xp[a + 1, b + 1] + (0.5 * h) * (mi * k2[a, b])
    apply_h(dg, hop, F0 + rate * (t + 0.5 * h), s1, s2, tp, k3)
    for a in range(m1):
        for b in range(m2):
            tp[a + 1, b + 1] = xp[a + 1, b + 1] + h * (mi * k3[a, b])
    apply_h(dg, hop, F0 + rate * (t + h), s1, s2, tp, k4)
    for a in range(m1):
        for b in range(m2):
            incr = (k1[a, b] + 2.0 * k2[a, b]) + (2.0 * k3[a, b] + k4[a, b])
            out[a + 1, b + 1] = xp[a + 1, b + 1] + (h / 6.0) * (mi * incr)


@njit(cache=True, nogil=True)
def advance(xp, t, t_stop, dt, r, dg, hop, F0, rate, s1, s2, tol):
    """Step from ``t`` towards ``t_stop`` until done or the squared norm falls to ``r``.

    Returns ``(t_new, status)``; ``xp`` is overwritten with the state at
    ``t_new``.  With ``STATUS_JUMP`` the crossing time is located by a
    bracketing (Illinois) root search on the squared norm, to ``tol`` in time.
    """
    m1 = xp.shape[0] - 2
    m2 = xp.shape[1] - 2
    k1 = np.empty((m1, m2), np.complex128)
    k2 = np.empty_like(k1)
    k3 = np.empty_like(k1)
    k4 = np.empty_like(k1)
    tp = np.zeros_like(xp)
    trial = np.zeros_like(xp)
    nrm = sym_norm2(xp)
    while t < t_stop:
        h = dt
        last = False
        if t + h >= t_stop - 1e-12 * dt:
            h = t_stop - t
            last = True
        rk4_step(dg, hop, F0, rate, s1, s2, xp, t, h, trial, k1, k2, k3, k4, tp)
        n_new = sym_norm2(trial)
        if not np.isfinite(n_new) or n_new > nrm * (1.0 + NORM_GROWTH_TOL) + 1e-300:
            return t, STATUS_UNSTABLE
        if n_new <= r:
            tau = locate_crossing(xp, t, h, nrm, n_new, r, dg, hop, F0, rate, s1, s2, tol,
                                  trial, k1, k2, k3, k4, tp)
            xp[:, :] = trial
            return t + tau, STATUS_JUMP
        xp[:, :] = trial
        nrm = n_new
        t = t_stop if last else t + h
    return t, STATUS_REACHED


@njit(cache=True, nogil=True)
def locate_crossing(xp, t, h, g_lo, g_hi, r, dg, hop, F0, rate, s1, s2, tol,
                    trial, k1, k2, k3, k4, tp):
    """Sub-step ``tau`` in ``(0, h]`` with ``|psi(t + tau)|^2 = r``; ``trial`` receives that state."""
    lo = 0.0
    hi = h
    f_lo = g_lo - r
    f_hi = g_hi - r
    side = 0
    tau = hi
    for _ in range(200):
        if hi - lo <= tol:
            break
        tau = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not (lo < tau < hi):
            tau = 0.5 * (lo + hi)
        # keep the bracket shrinking by at least a tolerance-sized bite
        tau = min(max(tau, lo + 0.25 * tol), hi - 0.25 * tol)
        rk4_step(dg, hop, F0, rate, s1, s2, xp, t, tau, trial, k1, k2, k3, k4, tp)
        f = sym_norm2(trial) - r
        if f == 0.0:
            return tau
        if f > 0.0:
            lo = tau
            f_lo = f
            if side == 1:
                f_hi *= 0.5
            side = 1
        else:
            hi = tau
            f_hi = f
            if side == -1:
                f_lo *= 0.5
            side = -1
    tau = hi
    rk4_step(dg, hop, F0, rate, s1, s2, xp, t, tau, trial, k1, k2, k3, k4, tp)
    return tau


@njit(cache=True, nogil=True)
def marginals(xp):
    """Row and column photon-number distributions of the (unnormalised) padded state."""
    m1 = xp.shape[0] - 2
    m2 = xp.shape[1] - 2
    p1 = np.zeros(m1)
    p2 = np.zeros(m2)
    for a in range(m1):
        acc = 0.0
        for b in range(m2):
            v = xp[a + 1, b + 1]
            acc += v.real * v.real + v.imag * v.imag
        p1[a] = acc
    for b in range(m2):
        acc = 0.0
        for a in range(m1):
            v = xp[a + 1, b + 1]
            acc += v.real * v.real + v.imag * v.imag
        p2[b] = acc
    return p1, p2


@njit(cache=True, nogil=True)
def cross_moment(xp):
    """Unnormalised ``<n1 n2>``, symmetrised over the two summation orders."""
    m1 = xp.shape[0] - 2
    m2 = xp.shape[1] - 2
    q1 = 0.0
    for a in range(m1):
        acc = 0.0
        for b in range(m2):
            v = xp[a + 1, b + 1]
            acc += b * (v.real * v.real + v.imag * v.imag)
        q1 += a * acc
    q2 = 0.0
    for b in range(m2):
        acc = 0.0
        for a in range(m1):
            v = xp[a + 1, b + 1]
            acc += a * (v.real * v.real + v.imag * v.imag)
        q2 += b * acc
    return 0.5 * (q1 + q2)
