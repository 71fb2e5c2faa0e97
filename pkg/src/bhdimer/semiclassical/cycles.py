"""Orbit integration and periodic-orbit extraction for the mean-field ODE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ScaledParams, jacobian, rhs, swap


class NotPeriodicError(RuntimeError):
    pass


def _rk4(u, q, h):
    k1 = rhs(u, q)
    k2 = rhs(u + 0.5 * h * k1, q)
    k3 = rhs(u + 0.5 * h * k2, q)
    k4 = rhs(u + h * k3, q)
    return u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_orbit(u0, q: ScaledParams, T: float, dt: float, stride: int = 1):
    """RK4 from ``u0`` over ``[0, T]``; returns ``(t, states)`` sampled every ``stride`` steps.

    The last step is shortened to land on ``T``.  Non-finite states raise.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = max(1, math.ceil(T / dt - 1e-9))
    h = T / n
    u = np.array(u0, dtype=float)
    ts, us = [0.0], [u.copy()]
    for k in range(1, n + 1):
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            u = _rk4(u, q, h)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"orbit left finite range at t={k * h:.6g}")
        if k % stride == 0 or k == n:
            ts.append(k * h)
            us.append(u.copy())
    return np.array(ts), np.array(us)


def _flow_with_variational(u0, q, T, n):
    """State and monodromy ``d phi_T / d u0`` by RK4 on the augmented system."""
    h = T / n
    u = np.array(u0, dtype=float)
    M = np.eye(4)
    for _ in range(n):
        k1, K1 = rhs(u, q), jacobian(u, q) @ M
        u2, M2 = u + 0.5 * h * k1, M + 0.5 * h * K1
        k2, K2 = rhs(u2, q), jacobian(u2, q) @ M2
        u3, M3 = u + 0.5 * h * k2, M + 0.5 * h * K2
        k3, K3 = rhs(u3, q), jacobian(u3, q) @ M3
        u4, M4 = u + h * k3, M + h * K3
        k4, K4 = rhs(u4, q), jacobian(u4, q) @ M4
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        M = M + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
    return u, M


def _flow(u0, q, T, n):
    h = T / n
    u = np.array(u0, dtype=float)
    for _ in range(n):
        u = _rk4(u, q, h)
    return u


@dataclass(frozen=True)
class LimitCycle:
    f: float
    period: float
    frequency: float
    max_int_A: float
    max_int_B: float
    t: np.ndarray
    orbit: np.ndarray
    residual: float
    floquet: np.ndarray

    @property
    def amplitude(self) -> float:
        """Peak-to-peak spread of the orbit in state space."""
        return float(np.max(np.ptp(self.orbit, axis=0)))

    def swapped(self) -> LimitCycle:
        orb = self.orbit[:, [2, 3, 0, 1]]
        return LimitCycle(self.f, self.period, self.frequency, self.max_int_B, self.max_int_A,
                          self.t, orb, self.residual, self.floquet)


def poincare_section(states: np.ndarray):
    """Hyperplane through the orbit mean with normal along its dominant oscillation direction."""
    c = states.mean(axis=0)
    _, _, vt = np.linalg.svd(states - c, full_matrices=False)
    return c, vt[0]


def _crossing_times(t, states, c, n):
    s = (states - c) @ n
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    return np.array([t[i] + (t[i + 1] - t[i]) * (-s[i]) / (s[i + 1] - s[i]) for i in idx]), idx


def find_limit_cycle(
    q: ScaledParams,
    seed,
    *,
    transient: float = 200.0,
    dt: float = 0.01,
    record: float = 50.0,
    shoot_dt: float = 2e-3,
    tol: float = 1e-8,
    max_newton: int = 30,
    min_amplitude: float = 1e-4,
) -> LimitCycle:
    """Attracting periodic orbit reached from ``seed``.

    After the transient the period is estimated from successive upward
    crossings of a Poincare section, then refined by Newton shooting on
    ``(x0, T)`` with the variational equations until the return residual is
    below ``tol``.
    """
    _, us = integrate_orbit(seed, q, transient, dt)
    u = us[-1]
    t, us = integrate_orbit(u, q, record, dt)
    c, nrm = poincare_section(us)
    times, idx = _crossing_times(t, us, c, nrm)
    if times.size < 3:
        raise NotPeriodicError(f"fewer than three section returns at f={q.f}")
    periods = np.diff(times)
    if np.ptp(periods) > 0.05 * periods.mean():
        raise NotPeriodicError(f"section returns are irregular at f={q.f}: {periods}")
    T = float(periods[-1])
    i = idx[-2]
    x = us[i] + (us[i + 1] - us[i]) * ((times[-2] - t[i]) / (t[i + 1] - t[i]))

    residual = math.inf
    # a fixed step count keeps the discrete flow smooth in T
    n = max(50, math.ceil(T / shoot_dt))
    for _ in range(max_newton):
        xT, M = _flow_with_variational(x, q, T, n)
        r = xT - x
        residual = float(np.linalg.norm(r))
        if residual < tol:
            break
        K = np.zeros((5, 5))
        K[:4, :4] = M - np.eye(4)
        K[:4, 4] = rhs(xT, q)
        K[4, :4] = nrm
        step = np.linalg.solve(K, -np.append(r, nrm @ (x - c)))
        x = x + step[:4]
        T = T + step[4]
        if not (T > 0 and np.all(np.isfinite(x))):
            raise NotPeriodicError(f"shooting diverged at f={q.f}")
    if residual >= tol:
        raise NotPeriodicError(f"shooting residual {residual:.3g} above {tol} at f={q.f}")

    _, M = _flow_with_variational(x, q, T, n)
    h = T / n
    orbit = [x.copy()]
    u = x.copy()
    for _ in range(n):
        u = _rk4(u, q, h)
        orbit.append(u.copy())
    orbit = np.array(orbit)
    if np.max(np.ptp(orbit, axis=0)) < min_amplitude:
        raise NotPeriodicError(f"orbit collapsed onto an equilibrium at f={q.f}")
    ia = orbit[:, 0] ** 2 + orbit[:, 1] ** 2
    ib = orbit[:, 2] ** 2 + orbit[:, 3] ** 2
    mult = np.linalg.eigvals(M)
    return LimitCycle(
        f=q.f, period=T, frequency=1.0 / T,
        max_int_A=float(ia.max()), max_int_B=float(ib.max()),
        t=np.linspace(0.0, T, n + 1), orbit=orbit, residual=residual,
        floquet=mult[np.argsort(-np.abs(mult))],
    )


def seed_near(u_eq, q: ScaledParams, amplitude: float = 1e-2) -> np.ndarray:
    """Perturb an unstable focus along the real part of its leading eigenvector."""
    w, v = np.linalg.eig(jacobian(u_eq, q))
    k = int(np.argmax(w.real))
    d = v[:, k].real
    return np.asarray(u_eq, dtype=float) + amplitude * d / np.linalg.norm(d)


def swap_orbit(orbit: np.ndarray) -> np.ndarray:
    return np.array([swap(u) for u in orbit])
