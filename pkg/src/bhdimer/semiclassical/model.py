"""Rescaled mean-field model of the dimer.

    dA/dt = -A + i(delta + xi|A|^2) A + i kappa B + f
    dB/dt = -B + i(delta + xi|B|^2) B + i kappa A + f

States are real 4-vectors ``(Re A, Im A, Re B, Im B)``.  Time is the rescaled
time; multiply by ``2/gamma`` to get the physical time of the trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..hilbert import PhysicalParams

# margin on eigenvalue real parts below which a point is called marginal
STABILITY_MARGIN = 1e-8
# |A - B| below this marks a symmetric state
SYMMETRY_TOL = 1e-9

SWAP = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)


@dataclass(frozen=True)
class ScaledParams:
    delta: float = -4.5
    kappa: float = 3.5
    f: float = 0.0
    xi: int = 1

    def __post_init__(self):
        if self.xi not in (1, -1):
            raise ValueError(f"xi must be +1 or -1, got {self.xi!r}")

    def at(self, f: float) -> ScaledParams:
        return replace(self, f=float(f))


STUDY_POINT = ScaledParams(delta=-4.5, kappa=3.5, f=0.0, xi=1)


def scaled_params(p: PhysicalParams) -> ScaledParams:
    """Map physical to dimensionless parameters; ``F`` must be real (its phase is a gauge)."""
    if p.U == 0:
        raise ValueError("U = 0 makes the rescaling degenerate")
    F = complex(p.F)
    if F.imag != 0:
        raise ValueError("scaled_params expects a real drive amplitude")
    return ScaledParams(
        delta=-2.0 * p.Delta / p.gamma,
        kappa=-2.0 * p.J / p.gamma,
        f=4.0 * F.real * math.sqrt(abs(p.U)) / p.gamma**1.5,
        xi=1 if p.U > 0 else -1,
    )


def mu_rescale(U: float, F: float, mu: float) -> tuple[float, float]:
    """``(U, F) -> (U/mu, sqrt(mu) F)``, which leaves ``f`` unchanged."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return U / mu, math.sqrt(mu) * F


def physical_drive(f: float, U: float, gamma: float) -> float:
    """Drive amplitude ``F`` giving dimensionless drive ``f``."""
    return f * gamma**1.5 / (4.0 * math.sqrt(abs(U)))


def to_physical_time(t_scaled, gamma: float):
    return np.multiply(t_scaled, 2.0 / gamma)


def to_scaled_time(t_physical, gamma: float):
    return np.multiply(t_physical, gamma / 2.0)


def state(A: complex, B: complex) -> np.ndarray:
    return np.array([A.real, A.imag, B.real, B.imag], dtype=float)


def as_complex(u) -> tuple[complex, complex]:
    return complex(u[0], u[1]), complex(u[2], u[3])


def swap(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.array([u[2], u[3], u[0], u[1]])


def intensities(u) -> tuple[float, float]:
    return float(u[0] ** 2 + u[1] ** 2), float(u[2] ** 2 + u[3] ** 2)


def is_symmetric(u, tol: float = SYMMETRY_TOL) -> bool:
    return math.hypot(u[0] - u[2], u[1] - u[3]) < tol


def rhs(u, q: ScaledParams) -> np.ndarray:
    ar, ai, br, bi = u
    ia = q.delta + q.xi * (ar * ar + ai * ai)
    ib = q.delta + q.xi * (br * br + bi * bi)
    return np.array([
        -ar - ia * ai - q.kappa * bi + q.f,
        -ai + ia * ar + q.kappa * br,
        -br - ib * bi - q.kappa * ai + q.f,
        -bi + ib * br + q.kappa * ar,
    ])


def jacobian(u, q: ScaledParams) -> np.ndarray:
    ar, ai, br, bi = u
    x = q.xi
    ia = q.delta + x * (ar * ar + ai * ai)
    ib = q.delta + x * (br * br + bi * bi)
    k = q.kappa
    return np.array([
        [-1 - 2 * x * ar * ai, -ia - 2 * x * ai * ai, 0.0, -k],
        [ia + 2 * x * ar * ar, -1 + 2 * x * ar * ai, k, 0.0],
        [0.0, -k, -1 - 2 * x * br * bi, -ib - 2 * x * bi * bi],
        [k, 0.0, ib + 2 * x * br * br, -1 + 2 * x * br * bi],
    ])


def sorted_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Eigenvalues ordered by real part, then imaginary part."""
    ev = np.linalg.eigvals(M)
    return ev[np.lexsort((ev.imag, ev.real))]


def classify(eigenvalues) -> str:
    re = np.real(eigenvalues)
    if np.any(np.abs(re) <= STABILITY_MARGIN):
        return "marginal"
    n_unstable = int(np.sum(re > 0))
    return {0: "stable", 1: "saddle-1"}.get(n_unstable, "saddle-2+")


def symmetric_intensities(f: float, q: ScaledParams) -> np.ndarray:
    """Positive roots ``x = |A|^2`` of ``x (1 + (delta + kappa + xi x)^2) = f^2``."""
    s = q.delta + q.kappa
    # xi^2 x^3 + 2 xi s x^2 + (1 + s^2) x - f^2
    roots = np.roots([1.0, 2.0 * q.xi * s, 1.0 + s * s, -f * f])
    real = np.sort(roots[np.abs(roots.imag) <= 1e-9 * max(1.0, abs(f) ** (2 / 3))].real)
    out = []
    for x in real:
        if x < 0 and x > -1e-14:
            x = 0.0
        if x >= 0:
            # polish on the cubic
            for _ in range(3):
                g = x * (1 + (s + q.xi * x) ** 2) - f * f
                dg = 1 + (s + q.xi * x) ** 2 + 2 * q.xi * x * (s + q.xi * x)
                if dg == 0:
                    break
                x -= g / dg
            out.append(max(x, 0.0))
    return np.array(sorted(set(out)))


def symmetric_equilibria(f: float, q: ScaledParams) -> list[np.ndarray]:
    """All equilibria with ``A = B``, from the intensity cubic plus the phase relation."""
    s = q.delta + q.kappa
    eqs = []
    for x in symmetric_intensities(f, q):
        A = f / (1.0 - 1j * (s + q.xi * x))
        u = state(A, A)
        res = newton_equilibrium(u, q.at(f))
        eqs.append(res.state if res.converged else u)
    return eqs


@dataclass(frozen=True)
class NewtonResult:
    state: np.ndarray
    converged: bool
    iterations: int
    residual: float


def newton_equilibrium(guess, q: ScaledParams, tol: float = 1e-12, max_iter: int = 100) -> NewtonResult:
    """Damped Newton on ``rhs = 0``; non-convergence is reported, not raised."""
    u = np.array(guess, dtype=float)
    res = np.linalg.norm(rhs(u, q))
    for it in range(max_iter + 1):
        if res < tol:
            return NewtonResult(u, True, it, float(res))
        if it == max_iter:
            break
        J = jacobian(u, q)
        try:
            step = np.linalg.solve(J, -rhs(u, q))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -rhs(u, q), rcond=None)[0]
        if not np.all(np.isfinite(step)):
            step = -rhs(u, q)
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            r_trial = np.linalg.norm(rhs(trial, q))
            if np.isfinite(r_trial) and r_trial < (1 - 1e-4 * lam) * res:
                break
            lam *= 0.5
        else:
            # no descent along the Newton direction; take a short gradient step instead
            g = J.T @ rhs(u, q)
            trial = u - 1e-3 * g / max(np.linalg.norm(g), 1e-300)
            r_trial = np.linalg.norm(rhs(trial, q))
        u, res = trial, r_trial
    return NewtonResult(u, False, max_iter, float(res))


def antisymmetric_block(x: float, A: complex, q: ScaledParams) -> np.ndarray:
    """Linearisation restricted to antisymmetric perturbations ``(z, -z)`` at a symmetric state."""
    theta = q.delta - q.kappa + 2 * q.xi * x
    c = 1j * q.xi * A * A
    # dz/dt = (-1 + i theta) z + c conj(z), in real coordinates
    return np.array([
        [-1 + c.real, -theta + c.imag],
        [theta + c.imag, -1 - c.real],
    ])


def pitchfork_test(x: float, q: ScaledParams) -> float:
    """Determinant of the antisymmetric block: ``1 + (delta + 2 xi x - kappa)^2 - x^2``."""
    return 1.0 + (q.delta + 2 * q.xi * x - q.kappa) ** 2 - x * x
