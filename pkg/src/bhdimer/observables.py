"""Per-sample quantum observables: photon numbers, the factorisation ratio O,
g2 moments, reduced density matrices and von Neumann entropy.

All functions take a normalised state vector together with its
:class:`~bhdimer.hilbert.ModeTruncation`; they are pure and stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# eigenvalues at or below this are treated as exact zeros in the entropy sum
EIGEN_CLAMP = 1e-12
# photon numbers at or below this make O and g2 undefined for a sample
POPULATION_FLOOR = 1e-12


@dataclass(frozen=True)
class SampleObservables:
    t: float
    n1: float
    n2: float
    O: float
    g2m1: float
    g2m2: float
    entropy: float


def _grid(psi, trunc) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (trunc.dim,):
        raise ValueError(f"state has shape {psi.shape}, expected ({trunc.dim},)")
    return psi.reshape(trunc.shape)


def _marginals(psi, trunc):
    w = np.abs(_grid(psi, trunc)) ** 2
    return w.sum(axis=1), w.sum(axis=0), w


def photon_numbers(psi, trunc) -> tuple[float, float]:
    p1, p2, _ = _marginals(psi, trunc)
    return float(np.arange(p1.size) @ p1), float(np.arange(p2.size) @ p2)


def factorisation_ratio(psi, trunc) -> float:
    """``<a1+ a2+ a1 a2> / (<n1><n2>)``; NaN marks a sample with a near-empty cavity."""
    p1, p2, w = _marginals(psi, trunc)
    k1, k2 = np.arange(p1.size), np.arange(p2.size)
    n1, n2 = k1 @ p1, k2 @ p2
    if min(n1, n2) <= POPULATION_FLOOR:
        return math.nan
    # fsum is correctly rounded, hence independent of order: swapping the modes leaves O bit-identical
    cross = math.fsum((w * np.outer(k1, k2)).ravel())
    return float(cross / (n1 * n2))


def g2_moment(psi, trunc, mode: int) -> float:
    """``<a_i+ a_i+ a_i a_i> = <n_i (n_i - 1)>``."""
    p1, p2, _ = _marginals(psi, trunc)
    if mode not in (1, 2):
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")
    p = p1 if mode == 1 else p2
    k = np.arange(p.size)
    return float((k * (k - 1)) @ p)


def g2_from_moments(moment, population) -> float:
    """Normalised ``g2(0)`` from (time-averaged) moment and population."""
    if population <= POPULATION_FLOOR:
        return math.nan
    return float(moment / population**2)


def reduced_density(psi, trunc, keep_mode: int) -> np.ndarray:
    """Partial trace over the other cavity."""
    X = _grid(psi, trunc)
    if keep_mode == 1:
        return X @ X.conj().T
    if keep_mode == 2:
        return X.T @ X.conj()
    raise ValueError(f"keep_mode must be 1 or 2, got {keep_mode!r}")


def von_neumann_entropy(rho: np.ndarray) -> float:
    """``-sum(lam ln lam)`` over eigenvalues above :data:`EIGEN_CLAMP`."""
    rho = np.asarray(rho)
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    lam = lam[lam > EIGEN_CLAMP]
    return max(0.0, float(-(lam * np.log(lam)).sum()))


def entropy_from_amplitudes(X: np.ndarray) -> float:
    """Entanglement entropy of a normalised two-mode amplitude grid ``X[n1, n2]``.

    Uses the Schmidt coefficients (squared singular values), which equal the
    eigenvalues of either reduced density matrix.
    """
    s = np.linalg.svd(X, compute_uv=False)
    lam = s * s
    lam = lam[lam > EIGEN_CLAMP]
    return max(0.0, float(-(lam * np.log(lam)).sum()))


def sample_observables(psi, trunc, t: float = 0.0) -> SampleObservables:
    n1, n2 = photon_numbers(psi, trunc)
    return SampleObservables(
        t=t, n1=n1, n2=n2,
        O=factorisation_ratio(psi, trunc),
        g2m1=g2_moment(psi, trunc, 1), g2m2=g2_moment(psi, trunc, 2),
        entropy=von_neumann_entropy(reduced_density(psi, trunc, 1)),
    )


def sum_diff(n1, n2):
    """``(S_o, D_o) = (n1 + n2, n1 - n2)``; works elementwise on arrays."""
    return np.add(n1, n2), np.subtract(n1, n2)


def time_average(t, values, discard: float = 0.0) -> tuple[float, int]:
    """Mean of samples with ``t > discard``, ignoring NaN markers; returns ``(mean, count)``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (t > discard) & np.isfinite(values)
    if not keep.any():
        raise ValueError(f"no samples after t={discard}")
    return float(values[keep].mean()), int(keep.sum())


def averaged_g2(t, g2_moment_series, population_series, discard: float = 0.0) -> tuple[float, int]:
    """Time-averaged ``g2(0)`` as ratio of averaged moments, not average of ratios.

    Samples with a near-empty cavity are left out; returns ``(g2, n_excluded)``.
    """
    window = np.asarray(t) > discard
    keep = window & (np.asarray(population_series) > POPULATION_FLOOR)
    if not keep.any():
        raise ValueError("no usable samples for g2")
    m = float(np.mean(np.asarray(g2_moment_series)[keep]))
    n = float(np.mean(np.asarray(population_series)[keep]))
    return g2_from_moments(m, n), int(window.sum() - keep.sum())
