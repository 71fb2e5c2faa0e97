"""Histograms, power spectra and switching counts for trajectory time series."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SPACING_RTOL = 1e-6


@dataclass(frozen=True)
class Histogram2D:
    counts: np.ndarray
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    overflow: int

    @property
    def n_bins(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def centres(self):
        nx, ny = self.counts.shape
        ex = np.linspace(*self.x_range, nx + 1)
        ey = np.linspace(*self.y_range, ny + 1)
        return 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])

    def merge(self, other: Histogram2D) -> Histogram2D:
        if (other.x_range, other.y_range, other.n_bins) != (self.x_range, self.y_range, self.n_bins):
            raise ValueError("histograms have different binning")
        return Histogram2D(self.counts + other.counts, self.x_range, self.y_range, self.overflow + other.overflow)


@dataclass(frozen=True)
class Histogram1D:
    counts: np.ndarray
    values: np.ndarray
    range: tuple[float, float]
    overflow: int
    scale: float
    scaled: bool

    def centres(self) -> np.ndarray:
        e = np.linspace(*self.range, self.counts.size + 1)
        return 0.5 * (e[1:] + e[:-1])


@dataclass(frozen=True)
class PowerSpectrum:
    freq: np.ndarray
    magnitude: np.ndarray
    dt: float


def symmetrize_points(points):
    """Append the mirror image ``(y, x)`` of every point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.concatenate([pts, pts[:, ::-1]])


def _bin_index(v, lo, hi, n):
    """Half-open bins on ``[lo, hi)`` with the top edge folded into the last bin; -1 marks overflow."""
    v = np.asarray(v, dtype=float)
    bad = ~np.isfinite(v) | (v < lo) | (v > hi)
    idx = np.floor((np.where(bad, lo, v) - lo) / (hi - lo) * n).astype(np.int64)
    idx = np.where(v == hi, n - 1, idx)
    return np.where(bad | (idx < 0) | (idx >= n), -1, idx)


def histogram2d(points, x_range, y_range=None, n_bins=200) -> Histogram2D:
    y_range = x_range if y_range is None else y_range
    nx, ny = (n_bins, n_bins) if np.isscalar(n_bins) else n_bins
    for lo, hi in (x_range, y_range):
        if not hi > lo:
            raise ValueError(f"degenerate range ({lo}, {hi})")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ix = _bin_index(pts[:, 0], *x_range, nx)
    iy = _bin_index(pts[:, 1], *y_range, ny)
    ok = (ix >= 0) & (iy >= 0)
    counts = np.zeros((nx, ny), dtype=np.int64)
    np.add.at(counts, (ix[ok], iy[ok]), 1)
    return Histogram2D(counts, tuple(map(float, x_range)), tuple(map(float, y_range)), int((~ok).sum()))


def histogram1d_scaled(values, value_range, n_bins=80, target_max=None) -> Histogram1D:
    """Counts on uniform bins, optionally rescaled so the tallest bin equals ``target_max``."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError(f"degenerate range ({lo}, {hi})")
    v = np.asarray(values, dtype=float).ravel()
    idx = _bin_index(v, lo, hi, n_bins)
    counts = np.bincount(idx[idx >= 0], minlength=n_bins).astype(np.int64)
    overflow = int((idx < 0).sum())
    peak = counts.max()
    if target_max is None or peak == 0:
        return Histogram1D(counts, counts.astype(float), (float(lo), float(hi)), overflow, 1.0, False)
    scale = target_max / peak
    vals = counts * scale
    # make the peak land on the target exactly
    vals[counts == peak] = target_max
    return Histogram1D(counts, vals, (float(lo), float(hi)), overflow, float(scale), True)


def _check_uniform(t):
    t = np.asarray(t, dtype=float)
    d = np.diff(t)
    if d.size == 0 or np.any(np.abs(d - d.mean()) > SPACING_RTOL * abs(d.mean())):
        raise ValueError("power_spectrum needs uniformly spaced samples")
    return float(d.mean())


def power_spectrum(series, dt: float | None = None, *, t=None, window: str | None = None) -> PowerSpectrum:
    """One-sided ``|FFT|`` of the mean-removed series on ``k / (N dt)``.

    Give either the spacing ``dt`` or the sample times ``t`` (checked for
    uniformity).  ``window="hann"`` tapers before transforming.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 16:
        raise ValueError("power_spectrum needs at least 16 samples")
    if t is not None:
        dt = _check_uniform(t)
    if dt is None or not dt > 0:
        raise ValueError("a positive sample spacing is required")
    x = x - x.mean()
    if window == "hann":
        x = x * np.hanning(x.size)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    mag = np.abs(np.fft.rfft(x))
    return PowerSpectrum(np.fft.rfftfreq(x.size, dt), mag, float(dt))


def dominant_frequency(spec: PowerSpectrum, band: tuple[float, float] | None = None) -> float:
    """Frequency of the largest magnitude in ``band`` (zero bin excluded); ties go low."""
    lo, hi = band if band is not None else (0.0, math.inf)
    sel = np.nonzero((spec.freq > 0) & (spec.freq >= lo) & (spec.freq <= hi))[0]
    if sel.size == 0:
        raise ValueError(f"no spectral bins in band {band}")
    # argmax returns the first, i.e. lowest, of tied maxima
    return float(spec.freq[sel[np.argmax(spec.magnitude[sel])]])


def average_spectra(specs) -> PowerSpectrum:
    """Trajectory-averaged spectrum: the root of the mean ``|X_k|^2`` on a shared grid."""
    specs = list(specs)
    if not specs:
        raise ValueError("nothing to average")
    ref = specs[0]
    for s in specs[1:]:
        if s.freq.shape != ref.freq.shape or not np.allclose(s.freq, ref.freq):
            raise ValueError("spectra are on different frequency grids")
    power = np.mean([s.magnitude ** 2 for s in specs], axis=0)
    return PowerSpectrum(ref.freq, np.sqrt(power), ref.dt)


def peak_prominence(spec: PowerSpectrum, freq: float, band: tuple[float, float] | None = None) -> float:
    """Magnitude at ``freq`` relative to the mean magnitude over ``band``."""
    lo, hi = band if band is not None else (0.0, math.inf)
    sel = (spec.freq > 0) & (spec.freq >= lo) & (spec.freq <= hi)
    k = int(np.argmin(np.abs(spec.freq - freq)))
    return float(spec.magnitude[k] / spec.magnitude[sel].mean())


def one_sided_power(spec: PowerSpectrum, n: int) -> float:
    """``sum |X_k|^2`` over the full spectrum reconstructed from the one-sided magnitudes."""
    m2 = spec.magnitude ** 2
    inner = m2[1:-1].sum() if n % 2 == 0 else m2[1:].sum()
    edge = m2[0] + (m2[-1] if n % 2 == 0 else 0.0)
    return float(edge + 2.0 * inner)


def count_switches(d, h: float) -> int:
    """Schmitt-trigger count: a switch is a passage from ``>= h`` to ``<= -h`` or back."""
    if not h > 0:
        raise ValueError("hysteresis must be positive")
    d = np.asarray(d, dtype=float)
    state = 0
    n = 0
    for v in d:
        if v >= h:
            if state == -1:
                n += 1
            state = 1
        elif v <= -h:
            if state == 1:
                n += 1
            state = -1
    return n


def default_hysteresis(f: float, mu: float, q=None) -> float:
    """A quarter of ``mu |(|A|^2 - |B|^2)|`` at the stable asymmetric equilibrium of drive ``f``.

    With several asymmetric pairs the smallest imbalance is used; without any
    (symmetric regime) the imbalance of the nearest asymmetric point on the
    branch is not meaningful and ``ValueError`` is raised.
    """
    from .semiclassical import STUDY_POINT
    from .semiclassical.diagram import DEFAULT_F_MAX, _diagram_cached, stable_equilibria

    q = q or STUDY_POINT
    d = _diagram_cached(q.delta, q.kappa, q.xi, DEFAULT_F_MAX)
    gaps = [abs(a - b) for a, b in (e.intensities for e in stable_equilibria(d, f)) if abs(a - b) > 1e-6]
    if not gaps:
        raise ValueError(f"no stable asymmetric equilibrium at f={f}; set the hysteresis explicitly")
    return 0.25 * mu * min(gaps)


def smooth(counts: np.ndarray, size: int = 3) -> np.ndarray:
    """Box average over a ``size x size`` neighbourhood (zero padding)."""
    return ndimage.uniform_filter(np.asarray(counts, dtype=float), size=size, mode="constant")


def local_maxima(counts: np.ndarray, *, smooth_size: int = 3, radius: int = 10,
                 threshold_rel: float = 0.1) -> list[tuple[int, int]]:
    """Bin indices of local maxima of the smoothed histogram.

    A bin counts when it is the largest within ``radius`` bins (Chebyshev
    distance) and above ``threshold_rel`` of the global maximum.  Tied maxima
    closer than ``radius`` are one peak, kept at the first in index order.
    """
    s = smooth(counts, smooth_size)
    if s.max() <= 0:
        return []
    peak = s == ndimage.maximum_filter(s, size=2 * radius + 1, mode="constant")
    peak &= s > threshold_rel * s.max()
    out: list[tuple[int, int]] = []
    for i, j in np.argwhere(peak):
        if all(max(abs(i - a), abs(j - b)) > radius for a, b in out):
            out.append((int(i), int(j)))
    return out


def count_modes_1d(values: np.ndarray, *, smooth_size: int = 3, radius: int = 5,
                   threshold_rel: float = 0.2) -> list[int]:
    """Indices of local maxima of a smoothed 1D histogram, same rule as :func:`local_maxima`."""
    s = ndimage.uniform_filter1d(np.asarray(values, dtype=float), size=smooth_size, mode="constant")
    if s.max() <= 0:
        return []
    peak = s == ndimage.maximum_filter1d(s, size=2 * radius + 1, mode="constant")
    peak &= s > threshold_rel * s.max()
    out: list[int] = []
    for i in np.nonzero(peak)[0]:
        if all(abs(i - a) > radius for a in out):
            out.append(int(i))
    return out
