"""Pseudo-arclength continuation of equilibria and bifurcation detection.

The unknown is ``y = (u, f)`` with ``u`` the real 4-vector state.  The
symmetric branch is traced inside the invariant subspace ``A = B`` so that
roundoff can never push it onto an asymmetric branch at a pitchfork; the
records still carry the full 4x4 eigenvalues.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ScaledParams,
    antisymmetric_block,
    as_complex,
    classify,
    intensities,
    is_symmetric,
    jacobian,
    newton_equilibrium,
    pitchfork_test,
    rhs,
    sorted_eigenvalues,
    state,
    swap,
)

DS_MIN = 1e-4
DS_MAX = 0.05
CORRECTOR_TOL = 1e-12
CORRECTOR_MAX_ITER = 12
BISECTION_TOL = 1e-8
# imaginary parts below this do not count as a complex pair for the Hopf test
HOPF_IMAG_MIN = 1e-6


class ContinuationError(RuntimeError):
    pass


@dataclass
class BranchRecord:
    f: np.ndarray
    states: np.ndarray
    eigenvalues: np.ndarray
    stability: list[str]
    symmetric: np.ndarray
    q: ScaledParams
    subspace: str = "full"
    termination: str = ""

    def __len__(self):
        return self.f.size

    @property
    def intensities(self) -> np.ndarray:
        s = self.states
        return np.column_stack([s[:, 0] ** 2 + s[:, 1] ** 2, s[:, 2] ** 2 + s[:, 3] ** 2])

    def swapped(self) -> BranchRecord:
        st = self.states[:, [2, 3, 0, 1]]
        return BranchRecord(self.f.copy(), st, self.eigenvalues.copy(), list(self.stability),
                            self.symmetric.copy(), self.q, self.subspace, self.termination)

    def reversed(self) -> BranchRecord:
        return BranchRecord(self.f[::-1].copy(), self.states[::-1].copy(), self.eigenvalues[::-1].copy(),
                            self.stability[::-1], self.symmetric[::-1].copy(), self.q,
                            self.subspace, self.termination)


@dataclass(frozen=True)
class BifurcationPoint:
    kind: str
    f: float
    state: np.ndarray
    residual: float
    flagged: bool = False

    @property
    def intensities(self) -> tuple[float, float]:
        return intensities(self.state)


# -- systems -----------------------------------------------------------------

class _Full:
    """``G(u, f) = rhs`` on R^4."""

    dim = 4

    def __init__(self, q: ScaledParams):
        self.q = q

    def G(self, y):
        return rhs(y[:4], self.q.at(y[4]))

    def DG(self, y):
        return np.hstack([jacobian(y[:4], self.q.at(y[4])), np.array([[1.0], [0.0], [1.0], [0.0]])])

    def embed(self, y):
        return y[:4].copy()


class _Symmetric:
    """Restriction to ``A = B``: ``dA/dt = -A + i(delta + kappa + xi|A|^2) A + f``."""

    dim = 2

    def __init__(self, q: ScaledParams):
        self.q = q

    def G(self, y):
        u = np.array([y[0], y[1], y[0], y[1]])
        return rhs(u, self.q.at(y[2]))[:2]

    def DG(self, y):
        u = np.array([y[0], y[1], y[0], y[1]])
        J = jacobian(u, self.q.at(y[2]))
        # d/dA of the A-equation with B tied to A
        Js = J[:2, :2] + J[:2, 2:]
        return np.hstack([Js, np.array([[1.0], [0.0]])])

    def embed(self, y):
        return np.array([y[0], y[1], y[0], y[1]])


def _system(q: ScaledParams, subspace: str):
    if subspace == "full":
        return _Full(q)
    if subspace == "symmetric":
        return _Symmetric(q)
    raise ValueError(f"unknown subspace {subspace!r}")


def _tangent(sys, y, ref):
    DG = sys.DG(y)
    M = np.vstack([DG, ref])
    rhs_ = np.zeros(sys.dim + 1)
    rhs_[-1] = 1.0
    t = np.linalg.solve(M, rhs_)
    return t / np.linalg.norm(t)


def _correct(sys, y_pred, tau, max_iter=CORRECTOR_MAX_ITER, tol=CORRECTOR_TOL):
    """Newton on ``[G(y); tau . (y - y_pred)] = 0``; returns ``(y, iterations)`` or ``(None, k)``."""
    y = y_pred.copy()
    for k in range(max_iter):
        g = sys.G(y)
        c = tau @ (y - y_pred)
        if np.linalg.norm(g) < tol and abs(c) < tol:
            return y, k
        M = np.vstack([sys.DG(y), tau])
        try:
            dy = np.linalg.solve(M, -np.append(g, c))
        except np.linalg.LinAlgError:
            return None, k
        y = y + dy
        if not np.all(np.isfinite(y)):
            return None, k
    g = sys.G(y)
    if np.linalg.norm(g) < tol:
        return y, max_iter
    return None, max_iter


def _record(sys, ys, q, subspace, termination):
    f = np.array([y[-1] for y in ys])
    states = np.array([sys.embed(y) for y in ys])
    evs = np.array([sorted_eigenvalues(jacobian(u, q.at(fi))) for u, fi in zip(states, f)])
    stab = [classify(e) for e in evs]
    sym = np.array([is_symmetric(u) for u in states])
    return BranchRecord(f, states, evs, stab, sym, q, subspace, termination)


def continue_branch(
    start_f: float,
    start_state,
    q: ScaledParams,
    f_range: tuple[float, float],
    *,
    direction: int = 1,
    ds: float = 0.01,
    ds_min: float = DS_MIN,
    ds_max: float = DS_MAX,
    max_points: int = 20000,
    subspace: str = "full",
    stop=None,
) -> BranchRecord:
    """Trace a branch of equilibria from a converged start until ``f`` leaves ``f_range``.

    ``direction`` fixes the initial sign of ``df/ds``.  ``stop(f, u)`` may end
    the branch early (the stopping point is kept).  A corrector failure at the
    minimum step ends the branch with ``termination`` set accordingly.
    """
    sys = _system(q, subspace)
    u0 = np.asarray(start_state, dtype=float)
    if subspace == "symmetric":
        if not is_symmetric(u0, 1e-12):
            raise ValueError("symmetric continuation needs a symmetric start")
        y = np.array([u0[0], u0[1], start_f])
    else:
        y = np.append(u0, start_f)
    if np.linalg.norm(sys.G(y)) > 1e-10:
        raise ValueError("start is not an equilibrium")
    lo, hi = f_range
    ref = np.zeros(sys.dim + 1)
    ref[-1] = 1.0 if direction >= 0 else -1.0
    tau = _tangent(sys, y, ref)
    if tau[-1] * ref[-1] < 0:
        tau = -tau
    ys = [y]
    ds = min(max(ds, ds_min), ds_max)
    termination = "max_points"
    while len(ys) < max_points:
        y_new, iters = _correct(sys, ys[-1] + ds * tau, tau)
        if y_new is None or np.linalg.norm(y_new - ys[-1]) > 3 * ds:
            if ds <= ds_min * (1 + 1e-12):
                termination = "corrector_failure"
                warnings.warn(f"continuation stopped at f={ys[-1][-1]:.6g}: corrector failed at minimum step")
                break
            ds = max(ds / 2, ds_min)
            continue
        f_new = y_new[-1]
        if f_new > hi or f_new < lo:
            # land exactly on the range boundary
            target = hi if f_new > hi else lo
            yb = _land_on_f(sys, ys[-1], y_new, target)
            if yb is not None:
                ys.append(yb)
            termination = "f_range"
            break
        step = y_new - ys[-1]
        tau_new = step / np.linalg.norm(step)
        ys.append(y_new)
        tau = tau_new
        if stop is not None and stop(f_new, sys.embed(y_new)):
            termination = "stop"
            break
        if iters <= 3:
            ds = min(ds * 1.3, ds_max)
        elif iters >= 7:
            ds = max(ds * 0.7, ds_min)
    return _record(sys, ys, q, subspace, termination)


def _land_on_f(sys, y0, y1, target):
    """Equilibrium at ``f = target`` between two branch points."""
    w = (target - y0[-1]) / (y1[-1] - y0[-1])
    y = y0 + w * (y1 - y0)
    e = np.zeros_like(y)
    e[-1] = 1.0
    y[-1] = target
    yc, _ = _correct(sys, y, e)
    return yc


# -- bifurcation detection -----------------------------------------------------

def _hopf_test(ev) -> float:
    """Largest real part among complex pairs; NaN when there is no pair."""
    pairs = ev[np.abs(ev.imag) > HOPF_IMAG_MIN]
    return float(pairs.real.max()) if pairs.size else math.nan


def _hopf_crossing(ev_a, ev_b) -> bool:
    """Some complex pair crosses the imaginary axis between two neighbouring spectra."""
    pa = np.sort(ev_a[ev_a.imag > HOPF_IMAG_MIN].real)
    pb = np.sort(ev_b[ev_b.imag > HOPF_IMAG_MIN].real)
    if pa.size != pb.size or pa.size == 0:
        return False
    return bool(np.any(np.sign(pa) != np.sign(pb)))


def _pair_test(ev, ref_ev) -> float:
    """Real part of the complex pair closest to the imaginary axis in ``ref_ev``."""
    pairs = ev[ev.imag > HOPF_IMAG_MIN]
    ref = ref_ev[ref_ev.imag > HOPF_IMAG_MIN]
    target = ref[np.argmin(np.abs(ref.real))]
    if not pairs.size:
        return math.nan
    return float(pairs[np.argmin(np.abs(pairs - target))].real)


def _bisect(sys, q, y_a, y_b, test, tol=BISECTION_TOL):
    """Locate a sign change of ``test(f, u)`` between branch points ``y_a`` and ``y_b``."""
    d = y_b - y_a
    tau = d / np.linalg.norm(d)
    lo, hi = 0.0, 1.0
    g_lo = test(y_a[-1], sys.embed(y_a))
    ya, yb = y_a, y_b
    y_mid = y_a
    for _ in range(200):
        if abs(yb[-1] - ya[-1]) < tol and np.linalg.norm(yb - ya) < 1e3 * tol:
            break
        mid = 0.5 * (lo + hi)
        y_mid, _ = _correct(sys, y_a + mid * d, tau)
        if y_mid is None:
            break
        g = test(y_mid[-1], sys.embed(y_mid))
        if not np.isfinite(g):
            break
        if np.sign(g) == np.sign(g_lo):
            lo, ya, g_lo = mid, y_mid, g
        else:
            hi, yb = mid, y_mid
    y = ya if abs(test(ya[-1], sys.embed(ya))) <= abs(test(yb[-1], sys.embed(yb))) else yb
    return y, test(y[-1], sys.embed(y))


def _branch_ys(branch: BranchRecord):
    if branch.subspace == "symmetric":
        return [np.array([u[0], u[1], f]) for u, f in zip(branch.states, branch.f)]
    return [np.append(u, f) for u, f in zip(branch.states, branch.f)]


def detect_bifurcations(branch: BranchRecord, kinds=("pitchfork", "hopf", "saddle-node")) -> list[BifurcationPoint]:
    """Sign-change scan of the test functions along a branch, refined by bisection.

    Pitchforks are only sought on symmetric points, folds and Hopf points only
    on asymmetric ones.  Zeros of different kinds closer than the bisection
    tolerance are flagged for review.
    """
    q = branch.q
    sys = _system(q, branch.subspace)
    ys = _branch_ys(branch)
    found: list[BifurcationPoint] = []
    dets = [np.linalg.det(jacobian(u, q.at(f))) for u, f in zip(branch.states, branch.f)]
    for k in range(len(ys) - 1):
        sym_a, sym_b = branch.symmetric[k], branch.symmetric[k + 1]
        u_a, u_b = branch.states[k], branch.states[k + 1]
        if "pitchfork" in kinds and sym_a and sym_b:
            ta = pitchfork_test(intensities(u_a)[0], q)
            tb = pitchfork_test(intensities(u_b)[0], q)
            if np.sign(ta) != np.sign(tb):
                y, r = _bisect(sys, q, ys[k], ys[k + 1], lambda f, u: pitchfork_test(intensities(u)[0], q))
                found.append(BifurcationPoint("pitchfork", float(y[-1]), sys.embed(y), float(r)))
        if sym_a or sym_b:
            continue
        if "saddle-node" in kinds and np.sign(dets[k]) != np.sign(dets[k + 1]):
            # a fold also reverses the direction of f along the branch
            dfa = branch.f[k] - branch.f[k - 1] if k > 0 else branch.f[k + 1] - branch.f[k]
            dfb = branch.f[k + 2] - branch.f[k + 1] if k + 2 < len(ys) else branch.f[k + 1] - branch.f[k]
            if np.sign(dfa) != np.sign(dfb):
                det = lambda f, u: np.linalg.det(jacobian(u, q.at(f)))
                y, r = _bisect(sys, q, ys[k], ys[k + 1], det)
                found.append(BifurcationPoint("saddle-node", float(y[-1]), sys.embed(y), float(r)))
        if "hopf" in kinds and _hopf_crossing(branch.eigenvalues[k], branch.eigenvalues[k + 1]):
            ref = branch.eigenvalues[k]
            test = lambda f, u: _pair_test(sorted_eigenvalues(jacobian(u, q.at(f))), ref)
            y, r = _bisect(sys, q, ys[k], ys[k + 1], test)
            found.append(BifurcationPoint("hopf", float(y[-1]), sys.embed(y), float(r)))
    found.sort(key=lambda b: b.f)
    out = []
    for i, b in enumerate(found):
        close = any(abs(b.f - o.f) < BISECTION_TOL and b.kind != o.kind for j, o in enumerate(found) if j != i)
        out.append(BifurcationPoint(b.kind, b.f, b.state, b.residual, flagged=close))
    return out


# -- branch switching ------------------------------------------------------------

def antisymmetric_null_vector(bp: BifurcationPoint, q: ScaledParams) -> np.ndarray:
    """Unit null vector ``(w, -w)/sqrt(2)`` of the Jacobian at a symmetric pitchfork."""
    A, _ = as_complex(bp.state)
    M = antisymmetric_block(abs(A) ** 2, A, q.at(bp.f))
    _, _, vt = np.linalg.svd(M)
    w = vt[-1]
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    v = np.concatenate([w, -w])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class BranchSeed:
    f: float
    state: np.ndarray
    converged: bool


def branch_switch_pitchfork(bp: BifurcationPoint, q: ScaledParams, eps: float = 1e-3,
                            f_offset: float = 1e-3) -> tuple[BranchSeed, BranchSeed]:
    """Two swap-related asymmetric equilibria just beyond a pitchfork.

    A first bordered solve pins the antisymmetric amplitude at ``eps`` and finds
    which side of the pitchfork the asymmetric pair lives on and its curvature;
    the seed at ``f_offset`` beyond is then predicted from that parabola and
    Newton-corrected at fixed ``f``.  The second seed is the first with ``eps``
    negated.
    """
    if bp.kind != "pitchfork":
        raise ValueError("branch switching needs a pitchfork")
    v = antisymmetric_null_vector(bp, q)
    sys = _Full(q)
    y_p = np.append(bp.state, bp.f)
    seeds = []
    for sign in (1.0, -1.0):
        e = sign * eps
        # pin v . (u - u_p) = e
        tau = np.append(v, 0.0)
        y_pred = y_p + np.append(e * v, 0.0)
        y_e, _ = _correct(sys, y_pred, tau)
        if y_e is None:
            raise ContinuationError("pitchfork corrector failed at the pinned amplitude")
        c = (y_e[-1] - bp.f) / eps**2
        side = 1.0 if c > 0 else -1.0
        amp = math.copysign(math.sqrt(f_offset / abs(c)), e) if c != 0 else e
        f_seed = bp.f + side * f_offset
        guess = bp.state + amp * v
        res = newton_equilibrium(guess, q.at(f_seed))
        if not res.converged or is_symmetric(res.state, 1e-6):
            raise ContinuationError("pitchfork corrector fell back onto the symmetric branch")
        seeds.append(BranchSeed(f_seed, res.state, True))
    return seeds[0], seeds[1]


def symmetric_branch(q: ScaledParams, f_max: float, **kw) -> BranchRecord:
    """Symmetric branch from the origin at ``f = 0`` (a known root) up to ``f_max``."""
    return continue_branch(0.0, np.zeros(4), q, (0.0, f_max), subspace="symmetric", **kw)


def asymmetric_branch(seed: BranchSeed, bp: BifurcationPoint, q: ScaledParams, f_max: float,
                      rejoin_tol: float = 1e-6, **kw) -> BranchRecord:
    """Continue away from ``bp`` until the branch returns to the symmetric subspace.

    Passing through the far pitchfork the curve would carry on into the mirror
    branch, so the run stops once ``A - B`` becomes negligible or flips sign
    between two consecutive points while small.
    """
    side = 1 if seed.f > bp.f else -1
    prev = [seed.state[:2] - seed.state[2:]]

    def rejoined(f, u):
        d = u[:2] - u[2:]
        flipped = d @ prev[0] < 0 and np.linalg.norm(d) < 0.1
        prev[0] = d
        return bool(flipped or np.linalg.norm(d) < rejoin_tol) and abs(f - bp.f) > 0.5

    return continue_branch(seed.f, seed.state, q, (0.0, f_max), direction=side, stop=rejoined, **kw)
