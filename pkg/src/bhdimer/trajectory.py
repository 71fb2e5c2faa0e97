"""Monte-Carlo wave-function trajectories of the open dimer and a density-matrix oracle.

A trajectory alternates deterministic evolution under the non-Hermitian
``H_eff`` with photon-loss jumps ``psi -> a_i psi``.  The no-jump evolution
uses classical RK4 with a fixed base step; the jump time is the moment the
squared norm of the unnormalised state falls to a uniform draw ``r``.

Observables are conditional expectations of the normalised state at each
sample time (no ensemble averaging), which is what a single realisation
measures.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernel
from .hilbert import (
    ModeTruncation,
    PhysicalParams,
    SparseOperator,
    apply_operator,
    build_effective_hamiltonian,
    build_hermitian_hamiltonian,
    mode_annihilator,
    number_operator,
    vacuum,
)
from .observables import entropy_from_amplitudes

log = logging.getLogger(__name__)

PRNG_ALGORITHM = f"numpy.random.Philox (numpy {np.__version__})"
INTEGRATOR = "classical RK4, fixed step; jump time by bracketing (Illinois) search on the squared norm"
SAMPLE_COLUMNS = ("t", "n1", "n2", "O", "g2m1", "g2m2", "entropy")

# positive-photon-number threshold below which O is undefined for a sample
POPULATION_FLOOR = 1e-12
# RK4's stability interval on the imaginary axis is 2*sqrt(2)
RK4_IMAG_LIMIT = 2.0 * math.sqrt(2.0)


class TrajectoryError(RuntimeError):
    pass


class TruncationOverflow(TrajectoryError):
    pass


class StepSizeFailure(TrajectoryError):
    pass


@dataclass(frozen=True)
class RampSchedule:
    """Linear drive ramp ``F(t) = F_start + rate * t`` (real drive)."""

    rate: float = 0.216
    F_start: float = 0.0

    def drive(self, t):
        return self.F_start + self.rate * t


@dataclass(frozen=True)
class JumpEvent:
    t: float
    channel: int


@dataclass(frozen=True, eq=False)
class TrajectoryConfig:
    params: PhysicalParams
    trunc: ModeTruncation
    t_final: float
    dt: float = 0.002
    sample_interval: float = 0.2
    seed: int = 0
    jump_time_tol: float = 1e-6
    initial_state: np.ndarray | None = None
    ramp: RampSchedule | None = None
    edge_tol: float = 1e-4
    # order in which jump channels are tried against the channel draw
    channel_order: tuple[int, int] = (1, 2)
    compute_entropy: bool = True

    def __post_init__(self):
        if not (0 < self.dt <= self.sample_interval <= self.t_final):
            raise ValueError("need 0 < dt <= sample_interval <= t_final")
        if not (0 < self.jump_time_tol < self.dt):
            raise ValueError("need 0 < jump_time_tol < dt")
        if sorted(self.channel_order) != [1, 2]:
            raise ValueError("channel_order must be a permutation of (1, 2)")
        psi = vacuum(self.trunc) if self.initial_state is None else np.array(self.initial_state, dtype=complex)
        if psi.shape != (self.trunc.dim,):
            raise ValueError(f"initial state has shape {psi.shape}, expected ({self.trunc.dim},)")
        if abs(np.vdot(psi, psi).real - 1.0) > 1e-10:
            raise ValueError("initial state must be normalised")
        psi.flags.writeable = False
        object.__setattr__(self, "initial_state", psi)
        if self.ramp is not None:
            if complex(self.params.F).imag != 0:
                raise ValueError("ramped runs need a real drive")
            if min(self.ramp.drive(0.0), self.ramp.drive(self.t_final)) < 0:
                raise ValueError("ramp drive must stay non-negative on [0, t_final]")

    def drive_at(self, t):
        return self.ramp.drive(t) if self.ramp is not None else complex(self.params.F)

    def describe(self) -> dict:
        """JSON-ready description; the initial state enters through its digest."""
        p = asdict(self.params)
        p["F"] = [complex(p["F"]).real, complex(p["F"]).imag]
        return {
            "params": p,
            "truncation": [self.trunc.n_max_1, self.trunc.n_max_2],
            "t_final": self.t_final,
            "dt": self.dt,
            "sample_interval": self.sample_interval,
            "seed": int(self.seed),
            "jump_time_tol": self.jump_time_tol,
            "initial_state_sha256": hashlib.sha256(np.ascontiguousarray(self.initial_state).tobytes()).hexdigest(),
            "ramp": None if self.ramp is None else asdict(self.ramp),
            "edge_tol": self.edge_tol,
            "channel_order": list(self.channel_order),
            "compute_entropy": self.compute_entropy,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> TrajectoryConfig:
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return TrajectoryConfig(**kw)


@dataclass(eq=False)
class TrajectoryRecord:
    """Samples of one trajectory: columns of :data:`SAMPLE_COLUMNS` plus the drive value."""

    t: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    O: np.ndarray
    g2m1: np.ndarray
    g2m2: np.ndarray
    entropy: np.ndarray
    drive: np.ndarray
    jumps: list[JumpEvent]
    seed: int
    config_digest: str
    max_edge_population: float = 0.0

    def columns(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in SAMPLE_COLUMNS}

    def same_as(self, other: TrajectoryRecord) -> bool:
        """Bit-for-bit equality of every sample and jump."""
        arrays = SAMPLE_COLUMNS + ("drive",)
        return (
            all(np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True) for k in arrays)
            and self.jumps == other.jumps
            and self.seed == other.seed
            and self.config_digest == other.config_digest
        )


# ---------------------------------------------------------------------------
# reference operations on SparseOperator


def evolve_segment(psi: np.ndarray, H_eff: SparseOperator, dt: float) -> np.ndarray:
    """One RK4 step of ``dpsi/dt = -i H_eff psi``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = lambda x: -1j * apply_operator(H_eff, x)  # noqa: E731
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = f(psi)
        k2 = f(psi + 0.5 * dt * k1)
        k3 = f(psi + 0.5 * dt * k2)
        k4 = f(psi + dt * k3)
        out = psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise StepSizeFailure(f"non-finite amplitudes after a step of {dt}")
    return out


def find_jump_time(psi0: np.ndarray, H_eff: SparseOperator, t0: float, dt: float, r: float,
                   tol: float = 1e-6) -> float:
    """Bisect ``(t0, t0 + dt]`` for the time at which ``|psi|^2`` reaches ``r``."""
    n0 = np.vdot(psi0, psi0).real
    n_end = np.vdot(end := evolve_segment(psi0, H_eff, dt), end).real
    if not (n0 > r >= n_end):
        raise ValueError(f"no bracket: |psi|^2 = {n0} at t0 and {n_end} at t0+dt for r = {r}")
    lo, hi = 0.0, dt
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        psi = evolve_segment(psi0, H_eff, mid)
        if np.vdot(psi, psi).real > r:
            lo = mid
        else:
            hi = mid
    return t0 + 0.5 * (lo + hi)


def perform_jump(psi: np.ndarray, trunc: ModeTruncation, rng: np.random.Generator,
                 channel_order=(1, 2)) -> tuple[np.ndarray, int]:
    """Apply ``a_1`` or ``a_2`` with probability proportional to ``<n_i>``; renormalise."""
    n1, n2 = trunc.occupations()
    w = np.abs(psi) ** 2
    pops = {1: float(w @ n1), 2: float(w @ n2)}
    total = pops[1] + pops[2]
    if total <= 0:
        raise TrajectoryError("jump requested from a state with no photons")
    u = rng.random() * total
    first, second = channel_order
    channel = first if u < pops[first] else second
    out = apply_operator(mode_annihilator(trunc, channel), psi)
    return out / np.linalg.norm(out), channel


# ---------------------------------------------------------------------------
# fast trajectory engine


def _kernel_arrays(p: PhysicalParams, trunc: ModeTruncation):
    m1, m2 = trunc.shape
    n1 = np.arange(m1, dtype=float)[:, None]
    n2 = np.arange(m2, dtype=float)[None, :]
    dg = (-p.Delta * (n1 + n2) + p.U * (n1 * (n1 - 1) + n2 * (n2 - 1))) - 0.5j * p.gamma * (n1 + n2)
    s1 = np.sqrt(np.arange(m1 + 1, dtype=float))
    s2 = np.sqrt(np.arange(m2 + 1, dtype=float))
    # level M_i is outside the truncation
    s1[m1] = 0.0
    s2[m2] = 0.0
    return np.ascontiguousarray(dg.astype(complex)), complex(-p.J), s1, s2


def kernel_apply(p: PhysicalParams, trunc: ModeTruncation, psi: np.ndarray, F=None) -> np.ndarray:
    """``H_eff psi`` through the compiled grid kernel (for cross-checks against the CSR route)."""
    dg, hop, s1, s2 = _kernel_arrays(p, trunc)
    xp = _pad(psi, trunc)
    out = np.empty(trunc.shape, complex)
    _kernel.apply_h(dg, hop, complex(p.F if F is None else F), s1, s2, xp, out)
    return out.ravel()


def kernel_step(p: PhysicalParams, trunc: ModeTruncation, psi: np.ndarray, t: float, h: float,
                ramp: RampSchedule | None = None) -> np.ndarray:
    dg, hop, s1, s2 = _kernel_arrays(p, trunc)
    F0, rate = _drive_coefficients(p, ramp)
    xp = _pad(psi, trunc)
    out = np.zeros_like(xp)
    work = [np.empty(trunc.shape, complex) for _ in range(4)]
    _kernel.rk4_step(dg, hop, F0, rate, s1, s2, xp, t, h, out, *work, np.zeros_like(xp))
    return out[1:-1, 1:-1].ravel()


def _drive_coefficients(p: PhysicalParams, ramp: RampSchedule | None):
    if ramp is None:
        return complex(p.F), 0.0
    return complex(ramp.F_start), float(ramp.rate)


def _pad(psi: np.ndarray, trunc: ModeTruncation) -> np.ndarray:
    xp = np.zeros((trunc.shape[0] + 2, trunc.shape[1] + 2), complex)
    xp[1:-1, 1:-1] = np.asarray(psi, complex).reshape(trunc.shape)
    return xp


def _jump_inplace(xp: np.ndarray, channel: int) -> None:
    m1, m2 = xp.shape[0] - 2, xp.shape[1] - 2
    inner = xp[1:-1, 1:-1]
    if channel == 1:
        s = np.sqrt(np.arange(1, m1, dtype=float))[:, None]
        inner[:-1, :] = s * inner[1:, :]
        inner[-1, :] = 0
    else:
        s = np.sqrt(np.arange(1, m2, dtype=float))[None, :]
        inner[:, :-1] = s * inner[:, 1:]
        inner[:, -1] = 0


def _sample(xp: np.ndarray, want_entropy: bool):
    nrm = _kernel.sym_norm2(xp)
    p1, p2 = _kernel.marginals(xp)
    k1 = np.arange(p1.size, dtype=float)
    k2 = np.arange(p2.size, dtype=float)
    n1 = float(k1 @ p1) / nrm
    n2 = float(k2 @ p2) / nrm
    g1 = float((k1 * (k1 - 1)) @ p1) / nrm
    g2 = float((k2 * (k2 - 1)) @ p2) / nrm
    cross = _kernel.cross_moment(xp) / nrm
    O = cross / (n1 * n2) if min(n1, n2) > POPULATION_FLOOR else math.nan
    edge = (p1[-1] + p2[-1]) / nrm
    if want_entropy:
        X = xp[1:-1, 1:-1] / math.sqrt(nrm)
        # both orientations, so that swapping the modes leaves the value bit-identical
        ent = 0.5 * (entropy_from_amplitudes(X) + entropy_from_amplitudes(X.T))
    else:
        ent = math.nan
    return n1, n2, O, g1, g2, ent, edge


def run_trajectory(cfg: TrajectoryConfig) -> TrajectoryRecord:
    """Run one MCWF trajectory; the result is fully determined by ``cfg`` (including its seed)."""
    p, trunc = cfg.params, cfg.trunc
    dg, hop, s1, s2 = _kernel_arrays(p, trunc)
    F0, rate = _drive_coefficients(p, cfg.ramp)
    rng = np.random.Generator(np.random.Philox(int(cfg.seed)))

    n_samples = int(math.floor(cfg.t_final / cfg.sample_interval + 1e-9)) + 1
    times = np.arange(n_samples) * cfg.sample_interval
    cols = {k: np.empty(n_samples) for k in SAMPLE_COLUMNS[1:]}
    jumps: list[JumpEvent] = []
    xp = _pad(cfg.initial_state, trunc)
    max_edge = 0.0

    def draw():
        # r in (0, 1]; r = 0 would never trigger a jump
        return 1.0 - rng.random()

    t = 0.0
    r = draw()
    k = 0
    while k < n_samples:
        t_stop = times[k]
        if t < t_stop:
            t, status = _kernel.advance(xp, t, t_stop, cfg.dt, r, dg, hop, F0, rate, s1, s2, cfg.jump_time_tol)
            if status == _kernel.STATUS_UNSTABLE:
                raise StepSizeFailure(
                    f"norm grew or became non-finite near t={t:.6g}; dt={cfg.dt} is too large "
                    f"for this truncation (try dt <= {max_stable_dt(p, trunc, cfg.ramp, cfg.t_final):.3g})")
            if status == _kernel.STATUS_JUMP:
                channel = _choose_channel(xp, rng, cfg.channel_order)
                _jump_inplace(xp, channel)
                xp /= math.sqrt(_kernel.sym_norm2(xp))
                jumps.append(JumpEvent(float(t), channel))
                r = draw()
                continue
        n1, n2, O, g1, g2, ent, edge = _sample(xp, cfg.compute_entropy)
        max_edge = max(max_edge, edge)
        if edge > cfg.edge_tol:
            raise TruncationOverflow(
                f"population {edge:.3g} on the truncation edge at t={t_stop:.6g} exceeds {cfg.edge_tol:g} "
                f"(n_max={trunc.n_max_1},{trunc.n_max_2}, <n1>={n1:.3g}, <n2>={n2:.3g}); increase n_max")
        for name, v in zip(("n1", "n2", "O", "g2m1", "g2m2", "entropy"), (n1, n2, O, g1, g2, ent)):
            cols[name][k] = v
        k += 1

    if cfg.ramp is not None:
        drive = cfg.ramp.drive(times)
    else:
        drive = np.full(n_samples, complex(p.F).real)
    return TrajectoryRecord(t=times, drive=drive, jumps=jumps, seed=int(cfg.seed),
                            config_digest=cfg.digest(), max_edge_population=max_edge, **cols)


def _choose_channel(xp: np.ndarray, rng: np.random.Generator, order) -> int:
    p1, p2 = _kernel.marginals(xp)
    pops = {1: float(np.arange(p1.size) @ p1), 2: float(np.arange(p2.size) @ p2)}
    total = pops[1] + pops[2]
    if total <= 0:
        raise TrajectoryError("norm decayed but the state holds no photons")
    u = rng.random() * total
    return order[0] if u < pops[order[0]] else order[1]


def max_stable_dt(p: PhysicalParams, trunc: ModeTruncation, ramp: RampSchedule | None = None,
                  t_final: float = 0.0, safety: float = 0.9) -> float:
    """Largest RK4 step that keeps every mode of ``H_eff`` inside the stability region.

    Uses the spectral radius of ``H_eff`` at the strongest drive reached by the run.
    """
    import scipy.sparse.linalg as sla

    F = p.F if ramp is None else max(abs(ramp.drive(0.0)), abs(ramp.drive(t_final)))
    H = build_effective_hamiltonian(p.with_drive(F), trunc).matrix
    if H.shape[0] <= 400:
        rho = np.abs(np.linalg.eigvals(H.toarray())).max()
    else:
        rho = np.abs(sla.eigs(H, k=1, which="LM", return_eigenvectors=False, tol=1e-3)).max()
    return safety * RK4_IMAG_LIMIT / rho


# ---------------------------------------------------------------------------
# ensembles


@dataclass(eq=False)
class EnsembleResult:
    records: list[TrajectoryRecord]
    t: np.ndarray
    mean_n1: np.ndarray
    mean_n2: np.ndarray
    sem_n1: np.ndarray
    sem_n2: np.ndarray
    seeds: list[int] = field(default_factory=list)


def default_threads() -> int:
    env = os.environ.get("DIMER_THREADS")
    return max(1, int(env)) if env else 1


def run_ensemble(cfg: TrajectoryConfig, n_traj: int, base_seed: int, threads: int | None = None) -> EnsembleResult:
    """Trajectory ``k`` uses seed ``base_seed + k``; aggregation is by index, so results
    do not depend on the number of worker threads."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    threads = default_threads() if threads is None else max(1, int(threads))
    seeds = [int(base_seed) + k for k in range(n_traj)]

    def one(k):
        try:
            return run_trajectory(cfg.replace(seed=seeds[k]))
        except TrajectoryError as exc:
            raise TrajectoryError(f"trajectory {k} (seed {seeds[k]}) failed: {exc}") from exc

    if threads == 1:
        records = [one(k) for k in range(n_traj)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(n_traj)))
    n1 = np.stack([r.n1 for r in records])
    n2 = np.stack([r.n2 for r in records])
    denom = math.sqrt(n_traj)
    ddof = 1 if n_traj > 1 else 0
    return EnsembleResult(
        records=records, t=records[0].t,
        mean_n1=n1.mean(axis=0), mean_n2=n2.mean(axis=0),
        sem_n1=n1.std(axis=0, ddof=ddof) / denom, sem_n2=n2.std(axis=0, ddof=ddof) / denom,
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# master-equation oracle


class TraceDrift(TrajectoryError):
    pass


def master_equation_evolve(p: PhysicalParams, trunc: ModeTruncation, rho0: np.ndarray, t_final: float,
                           dt: float, *, checkpoints=None, trace_tol: float = 1e-8):
    """RK4 integration of the Lindblad equation.

    Returns the density matrix at ``t_final``; with ``checkpoints`` (increasing
    times in ``[0, t_final]``) returns ``(rho_final, [rho(t_c) ...])``.  The
    trace must stay within ``trace_tol`` per unit time of its initial value.
    """
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (trunc.dim, trunc.dim):
        raise ValueError(f"rho0 has shape {rho.shape}, expected {(trunc.dim, trunc.dim)}")
    if trunc.dim > 1600:
        raise ValueError("master_equation_evolve is an oracle for dim <= 1600")
    Heff = build_effective_hamiltonian(p, trunc).matrix
    a = [mode_annihilator(trunc, m).matrix for m in (1, 2)]
    ad = [x.conj().T.tocsr() for x in a]
    tr0 = np.trace(rho).real

    def rhs(r):
        h = Heff @ r
        out = -1j * (h - h.conj().T)
        for L, Ld in zip(a, ad):
            out = out + p.gamma * (L @ (r @ Ld))
        return out

    stops = sorted(set([float(t_final)] + [float(c) for c in (checkpoints or [])]))
    snaps = {}
    t = 0.0
    if stops and stops[0] == 0.0:
        snaps[0.0] = rho.copy()
    for stop in stops:
        n = max(1, int(math.ceil((stop - t) / dt - 1e-9)))
        h = (stop - t) / n if stop > t else 0.0
        for _ in range(n if stop > t else 0):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * h * k1)
            k3 = rhs(rho + 0.5 * h * k2)
            k4 = rhs(rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = stop
        drift = abs(np.trace(rho).real - tr0)
        if drift > trace_tol * max(t, 1.0):
            raise TraceDrift(f"trace drifted by {drift:.3g} by t={t:g}")
        rho = 0.5 * (rho + rho.conj().T)
        snaps[stop] = rho.copy()
    if checkpoints is None:
        return rho
    return rho, [snaps[float(c)] for c in checkpoints]


def master_equation_populations(p: PhysicalParams, trunc: ModeTruncation, rho0: np.ndarray, times, dt: float):
    """``<n1>(t), <n2>(t)`` from the master equation at the given times."""
    _, snaps = master_equation_evolve(p, trunc, rho0, max(times), dt, checkpoints=list(times))
    N1 = number_operator(trunc, 1).matrix
    N2 = number_operator(trunc, 2).matrix
    n1 = np.array([np.trace(N1 @ r).real for r in snaps])
    n2 = np.array([np.trace(N2 @ r).real for r in snaps])
    return n1, n2


def hermitian_part_check(p: PhysicalParams, trunc: ModeTruncation) -> float:
    """Largest entry of ``H - H^dagger`` (zero up to rounding)."""
    H = build_hermitian_hamiltonian(p, trunc).matrix
    d = H - H.conj().T
    return float(abs(d).max()) if d.nnz else 0.0


# ---------------------------------------------------------------------------
# adaptive truncation


def initial_cutoff_guess(photons: float) -> int:
    """Cutoff that leaves a few standard deviations of Poisson-like headroom above ``photons``."""
    return int(math.ceil(photons + 5.0 * math.sqrt(max(photons, 1.0)) + 5))


def choose_truncation(p: PhysicalParams, *, photons: float | None = None, t_pilot: float = 40.0,
                      dt: float | None = None, seed: int = 0, threshold: float = 1e-6,
                      ramp: RampSchedule | None = None, n_start: int | None = None,
                      max_rounds: int = 8) -> ModeTruncation:
    """Grow ``n_max`` by 25% until a pilot trajectory keeps the edge population below ``threshold``.

    ``photons`` is the expected largest mean photon number (e.g. ``mu`` times the
    largest semiclassical intensity); it seeds the first guess.
    """
    if n_start is None:
        if photons is None:
            photons = _semiclassical_photon_estimate(p, ramp, t_pilot)
        n_start = initial_cutoff_guess(photons)
    n = max(2, int(n_start))
    for _ in range(max_rounds):
        trunc = ModeTruncation(n, n)
        step = dt if dt is not None else min(0.002, max_stable_dt(p, trunc, ramp, t_pilot))
        cfg = TrajectoryConfig(params=p, trunc=trunc, t_final=t_pilot, dt=step,
                               sample_interval=min(0.1, t_pilot), seed=seed, ramp=ramp,
                               edge_tol=1.0, compute_entropy=False)
        rec = run_trajectory(cfg)
        log.debug("pilot n_max=%d: max edge population %.3g", n, rec.max_edge_population)
        if rec.max_edge_population < threshold:
            return trunc
        n = int(math.ceil(1.25 * n))
    raise TruncationOverflow(f"no adequate truncation found up to n_max={n}")


def _semiclassical_photon_estimate(p: PhysicalParams, ramp, t_final) -> float:
    from .semiclassical import max_equilibrium_intensity, scaled_params

    F = p.F if ramp is None else max(ramp.drive(0.0), ramp.drive(t_final))
    q = scaled_params(p.with_drive(F))
    return p.mu * max_equilibrium_intensity(q)
