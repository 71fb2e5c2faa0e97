import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhdimer.hilbert import (
    PhysicalParams,
    basis_state,
    build_effective_hamiltonian,
    density_matrix,
    make_truncation,
    number_operator,
    swap_permutation,
    vacuum,
)
from bhdimer.trajectory import (
    RampSchedule,
    StepSizeFailure,
    TraceDrift,
    TrajectoryConfig,
    TrajectoryError,
    TruncationOverflow,
    choose_truncation,
    evolve_segment,
    find_jump_time,
    master_equation_evolve,
    master_equation_populations,
    max_stable_dt,
    perform_jump,
    run_ensemble,
    run_trajectory,
)

DECAY = PhysicalParams(J=0.0, Delta=0.0, U=0.0, gamma=2.0, F=0.0)
LINEAR = PhysicalParams(J=0.0, Delta=4.5, U=0.0, gamma=2.0, F=1.0)
STUDY = PhysicalParams(J=-3.5, Delta=4.5, U=0.5, gamma=2.0, F=1.0)


def _norm2(psi):
    return float(np.vdot(psi, psi).real)


# -- evolve_segment ------------------------------------------------------------

def test_vacuum_is_stationary_without_drive():
    tr = make_truncation(3, 3)
    H = build_effective_hamiltonian(STUDY.with_drive(0.0), tr)
    assert np.array_equal(evolve_segment(vacuum(tr), H, 0.01), vacuum(tr))


def test_single_photon_decay():
    tr = make_truncation(2, 2)
    H = build_effective_hamiltonian(DECAY, tr)
    psi = basis_state(tr, 1, 0)
    for _ in range(10):
        psi = evolve_segment(psi, H, 0.01)
    assert _norm2(psi) == pytest.approx(math.exp(-0.2), abs=1e-10)


def test_evolve_segment_rejects_bad_dt():
    tr = make_truncation(1, 1)
    with pytest.raises(ValueError):
        evolve_segment(vacuum(tr), build_effective_hamiltonian(DECAY, tr), 0.0)


def test_evolve_segment_flags_nonfinite():
    tr = make_truncation(6, 6)
    H = build_effective_hamiltonian(STUDY.with_drive(1e300), tr)
    with pytest.raises(StepSizeFailure):
        evolve_segment(vacuum(tr), H, 1e10)


def _integrate(psi, H, T, dt):
    for _ in range(int(round(T / dt))):
        psi = evolve_segment(psi, H, dt)
    return psi


def test_rk4_fourth_order():
    tr = make_truncation(4, 4)
    H = build_effective_hamiltonian(STUDY, tr)
    psi0 = basis_state(tr, 1, 0)
    ref = _integrate(psi0, H, 1.0, 0.001)
    e1 = np.linalg.norm(_integrate(psi0, H, 1.0, 0.02) - ref)
    e2 = np.linalg.norm(_integrate(psi0, H, 1.0, 0.01) - ref)
    assert 14 < e1 / e2 < 18


def test_norm_non_increasing_at_default_dt():
    tr = make_truncation(5, 5)
    H = build_effective_hamiltonian(STUDY, tr)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=tr.dim) + 1j * rng.normal(size=tr.dim)
    psi /= np.linalg.norm(psi)
    for _ in range(200):
        nxt = evolve_segment(psi, H, 0.002)
        assert _norm2(nxt) <= _norm2(psi) + 1e-9
        psi = nxt


# -- find_jump_time ------------------------------------------------------------

def _decayed(t0):
    tr = make_truncation(2, 2)
    H = build_effective_hamiltonian(DECAY, tr)
    psi = _integrate(basis_state(tr, 1, 0), H, t0, 0.001) if t0 else basis_state(tr, 1, 0)
    return psi, H


def test_jump_time_half_norm():
    psi, H = _decayed(0.3)
    t = find_jump_time(psi, H, 0.3, 0.1, 0.5, tol=1e-9)
    assert t == pytest.approx(math.log(2) / 2, abs=1e-6)


def test_jump_time_e_minus_two():
    psi, H = _decayed(0.95)
    t = find_jump_time(psi, H, 0.95, 0.1, math.exp(-2), tol=1e-9)
    assert t == pytest.approx(1.0, abs=1e-6)


def test_jump_time_r_near_one():
    psi, H = _decayed(0.0)
    t = find_jump_time(psi, H, 0.0, 0.01, 1 - 1e-9, tol=1e-9)
    assert 0.0 < t < 1e-6


def test_jump_time_needs_bracket():
    psi, H = _decayed(0.0)
    with pytest.raises(ValueError):
        find_jump_time(psi, H, 0.0, 0.01, 0.5)


# -- perform_jump -------------------------------------------------------------

def test_jump_from_single_photon():
    tr = make_truncation(2, 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        out, ch = perform_jump(basis_state(tr, 1, 0), tr, rng)
        assert ch == 1
        assert np.array_equal(out, vacuum(tr))


@pytest.mark.parametrize("c1,c2,p1", [(1, 1, 0.5), (math.sqrt(3), 1, 0.75)])
def test_jump_channel_probabilities(c1, c2, p1):
    tr = make_truncation(2, 2)
    psi = (c1 * basis_state(tr, 1, 0) + c2 * basis_state(tr, 0, 1)) / 2 ** (1 if c1 != 1 else 0.5)
    rng = np.random.default_rng(42)
    n = 4000
    hits = sum(perform_jump(psi, tr, rng)[1] == 1 for _ in range(n))
    assert abs(hits / n - p1) < 4 * math.sqrt(p1 * (1 - p1) / n)


def test_jump_needs_photons():
    tr = make_truncation(2, 2)
    with pytest.raises(TrajectoryError):
        perform_jump(vacuum(tr), tr, np.random.default_rng(0))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_post_jump_norm(seed):
    tr = make_truncation(4, 3)
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=tr.dim) + 1j * rng.normal(size=tr.dim)
    psi *= rng.uniform(0.1, 1.0) / np.linalg.norm(psi)
    out, _ = perform_jump(psi, tr, rng)
    assert abs(_norm2(out) - 1.0) < 1e-12


# -- run_trajectory -------------------------------------------------------------

def _cfg(**kw):
    base = dict(params=STUDY, trunc=make_truncation(9, 9), t_final=10.0, dt=0.002, sample_interval=0.1, seed=5)
    base.update(kw)
    return TrajectoryConfig(**base)


def test_dark_vacuum():
    rec = run_trajectory(_cfg(params=STUDY.with_drive(0.0)))
    assert rec.jumps == []
    assert not rec.n1.any() and not rec.n2.any()


def test_determinism():
    a = run_trajectory(_cfg())
    b = run_trajectory(_cfg())
    assert a.same_as(b)
    assert len(a.jumps) > 0
    c = run_trajectory(_cfg(seed=6))
    assert not a.same_as(c)


def test_record_invariants():
    rec = run_trajectory(_cfg())
    assert np.allclose(np.diff(rec.t), 0.1)
    assert rec.t[-1] == pytest.approx(10.0)
    assert np.all(rec.n1 >= 0) and np.all(rec.n1 <= 9)
    assert np.all(rec.n2 >= 0) and np.all(rec.n2 <= 9)
    times = [j.t for j in rec.jumps]
    assert times == sorted(times)
    assert all(0 <= t <= 10.0 for t in times)
    assert {j.channel for j in rec.jumps} <= {1, 2}
    assert np.all(rec.entropy >= 0)


def test_z2_covariance():
    tr = make_truncation(9, 9)
    rng = np.random.default_rng(11)
    grid = np.zeros(tr.shape, complex)
    grid[:4, :4] = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    psi = grid.ravel() / np.linalg.norm(grid)
    a = run_trajectory(_cfg(initial_state=psi, channel_order=(1, 2)))
    b = run_trajectory(_cfg(initial_state=psi[swap_permutation(tr)], channel_order=(2, 1)))
    assert len(a.jumps) > 5
    assert np.array_equal(a.n1, b.n2) and np.array_equal(a.n2, b.n1)
    assert np.array_equal(a.g2m1, b.g2m2) and np.array_equal(a.g2m2, b.g2m1)
    assert np.array_equal(a.O, b.O, equal_nan=True)
    assert np.array_equal(a.entropy, b.entropy)
    assert [j.t for j in a.jumps] == [j.t for j in b.jumps]
    assert [j.channel for j in a.jumps] == [3 - j.channel for j in b.jumps]


def test_ramp_drive_exactly_linear():
    ramp = RampSchedule(rate=0.216, F_start=0.1)
    rec = run_trajectory(_cfg(ramp=ramp, t_final=5.0, params=STUDY.with_drive(0.0)))
    assert np.array_equal(rec.drive, 0.1 + 0.216 * rec.t)


def test_ramp_validation():
    with pytest.raises(ValueError):
        _cfg(ramp=RampSchedule(rate=-1.0, F_start=1.0), t_final=5.0)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=0.5, sample_interval=0.1), dict(jump_time_tol=0.01),
                                dict(channel_order=(1, 1)), dict(initial_state=np.ones(49))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


def test_truncation_overflow_guard():
    with pytest.raises(TruncationOverflow):
        run_trajectory(_cfg(trunc=make_truncation(2, 2), params=STUDY.with_drive(3.0)))


def test_unstable_step_detected():
    tr = make_truncation(9, 9)
    dt = 3 * max_stable_dt(STUDY, tr)
    with pytest.raises(StepSizeFailure):
        run_trajectory(_cfg(dt=dt, sample_interval=max(dt, 0.1)))


def test_linear_cavity_steady_state():
    tr = make_truncation(4, 4)
    ens = run_ensemble(_cfg(params=LINEAR, trunc=tr, t_final=15.0, sample_interval=0.5,
                            compute_entropy=False), n_traj=200, base_seed=100)
    keep = ens.t > 5.0
    per_traj = np.array([r.n1[keep].mean() for r in ens.records])
    mean = per_traj.mean()
    sem = per_traj.std(ddof=1) / math.sqrt(per_traj.size)
    assert abs(mean - 1 / 21.25) < 3 * sem + 1e-4


# -- ensembles ------------------------------------------------------------------

def test_ensemble_seeds_and_threads():
    cfg = _cfg(t_final=4.0)
    one = run_ensemble(cfg, 3, base_seed=20, threads=1)
    many = run_ensemble(cfg, 3, base_seed=20, threads=3)
    assert one.seeds == [20, 21, 22]
    assert np.array_equal(one.mean_n1, many.mean_n1) and np.array_equal(one.sem_n2, many.sem_n2)
    assert all(a.same_as(b) for a, b in zip(one.records, many.records))
    jumps = [tuple(j.t for j in r.jumps) for r in one.records]
    assert len(set(jumps)) == 3


def test_ensemble_reports_failing_index():
    cfg = _cfg(trunc=make_truncation(2, 2), params=STUDY.with_drive(3.0), t_final=4.0)
    with pytest.raises(TrajectoryError, match="trajectory 0"):
        run_ensemble(cfg, 2, base_seed=0)


def test_ensemble_needs_trajectories():
    with pytest.raises(ValueError):
        run_ensemble(_cfg(), 0, base_seed=0)


# -- master equation -----------------------------------------------------------------

def test_master_equation_vacuum_fixed():
    tr = make_truncation(2, 2)
    rho0 = density_matrix(vacuum(tr))
    rho = master_equation_evolve(STUDY.with_drive(0.0), tr, rho0, 2.0, 0.01)
    assert np.abs(rho - rho0).max() == 0.0


def test_master_equation_decay():
    tr = make_truncation(2, 2)
    times = [0.0, 0.5, 1.0, 2.0]
    n1, n2 = master_equation_populations(DECAY, tr, density_matrix(basis_state(tr, 1, 0)), times, 0.005)
    np.testing.assert_allclose(n1, np.exp(-2.0 * np.array(times)), atol=1e-9)
    assert not n2.any()


def test_master_equation_linear_cavity():
    tr = make_truncation(5, 1)
    rho = master_equation_evolve(LINEAR, tr, density_matrix(vacuum(tr)), 15.0, 0.005)
    n1 = np.trace(number_operator(tr, 1).to_dense() @ rho).real
    assert n1 == pytest.approx(1 / 21.25, abs=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.floats(-4, 4), st.floats(-5, 5), st.floats(0, 1), st.floats(0.5, 3), st.floats(0, 1.5))
def test_master_equation_trace_and_hermiticity(J, Delta, U, gamma, F):
    tr = make_truncation(3, 3)
    p = PhysicalParams(J=J, Delta=Delta, U=U, gamma=gamma, F=F)
    rho = master_equation_evolve(p, tr, density_matrix(vacuum(tr)), 1.0, 0.002)
    assert abs(np.trace(rho).real - 1.0) < 1e-8
    assert np.abs(rho - rho.conj().T).max() < 1e-10
    assert np.linalg.eigvalsh(rho).min() > -1e-10


def test_master_equation_trace_guard():
    tr = make_truncation(3, 3)
    with pytest.raises(TraceDrift):
        master_equation_evolve(STUDY, tr, density_matrix(vacuum(tr)), 1.0, 0.5, trace_tol=1e-30)


# -- truncation choice ----------------------------------------------------------------

def test_choose_truncation_grows_cutoff():
    p = PhysicalParams.at_drive(2.0)
    tr = choose_truncation(p, n_start=3, t_pilot=10.0, threshold=1e-6)
    assert tr.n_max_1 > 3
    rec = run_trajectory(TrajectoryConfig(params=p, trunc=tr, t_final=10.0, seed=0, edge_tol=1.0,
                                          compute_entropy=False))
    assert rec.max_edge_population < 1e-6
