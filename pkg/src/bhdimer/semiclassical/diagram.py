"""Assembly of the full one-parameter picture in ``f``: branches, bifurcations, cycles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .continuation import (
    BifurcationPoint,
    BranchRecord,
    asymmetric_branch,
    branch_switch_pitchfork,
    detect_bifurcations,
    symmetric_branch,
)
from .cycles import LimitCycle, NotPeriodicError, find_limit_cycle, seed_near
from .model import (
    STUDY_POINT,
    ScaledParams,
    classify,
    intensities,
    jacobian,
    newton_equilibrium,
    sorted_eigenvalues,
    swap,
    symmetric_equilibria,
)

log = logging.getLogger(__name__)

DEFAULT_F_MAX = 22.0


@dataclass
class BifurcationDiagram:
    q: ScaledParams
    symmetric: BranchRecord
    asymmetric: list[BranchRecord]
    bifurcations: list[BifurcationPoint]
    cycles: list[LimitCycle] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[BifurcationPoint]:
        return [b for b in self.bifurcations if b.kind == kind]

    def named(self) -> dict[str, float]:
        """``P1, H1, H2, S1, S2, P2`` (as far as present) ordered by ``f``."""
        out = {}
        for prefix, kind in (("P", "pitchfork"), ("H", "hopf"), ("S", "saddle-node")):
            for i, b in enumerate(self.of_kind(kind), 1):
                out[f"{prefix}{i}"] = b.f
        return out

    def branches(self) -> list[BranchRecord]:
        return [self.symmetric, *self.asymmetric]


@dataclass(frozen=True)
class Equilibrium:
    state: np.ndarray
    eigenvalues: np.ndarray
    stability: str

    @property
    def intensities(self) -> tuple[float, float]:
        return intensities(self.state)


def _dedupe_bifurcations(points):
    """Mirror branches repeat every asymmetric bifurcation; keep one per location."""
    out: list[BifurcationPoint] = []
    for b in sorted(points, key=lambda b: b.f):
        if not any(o.kind == b.kind and abs(o.f - b.f) < 1e-6 for o in out):
            out.append(b)
    return out


def compute_diagram(
    q: ScaledParams = STUDY_POINT,
    f_max: float = DEFAULT_F_MAX,
    n_cycles: int = 0,
    cycle_margin: float = 0.03,
) -> BifurcationDiagram:
    """Symmetric branch, the asymmetric pair born at the first pitchfork, and their bifurcations.

    With ``n_cycles > 0`` periodic orbits are sampled at evenly spaced ``f``
    strictly inside each Hopf interval (``cycle_margin`` is the fraction of the
    interval left out at either end).
    """
    sym = symmetric_branch(q, f_max)
    bifs = detect_bifurcations(sym)
    forks = [b for b in bifs if b.kind == "pitchfork"]
    asym: list[BranchRecord] = []
    if forks:
        seed, _ = branch_switch_pitchfork(forks[0], q)
        branch = asymmetric_branch(seed, forks[0], q, f_max + 1.0)
        asym = [branch, branch.swapped()]
        bifs += detect_bifurcations(branch)
    bifs = _dedupe_bifurcations(bifs)
    diagram = BifurcationDiagram(q, sym, asym, bifs)
    if n_cycles > 0:
        diagram.cycles = sample_cycles(diagram, n_cycles, cycle_margin)
    return diagram


def _hopf_intervals(diagram: BifurcationDiagram):
    h = [b.f for b in diagram.of_kind("hopf")]
    return [(h[i], h[i + 1]) for i in range(0, len(h) - 1, 2)]


def sample_cycles(diagram: BifurcationDiagram, n: int, margin: float = 0.03) -> list[LimitCycle]:
    cycles = []
    for lo, hi in _hopf_intervals(diagram):
        w = hi - lo
        for f in np.linspace(lo + margin * w, hi - margin * w, n):
            u = focus_between_hopfs(diagram, float(f))
            try:
                cycles.append(find_limit_cycle(diagram.q.at(f), seed_near(u, diagram.q.at(f))))
            except NotPeriodicError as exc:
                log.warning("no cycle at f=%.4f: %s", f, exc)
    return cycles


def focus_between_hopfs(diagram: BifurcationDiagram, f: float) -> np.ndarray:
    """The asymmetric equilibrium (site 1 bright) that is unstable between the Hopf points."""
    cands = [e for e in equilibria_at(diagram, f) if e.stability == "saddle-2+"]
    cands = [e for e in cands if e.intensities[0] > e.intensities[1]]
    if not cands:
        raise ValueError(f"no unstable asymmetric focus at f={f}")
    return cands[0].state


def _on_branch(branch: BranchRecord, f: float, q: ScaledParams):
    """Every point of ``branch`` at drive ``f``, from sign changes of ``f_k - f``."""
    out = []
    d = branch.f - f
    for k in range(len(d) - 1):
        if d[k] == 0:
            out.append(branch.states[k])
        elif d[k] * d[k + 1] < 0:
            w = d[k] / (d[k] - d[k + 1])
            guess = branch.states[k] + w * (branch.states[k + 1] - branch.states[k])
            res = newton_equilibrium(guess, q.at(f))
            if res.converged:
                out.append(res.state)
    if d[-1] == 0:
        out.append(branch.states[-1])
    return out


def equilibria_at(diagram: BifurcationDiagram, f: float) -> list[Equilibrium]:
    """All equilibria found on the diagram's branches at drive ``f``, without duplicates."""
    q = diagram.q.at(f)
    states = list(symmetric_equilibria(f, q))
    for br in diagram.asymmetric:
        states += _on_branch(br, f, q)
    uniq: list[np.ndarray] = []
    for u in states:
        if not any(np.linalg.norm(u - v) < 1e-7 for v in uniq):
            uniq.append(u)
    out = []
    for u in sorted(uniq, key=lambda u: (intensities(u)[0], intensities(u)[1])):
        ev = sorted_eigenvalues(jacobian(u, q))
        out.append(Equilibrium(u, ev, classify(ev)))
    return out


def stable_equilibria(diagram: BifurcationDiagram, f: float) -> list[Equilibrium]:
    return [e for e in equilibria_at(diagram, f) if e.stability == "stable"]


@lru_cache(maxsize=64)
def _diagram_cached(delta: float, kappa: float, xi: int, f_max: float) -> BifurcationDiagram:
    return compute_diagram(ScaledParams(delta, kappa, 0.0, xi), f_max)


def max_equilibrium_intensity(q: ScaledParams) -> float:
    """Largest single-site intensity over every equilibrium with drive in ``[0, q.f]``."""
    f = abs(q.f)
    if f == 0:
        return 0.0
    # the asymmetric branch folds back, so it must be traced well past f
    d = _diagram_cached(q.delta, q.kappa, q.xi, max(DEFAULT_F_MAX, float(np.ceil(f)) + 1.0))
    best = 0.0
    for br in d.branches():
        mask = br.f <= f
        if mask.any():
            best = max(best, float(br.intensities[mask].max()))
    # also the exact endpoint
    for e in equilibria_at(d, f):
        best = max(best, *e.intensities)
    return best


def cycle_frequency(q: ScaledParams, diagram: BifurcationDiagram | None = None) -> LimitCycle:
    """Limit cycle at ``q.f`` around the site-1-bright unstable focus."""
    diagram = diagram or _diagram_cached(q.delta, q.kappa, q.xi, DEFAULT_F_MAX)
    u = focus_between_hopfs(diagram, q.f)
    return find_limit_cycle(q, seed_near(u, q))
