"""``dimer`` command-line entry point.

Subcommands: sweep, trajectory, ensemble, ramp, stats, indicators.  Each run
writes plot-ready CSV/NDJSON files plus ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config, preset_names
from .hilbert import ModeTruncation, PhysicalParams
from .io import (
    RunManifest,
    atomic_write_text,
    read_trajectory_csv,
    write_bifurcations_csv,
    write_branches_csv,
    write_csv,
    write_cycles_csv,
    write_histogram1d_csv,
    write_histogram2d_csv,
    write_jumps_ndjson,
    write_spectrum_csv,
    write_trajectory_csv,
)
from .observables import averaged_g2, time_average
from .semiclassical import ScaledParams, compute_diagram, integrate_orbit, max_equilibrium_intensity, scaled_params
from .semiclassical.model import physical_drive
from .stats import (
    count_switches,
    default_hysteresis,
    dominant_frequency,
    histogram1d_scaled,
    histogram2d,
    local_maxima,
    power_spectrum,
    symmetrize_points,
)
from .trajectory import (
    INTEGRATOR,
    PRNG_ALGORITHM,
    RampSchedule,
    TrajectoryConfig,
    TrajectoryError,
    choose_truncation,
    initial_cutoff_guess,
    max_stable_dt,
    run_ensemble,
    run_trajectory,
)

log = logging.getLogger("bhdimer")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_RUN = 3

# seconds per grid element per H application, measured on the compiled kernel
KERNEL_COST = 4.5e-9


# -- run planning ------------------------------------------------------------------

@dataclass(frozen=True)
class RunPlan:
    mu: float
    f: float | None
    params: PhysicalParams
    trunc: ModeTruncation
    dt: float
    ramp: RampSchedule | None = None

    @property
    def tag(self) -> str:
        f = "ramp" if self.ramp is not None else f"f{self.f:g}" if self.f is not None else f"F{self.params.F.real:g}"
        return f"mu{self.mu:g}_{f}"

    def describe(self) -> dict:
        return {
            "mu": self.mu, "f": self.f, "F": complex(self.params.F).real,
            "U": self.params.U, "n_max": self.trunc.n_max_1, "dt": self.dt,
            "ramp": None if self.ramp is None else {"rate": self.ramp.rate, "F_start": self.ramp.F_start},
        }


def estimate_seconds(n_max: int, t_final: float, dt: float, n_traj: int = 1) -> float:
    # four H applications per step, plus roughly half again for jump-time searches
    return 1.5 * 4 * (n_max + 1) ** 2 * KERNEL_COST * (t_final / dt) * n_traj


def _transient_peak(q: ScaledParams, t: float = 30.0) -> float:
    """Largest intensity reached by the mean-field orbit from the origin (the vacuum start)."""
    _, us = integrate_orbit(np.zeros(4), q, t, 0.01)
    return float(max((us[:, 0] ** 2 + us[:, 1] ** 2).max(), (us[:, 2] ** 2 + us[:, 3] ** 2).max()))


def plan_run(cfg: RunConfig, mu: float, f: float | None, t_final: float, ramp: RampSchedule | None = None,
             seed: int = 0) -> RunPlan:
    tr = cfg.section("trajectory")
    p = cfg.physical_params(mu, f)
    if ramp is not None:
        p = p.with_drive(ramp.F_start)
    if tr["n_max"] is not None:
        trunc = ModeTruncation(tr["n_max"], tr["n_max"])
    else:
        F_top = ramp.drive(t_final) if ramp is not None else complex(p.F).real
        q = scaled_params(p.with_drive(F_top))
        photons = mu * max(max_equilibrium_intensity(q), _transient_peak(q))
        trunc = choose_truncation(p, ramp=ramp, n_start=initial_cutoff_guess(photons),
                                  threshold=min(1e-6, tr["edge_tol"]), seed=seed,
                                  t_pilot=min(40.0, t_final))
    if tr["dt"] is not None:
        dt = tr["dt"]
    else:
        dt = min(0.002, max_stable_dt(p, trunc, ramp, t_final))
    return RunPlan(mu, f, p, trunc, dt, ramp)


def _traj_config(cfg: RunConfig, plan: RunPlan, t_final: float, seed: int) -> TrajectoryConfig:
    tr = cfg.section("trajectory")
    return TrajectoryConfig(
        params=plan.params, trunc=plan.trunc, t_final=t_final, dt=plan.dt,
        sample_interval=tr["sample_interval"], seed=seed, jump_time_tol=tr["jump_time_tol"],
        ramp=plan.ramp, edge_tol=tr["edge_tol"], compute_entropy=tr["compute_entropy"],
    )


def _heavy_gate(cfg: RunConfig, plan: RunPlan, t_final: float, n_traj: int, manifest: RunManifest) -> bool:
    """True when the run may proceed; heavy runs print their cost first and need ``--heavy``."""
    if plan.mu < cfg.data["heavy_mu"]:
        return True
    secs = estimate_seconds(plan.trunc.n_max_1, t_final, plan.dt, n_traj)
    msg = f"{plan.tag}: n_max={plan.trunc.n_max_1}, dt={plan.dt:.3g}, estimated {secs / 3600:.2f} CPU hours"
    print(msg, file=sys.stderr)
    if not cfg.data["heavy"]:
        print(f"{plan.tag}: skipped; pass --heavy to run it", file=sys.stderr)
        manifest.notes.append(f"skipped heavy run {plan.tag} ({msg})")
        return False
    return True


def _write_run(out: Path, plan: RunPlan, records, manifest: RunManifest, extra: dict | None = None) -> Path:
    run_dir = out / plan.tag
    for k, rec in enumerate(records):
        s = write_trajectory_csv(run_dir / f"samples_{k}.csv", rec)
        j = write_jumps_ndjson(run_dir / f"jumps_{k}.ndjson", rec.jumps)
        manifest.record_output(str(s.relative_to(out)), s)
        manifest.record_output(str(j.relative_to(out)), j)
    meta = {**plan.describe(), "seeds": [r.seed for r in records], **(extra or {})}
    m = atomic_write_text(run_dir / "run.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    manifest.record_output(str(m.relative_to(out)), m)
    manifest.truncations[plan.tag] = [plan.trunc.n_max_1, plan.trunc.n_max_2]
    return run_dir


# -- commands ------------------------------------------------------------------------

def _managed(fn):
    """Write the manifest before the run and finalize it afterwards, also on failure."""

    @functools.wraps(fn)
    def run(cfg: RunConfig) -> dict:
        out = Path(cfg.data["out"])
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(cfg.command, cfg.to_json(), PRNG_ALGORITHM, INTEGRATOR)
        if cfg.overrides:
            manifest.notes.append({"flag_overrides": cfg.overrides, "sources": cfg.source})
        manifest.write(out / "manifest.json")
        try:
            result = fn(cfg, out, manifest)
        except BaseException as exc:
            manifest.notes.append(f"{type(exc).__name__}: {exc}")
            manifest.finalize(out / "manifest.json", status="failed")
            raise
        manifest.finalize(out / "manifest.json")
        return result

    return run


@_managed
def cmd_sweep(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    p = cfg.physical_params(1.0, 0.0)
    q = scaled_params(p)
    sw = cfg.section("sweep")
    diagram = compute_diagram(q, sw["f_max"], n_cycles=sw["n_cycles"])
    for name, writer, obj in (
        ("branches.csv", write_branches_csv, diagram.branches()),
        ("bifurcations.csv", write_bifurcations_csv, diagram.bifurcations),
        ("cycles.csv", write_cycles_csv, diagram.cycles),
    ):
        path = writer(out / name, obj)
        manifest.record_output(name, path)
    return {"bifurcations": [(b.kind, b.f) for b in diagram.bifurcations]}


@_managed
def cmd_trajectory(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    t_final = cfg.section("trajectory")["t_final"]
    runs = []
    for mu in cfg.mu_values():
        for f in cfg.f_values():
            plan = plan_run(cfg, mu, f, t_final, seed=cfg.data["base_seed"])
            if not _heavy_gate(cfg, plan, t_final, 1, manifest):
                continue
            rec = run_trajectory(_traj_config(cfg, plan, t_final, cfg.data["base_seed"]))
            runs.append(str(_write_run(out, plan, [rec], manifest)))
    return {"runs": runs}


@_managed
def cmd_ensemble(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    tr = cfg.section("trajectory")
    runs = []
    for mu in cfg.mu_values():
        for f in cfg.f_values():
            plan = plan_run(cfg, mu, f, tr["t_final"], seed=cfg.data["base_seed"])
            if not _heavy_gate(cfg, plan, tr["t_final"], tr["n_traj"], manifest):
                continue
            ens = run_ensemble(_traj_config(cfg, plan, tr["t_final"], cfg.data["base_seed"]),
                               tr["n_traj"], cfg.data["base_seed"], cfg.data["threads"])
            run_dir = _write_run(out, plan, ens.records, manifest)
            path = write_csv(run_dir / "ensemble_mean.csv", ("t", "mean_n1", "mean_n2", "sem_n1", "sem_n2"),
                             zip(ens.t, ens.mean_n1, ens.mean_n2, ens.sem_n1, ens.sem_n2))
            manifest.record_output(str(path.relative_to(out)), path)
            runs.append(str(run_dir))
    return {"runs": runs}


@_managed
def cmd_ramp(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    rp = cfg.section("ramp")
    ramp = RampSchedule(rate=rp["rate"], F_start=rp["F_start"])
    t_final = (rp["F_end"] - rp["F_start"]) / rp["rate"]
    if t_final <= 0:
        raise ConfigError("ramp: F_end must exceed F_start")
    runs = []
    for mu in cfg.mu_values():
        plan = plan_run(cfg, mu, None, t_final, ramp=ramp, seed=cfg.data["base_seed"])
        if not _heavy_gate(cfg, plan, t_final, 1, manifest):
            continue
        rec = run_trajectory(_traj_config(cfg, plan, t_final, cfg.data["base_seed"]))
        run_dir = _write_run(out, plan, [rec], manifest, {"t_final": t_final})
        per_f = math.sqrt(mu) * physical_drive(1.0, cfg.data["params"]["U"], plan.params.gamma)
        path = write_csv(run_dir / "drive.csv", ("t", "F_mu", "f"), zip(rec.t, rec.drive, rec.drive / per_f))
        manifest.record_output(str(path.relative_to(out)), path)
        runs.append(str(run_dir))
    return {"runs": runs}


def _violin_f_values(cfg: RunConfig, mu: float) -> list[float]:
    v = cfg.section("stats")["violin"]
    ks = np.arange(v["start"], v["stop"] + 1e-9, v["step"])
    # F_mu = k mu, and f = F_mu / sqrt(mu)
    return [float(k * math.sqrt(mu)) for k in ks]


def _load_run(run_dir: Path):
    meta = json.loads((run_dir / "run.json").read_text())
    files = sorted(run_dir.glob("samples_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise ConfigError(f"{run_dir}: no samples_*.csv files")
    return meta, [read_trajectory_csv(p) for p in files]


def _equidistant(series: dict, discard: float, n: int | None):
    keep = np.nonzero(series["t"] > discard)[0]
    if n is not None and keep.size > n:
        keep = keep[np.linspace(0, keep.size - 1, n).round().astype(int)]
    return {k: v[keep] for k, v in series.items()}


def analyse_run(run_dir: Path, cfg: RunConfig, hist_max: float | None = None) -> dict:
    """Histograms, spectra and summary numbers for one run directory."""
    st = cfg.section("stats")
    discard = cfg.section("trajectory")["discard"]
    meta, trajs = _load_run(run_dir)
    mu = meta["mu"]
    parts = [_equidistant(s, discard, st["n_samples"]) for s in trajs]
    n1 = np.concatenate([p["n1"] for p in parts])
    n2 = np.concatenate([p["n2"] for p in parts])
    if hist_max is None:
        hist_max = st["hist_max"] or 1.1 * mu * max_equilibrium_intensity(ScaledParams(f=22.0))
    pts = np.column_stack([n1, n2])
    if st["symmetrize"]:
        pts = symmetrize_points(pts)
    h2 = histogram2d(pts, (0.0, hist_max), n_bins=st["hist_bins"])
    write_histogram2d_csv(run_dir / "hist2d.csv", h2)
    hn = histogram1d_scaled(pts[:, 0], (0.0, hist_max), st["d_bins"], st["target_max"] * mu)
    write_histogram1d_csv(run_dir / "hist_n.csv", hn)
    d = pts[:, 0] - pts[:, 1]
    hd = histogram1d_scaled(d, (-hist_max, hist_max), st["d_bins"], st["target_max"] * mu)
    write_histogram1d_csv(run_dir / "hist_D.csv", hd)
    summary = {"mu": mu, "f": meta["f"], "n_points": int(pts.shape[0]), "overflow": h2.overflow,
               "peaks": [[float(c) for c in ij] for ij in _peak_positions(h2)]}
    freqs = []
    for k, s in enumerate(trajs):
        w = s["t"] > discard
        spec = power_spectrum(s["n1"][w] + s["n2"][w], t=s["t"][w], window=st["window"])
        write_spectrum_csv(run_dir / f"spectrum_{k}.csv", spec)
        freqs.append(dominant_frequency(spec, (0.1, 0.5 / spec.dt)))
    summary["dominant_frequency"] = freqs
    summary["mean_O"] = [time_average(s["t"], s["O"], discard)[0] for s in trajs]
    if meta["f"] is not None:
        try:
            h = default_hysteresis(meta["f"], mu)
            summary["hysteresis"] = h
            summary["switches"] = [count_switches(s["n1"][s["t"] > discard] - s["n2"][s["t"] > discard], h)
                                   for s in trajs]
        except ValueError:
            pass
    atomic_write_text(run_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"dir": run_dir, "summary": summary, "hist_n": hn, "hist_D": hd}


def _peak_positions(h2):
    cx, cy = h2.centres()
    return [(cx[i], cy[j]) for i, j in local_maxima(h2.counts)]


@_managed
def cmd_stats(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    st = cfg.section("stats")
    tr = cfg.section("trajectory")
    if st["inputs"]:
        run_dirs = [Path(p) for p in st["inputs"]]
        for d in run_dirs:
            if not (d / "run.json").is_file():
                raise ConfigError(f"stats input {d} is not a run directory (no run.json)")
    else:
        run_dirs = []
        for mu in cfg.mu_values():
            fs = _violin_f_values(cfg, mu) if st["violin"]["enabled"] else cfg.f_values()
            for f in fs:
                plan = plan_run(cfg, mu, f, tr["t_final"], seed=cfg.data["base_seed"])
                if not _heavy_gate(cfg, plan, tr["t_final"], tr["n_traj"], manifest):
                    continue
                ens = run_ensemble(_traj_config(cfg, plan, tr["t_final"], cfg.data["base_seed"]),
                                   tr["n_traj"], cfg.data["base_seed"], cfg.data["threads"])
                run_dirs.append(_write_run(out, plan, ens.records, manifest))
    results = [analyse_run(d, cfg) for d in run_dirs]
    violin_rows = []
    for r in results:
        s = r["summary"]
        F_mu = None if s["f"] is None else s["f"] * math.sqrt(s["mu"])
        for name in ("hist_n", "hist_D"):
            h = r[name]
            for c, v in zip(h.centres(), h.values):
                violin_rows.append((s["mu"], F_mu, name[5:], c, v))
    path = write_csv(out / "violin.csv", ("mu", "F_mu", "observable", "centre", "value"), violin_rows)
    manifest.record_output("violin.csv", path)
    for r in results:
        for p in sorted(Path(r["dir"]).glob("*")):
            if p.suffix in (".csv", ".json") and p.name.startswith(("hist", "spectrum", "summary")):
                try:
                    key = str(p.relative_to(out))
                except ValueError:
                    key = str(p)
                manifest.record_output(key, p)
    return {"runs": [str(r["dir"]) for r in results]}


@_managed
def cmd_indicators(cfg: RunConfig, out: Path, manifest: RunManifest) -> dict:
    ind = cfg.section("indicators")
    discard = cfg.section("trajectory")["discard"]
    fs = np.arange(ind["f_start"], ind["f_stop"] + 1e-9, ind["f_step"])
    rows = []
    idx = 0
    for mu in ind["mu_values"]:
        for f in fs:
            seed = cfg.data["base_seed"] + idx
            idx += 1
            plan = plan_run(cfg, mu, float(f), ind["t_final"], seed=seed)
            if not _heavy_gate(cfg, plan, ind["t_final"], 1, manifest):
                continue
            cfg_t = _traj_config(cfg, plan, ind["t_final"], seed)
            if not cfg_t.compute_entropy:
                cfg_t = cfg_t.replace(compute_entropy=True)
            rec = run_trajectory(cfg_t)
            g1, _ = averaged_g2(rec.t, rec.g2m1, rec.n1, discard)
            g2, _ = averaged_g2(rec.t, rec.g2m2, rec.n2, discard)
            ent, _ = time_average(rec.t, rec.entropy, discard)
            rows.append((mu, complex(plan.params.F).real, min(g1, g2), ent))
            manifest.truncations[plan.tag] = [plan.trunc.n_max_1, plan.trunc.n_max_2]
            log.info("mu=%g f=%g: g2min=%.4f E=%.4f", mu, f, min(g1, g2), ent)
    path = write_csv(out / "indicators.csv", ("mu", "F_mu", "g2min", "entropy"), rows)
    manifest.record_output("indicators.csv", path)
    return {"rows": len(rows)}


COMMANDS = {
    "sweep": cmd_sweep,
    "trajectory": cmd_trajectory,
    "ensemble": cmd_ensemble,
    "ramp": cmd_ramp,
    "stats": cmd_stats,
    "indicators": cmd_indicators,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--preset", metavar="NAME", help=f"built-in recipe ({', '.join(preset_names())})")
    common.add_argument("--seed", type=int, metavar="N", help="base seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (default: $DIMER_THREADS or 1)")
    common.add_argument("--heavy", action="store_true", default=None, help="allow large-mu runs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"base_seed": args.seed, "out": args.out, "threads": args.threads, "heavy": args.heavy}
    try:
        cfg = parse_config(args.config, preset=args.preset, overrides=overrides, command=args.command)
        result = COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"dimer: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajectoryError as exc:
        print(f"dimer: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(json.dumps(result, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
