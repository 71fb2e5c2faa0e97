"""File formats: trajectory CSV, jump NDJSON, branch/bifurcation/histogram/spectrum CSVs, manifests.

Every writer goes through :func:`atomic_write_text` (temp file + rename) and
formats floats with ``repr`` so files round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_SCHEMA_VERSION = 1
TRAJECTORY_HEADER = ("t", "n1", "n2", "O", "g2m1", "g2m2", "entropy")


class FormatError(ValueError):
    pass


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _csv_text(header, rows, preamble=()) -> str:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, preamble=()) -> Path:
    return atomic_write_text(path, _csv_text(header, rows, preamble))


def read_csv(path, expected_header=None):
    """``(header, rows)`` with comment lines skipped; rows stay as strings."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    if expected_header is not None and tuple(header) != tuple(expected_header):
        raise FormatError(f"{path}: header {header} does not match {list(expected_header)}")
    return header, list(reader)


# -- trajectories ----------------------------------------------------------------

def write_trajectory_csv(path, record) -> Path:
    cols = [getattr(record, k) for k in TRAJECTORY_HEADER]
    return write_csv(path, TRAJECTORY_HEADER, zip(*cols))


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    _, rows = read_csv(path, TRAJECTORY_HEADER)
    data = np.array(rows, dtype=float).reshape(-1, len(TRAJECTORY_HEADER))
    return {k: data[:, i] for i, k in enumerate(TRAJECTORY_HEADER)}


def write_jumps_ndjson(path, jumps) -> Path:
    text = "".join(json.dumps({"t": float(j.t), "channel": int(j.channel)}) + "\n" for j in jumps)
    return atomic_write_text(path, text)


def read_jumps_ndjson(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj) != {"t", "channel"} or obj["channel"] not in (1, 2):
                raise FormatError(f"{path}:{n}: not a jump event: {line.strip()}")
            out.append(obj)
    return out


# -- semiclassical -----------------------------------------------------------------

BRANCH_HEADER = (
    ["f", "reA", "imA", "reB", "imB", "int_A", "int_B"]
    + [f"ev{k}{part}" for k in range(1, 5) for part in ("re", "im")]
    + ["stability", "symmetric"]
)


def branch_rows(branch, label: str | None = None):
    for f, u, ev, stab, sym in zip(branch.f, branch.states, branch.eigenvalues, branch.stability, branch.symmetric):
        ia = u[0] ** 2 + u[1] ** 2
        ib = u[2] ** 2 + u[3] ** 2
        evs = [x for e in ev for x in (e.real, e.imag)]
        yield [f, *u, ia, ib, *evs, stab, bool(sym)]


def write_branches_csv(path, branches) -> Path:
    rows = [row for b in branches for row in branch_rows(b)]
    return write_csv(path, BRANCH_HEADER, rows)


def write_bifurcations_csv(path, bifurcations) -> Path:
    rows = [(b.kind, b.f, *b.intensities) for b in bifurcations]
    return write_csv(path, ("kind", "f", "int_A", "int_B"), rows)


def write_cycles_csv(path, cycles) -> Path:
    rows = [(c.f, c.period, c.frequency, c.max_int_A, c.max_int_B, c.residual) for c in cycles]
    return write_csv(path, ("f", "period", "frequency", "max_int_A", "max_int_B", "residual"), rows)


# -- statistics --------------------------------------------------------------------

def write_histogram2d_csv(path, hist) -> Path:
    nx, ny = hist.n_bins
    pre = (
        f"x_range,{_fmt(hist.x_range[0])},{_fmt(hist.x_range[1])}",
        f"y_range,{_fmt(hist.y_range[0])},{_fmt(hist.y_range[1])}",
        f"bins,{nx},{ny}",
        f"overflow,{hist.overflow}",
    )
    return write_csv(path, None, hist.counts.tolist(), preamble=pre)


def read_histogram2d_csv(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                key, *vals = line[2:].strip().split(",")
                meta[key] = vals
            elif line.strip():
                rows.append([int(v) for v in line.strip().split(",")])
    from .stats import Histogram2D

    return Histogram2D(
        np.array(rows, dtype=np.int64),
        tuple(float(v) for v in meta["x_range"]),
        tuple(float(v) for v in meta["y_range"]),
        int(meta["overflow"][0]),
    )


def write_histogram1d_csv(path, hist) -> Path:
    rows = zip(hist.centres(), hist.counts, hist.values)
    pre = (f"range,{_fmt(hist.range[0])},{_fmt(hist.range[1])}", f"overflow,{hist.overflow}",
           f"scale,{_fmt(hist.scale)}", f"scaled,{_fmt(hist.scaled)}")
    return write_csv(path, ("centre", "count", "value"), rows, preamble=pre)


def write_spectrum_csv(path, spec) -> Path:
    return write_csv(path, ("freq", "magnitude"), zip(spec.freq, spec.magnitude))


# -- manifests -----------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    prng: str
    integrator: str
    truncations: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    status: str = "running"
    started: float = field(default_factory=time.time)
    finished: float | None = None
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "command": self.command,
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "prng": self.prng,
            "integrator": self.integrator,
            "config": self.config,
            "truncations": self.truncations,
            "outputs": self.outputs,
            "status": self.status,
            "started": self.started,
            "finished": self.finished,
            "wall_clock_s": None if self.finished is None else self.finished - self.started,
            "notes": self.notes,
        }

    def record_output(self, name: str, path) -> None:
        self.outputs[name] = sha256_file(path)

    def write(self, path) -> Path:
        return atomic_write_text(path, json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def finalize(self, path, status: str = "ok") -> Path:
        self.status = status
        self.finished = time.time()
        return self.write(path)


def read_manifest(path) -> dict:
    with open(path) as fh:
        m = json.load(fh)
    if m.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported manifest schema {m.get('schema_version')!r}")
    return m
