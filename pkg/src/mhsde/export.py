"""CSV schemas, the path reader and run manifests.

Every CSV starts with ``# schema_version=1``, then a column header.  Floats
are written with ``repr`` (shortest round-trip decimal), so files are
byte-identical for identical runs and re-read without loss.

path.csv
    ``time, side, mode, x_1 .. x_p``.  ``side`` is ``post`` for
    ``(J_t, X_t)``; at a discontinuity (discrete or Euclidean jump) an extra
    ``pre`` row carrying ``(J_{t-}, X_{t-})`` precedes it.  Rows are the
    merged grid nodes of all segments.
audit.csv
    ``atom_index, time, mode_before, q_total, u, mode_after``, one row per
    master atom processed.
indicators.csv
    ``time`` followed by scenario-specific columns (see ``scenarios``).
report.csv
    ``level, paths, coupled, decoupled, decoupling_frequency, median_error,
    q90_error, consistency_violations``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, MhsdeError
from .paths import EuclidJump, HybridPath, HybridState, Segment

CSV_SCHEMA_VERSION = 1
_HEADER_LINE = f"# schema_version={CSV_SCHEMA_VERSION}\n"

AUDIT_COLUMNS = ("atom_index", "time", "mode_before", "q_total", "u", "mode_after")
REPORT_COLUMNS = (
    "level", "paths", "coupled", "decoupled", "decoupling_frequency", "median_error", "q90_error", "consistency_violations",
)


class OutputError(MhsdeError, OSError):
    """Writing or reading a run artefact failed."""

    exit_code = 5


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(_HEADER_LINE)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(text: str):
    """``(columns, rows)`` of a schema-tagged CSV; cells stay strings."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema_version="):
        raise ConfigError("CSV lacks the schema_version header line")
    version = int(lines[0].split("=", 1)[1])
    if version != CSV_SCHEMA_VERSION:
        raise ConfigError(f"unsupported CSV schema_version {version}")
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


# -- path ---------------------------------------------------------------------


def path_rows(path: HybridPath):
    """Rows of ``path.csv`` in time order."""
    times = path.grid_times()
    jumps = set(path.all_event_times().tolist())
    modes = path.modes_at(times)
    values = path.positions_at(times)
    left_modes = path.modes_at(times, left=True)
    left_values = path.positions_at(times, left=True)
    for k, t in enumerate(times.tolist()):
        if t in jumps and t > 0:
            yield (t, "pre", int(left_modes[k]), *left_values[k].tolist())
        yield (t, "post", int(modes[k]), *values[k].tolist())


def path_columns(dim: int):
    return ("time", "side", "mode", *(f"x_{k + 1}" for k in range(dim)))


def path_csv(path: HybridPath) -> str:
    return csv_text(path_columns(path.dim), path_rows(path))


def path_from_csv(text: str, constant_prehistory: bool = False) -> HybridPath:
    """Rebuild a frozen :class:`HybridPath` from ``path.csv`` text.

    Segments are split at discrete events; Euclidean jumps are attached to
    the segment that contains them.
    """
    columns, rows = read_csv(text)
    if tuple(columns[:3]) != ("time", "side", "mode"):
        raise ConfigError(f"not a path CSV: columns {columns}")
    p = len(columns) - 3
    recs = [(float(r[0]), r[1], int(r[2]), np.array([float(v) for v in r[3:3 + p]])) for r in rows]
    if not recs or recs[0][1] != "post" or recs[0][0] != 0.0:
        raise ConfigError("path CSV must start with the post row at time 0")
    origin = HybridState(recs[0][2], recs[0][3])
    path = HybridPath(origin, constant_prehistory=constant_prehistory)

    seg_times, seg_values, seg_jumps = [0.0], [recs[0][3]], []
    mode = origin.mode
    pending_left = None

    def flush(t_end):
        path.append_segment(Segment(seg_times[0], t_end, mode, np.array(seg_times), np.vstack(seg_values), tuple(seg_jumps)))

    for t, side, m, x in recs[1:]:
        if side == "pre":
            pending_left = (t, m, x)
            continue
        if side != "post":
            raise ConfigError(f"unknown side {side!r} in path CSV")
        if pending_left is not None and pending_left[0] == t:
            _, lm, lx = pending_left
            if m != lm:
                seg_times.append(t)
                seg_values.append(lx)
                flush(t)
                path.append_event(t, lm, m)
                mode = m
                seg_times, seg_values, seg_jumps = [t], [x], []
                if not np.array_equal(lx, x):
                    raise ConfigError(f"simultaneous discrete and Euclidean jump at t={t} is not supported")
            else:
                seg_jumps.append(EuclidJump(t, lx, x))
                seg_times.append(t)
                seg_values.append(x)
            pending_left = None
            continue
        seg_times.append(t)
        seg_values.append(x)
    if len(seg_times) > 1:
        flush(seg_times[-1])
    return path.freeze()


# -- audit --------------------------------------------------------------------


def audit_rows(audit):
    for r in audit:
        yield (r.atom_index, r.time, r.mode_before, r.q_total, r.u, r.mode_after)


def audit_csv(audit) -> str:
    return csv_text(AUDIT_COLUMNS, audit_rows(audit))


# -- manifest -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def platform_fingerprint() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
        "platform": platform.platform(),
    }


def write_manifest(outdir, command, config, seed, files) -> Path:
    """Write ``manifest.json`` listing ``files`` (paths inside ``outdir``) with their SHA-256."""
    from . import __version__

    outdir = Path(outdir)
    manifest = {
        "command": list(command),
        "config": config,
        "seed": seed,
        "version": __version__,
        "platform": platform_fingerprint(),
        "outputs": {Path(f).name: sha256_file(f) for f in files},
    }
    text = json.dumps(manifest, indent=2, sort_keys=False, default=_json_default) + "\n"
    return write_text(outdir / "manifest.json", text)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


PLOT_SCRIPT = '''"""Plot a run written by the mhsde CLI: python plot.py [RUN_DIR]"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt


def read(path):
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


run = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
cols, rows = read(run / "path.csv")
rows = [r for r in rows if r[1] == "post"]
t = [float(r[0]) for r in rows]
panels = 2 + (run / "indicators.csv").exists()
fig, ax = plt.subplots(panels, 1, sharex=True, figsize=(9, 2.6 * panels))
for k, name in enumerate(cols[3:]):
    ax[0].step(t, [float(r[3 + k]) for r in rows], where="post", label=name)
ax[0].legend(loc="best")
ax[0].set_ylabel("X")
ax[1].step(t, [int(r[2]) for r in rows], where="post", color="k")
ax[1].set_ylabel("mode")
if panels == 3:
    icols, irows = read(run / "indicators.csv")
    ti = [float(r[0]) for r in irows]
    for k, name in enumerate(icols[1:]):
        ax[2].plot(ti, [float(r[1 + k]) for r in irows], label=name, drawstyle="steps-post")
    ax[2].legend(loc="best")
ax[-1].set_xlabel("time")
fig.tight_layout()
out = run / "plot.png"
fig.savefig(out, dpi=120)
print(out)
'''
