"""Command-line driver: ``spdelab {simulate,converge,validate,variational,probe} --config FILE``.

Outputs are written under ``--out`` (default ``[run] out``).  Each file is
first written as ``<name>.partial`` and renamed when complete, so an aborted
run leaves only ``.partial`` files behind.  CSV files start with a
``# scenario sha256=<hex>`` line, use ``.17g`` floats and ``\\n`` line ends.

Snapshot files ``snapshot_<n>.fld`` (path 0, step ``n``) are little-endian:
``b"SPD1"``, ``uint32 m``, ``uint32 n``, ``m`` float64 values of ``X``, then
``m`` float64 values of ``y``.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import struct
import sys
from pathlib import Path

import numpy as np

from .direct import cross_validate
from .ensemble import EnsembleError, convergence_study, default_threads, map_paths, run_ensemble
from .noise import sample_path
from .operators import NewtonError, hypothesis_probe
from .rescale import solve_path
from .scenario import Scenario, ScenarioError, parse_scenario
from .variational import minimize_bem

SUBCOMMANDS = ("simulate", "converge", "validate", "variational", "probe")
MAGIC = b"SPD1"
_HEADER = struct.Struct("<4sII")


class SnapshotError(ValueError):
    pass


# -- file formats ---------------------------------------------------------------

def snapshot_bytes(n: int, X, y) -> bytes:
    X = np.asarray(X, dtype="<f8")
    y = np.asarray(y, dtype="<f8")
    if X.shape != y.shape or X.ndim != 1:
        raise ValueError("X and y must be 1-D arrays of equal length")
    return _HEADER.pack(MAGIC, X.size, n) + X.tobytes() + y.tobytes()


def read_snapshot(data: bytes | str | Path):
    """Return ``(n, X, y)``; rejects a wrong magic or a truncated/oversized payload."""
    if not isinstance(data, (bytes, bytearray)):
        data = Path(data).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotError(f"snapshot truncated: {len(data)} bytes, header needs {_HEADER.size}")
    magic, m, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad snapshot magic {magic!r}, expected {MAGIC!r}")
    want = _HEADER.size + 16 * m
    if len(data) != want:
        raise SnapshotError(f"snapshot size {len(data)} bytes, expected {want} for m = {m}")
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return n, vals[:m].astype(float), vals[m:].astype(float)


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def csv_text(digest: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario sha256={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


class _Outputs:
    """Collects files as ``.partial`` and renames them once the run succeeded."""

    def __init__(self, out_dir: Path):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.pending = []

    def write(self, name: str, data):
        tmp = self.dir / (name + ".partial")
        if isinstance(data, str):
            data = data.encode("utf-8")
        with open(tmp, "wb") as fh:
            fh.write(data)
        self.pending.append((tmp, self.dir / name))

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending = []


# -- subcommands -----------------------------------------------------------------

def _simulate(scen: Scenario, out: _Outputs, seed, paths, threads):
    eq, spec, grid, cfg, x = scen.equation(), scen.spec(), scen.grid(), scen.config(), scen.initial()
    res = run_ensemble(eq, spec, x, cfg, paths, seed, grid, threads, diagnostics=False)
    out.write("moments.csv", csv_text(scen.digest(), ["t", "mean_sq_H", "stderr"],
                                      zip(res.times, res.mean_sq, res.stderr)))
    steps = scen["run"]["snapshots"] or [cfg.steps]
    sol = solve_path(eq, spec, sample_path(spec, cfg.dt, cfg.steps, seed, 0), x, cfg, grid)
    for n in steps:
        out.write(f"snapshot_{n}.fld", snapshot_bytes(n, sol.X[n], sol.y[n]))
    return res


def _gbm_exact(scen: Scenario):
    """Closed-form ``X(T)`` when the scenario is geometric Brownian motion."""
    eq, spec = scen.equation(), scen.spec()
    if eq.kind != "FiniteDimGraph" or eq.graph != "zero":
        return None
    if any(m.basis != "const" for m in spec.active):
        return None
    x = scen.initial()
    mus = spec.mus
    half = 0.5 * float(np.sum(mus ** 2))
    return lambda path: x * np.exp(float(path.beta[-1] @ mus) - half * path.T)


def _converge(scen: Scenario, out: _Outputs, seed, paths, threads):
    eq, spec, grid, cfg, x = scen.equation(), scen.spec(), scen.grid(), scen.config(), scen.initial()
    levels = max(3, int(scen["run"]["levels"]))
    dts = [cfg.dt / 2 ** k for k in range(levels)]
    rep = convergence_study(eq, spec, x, cfg, dts, paths, seed, grid, "rescale",
                            _gbm_exact(scen), threads)
    rows = [(dt, err, rep.slope) for dt, err in zip(rep.dts, rep.errors)]
    out.write("order.csv", csv_text(scen.digest(), ["dt", "strong_error", "slope_fit"], rows))
    return rep


def _validate(scen: Scenario, out: _Outputs, seed, paths, threads):
    eq, spec, grid, cfg, x = scen.equation(), scen.spec(), scen.grid(), scen.config(), scen.initial()
    halv = int(scen["run"]["halvings"])

    def one(i):
        path = sample_path(spec, cfg.dt / 2 ** halv, cfg.steps * 2 ** halv, seed, i)
        return cross_validate(eq, spec, path, x, cfg, grid, halv)

    reports = map_paths(one, paths, threads)
    bad = [r for r in reports if isinstance(r, BaseException)]
    if bad:
        raise bad[0]
    rows = []
    for i, rep in enumerate(reports):
        for dt, gap in zip(rep.dts, rep.discrepancy):
            rows.append((i, dt, gap, int(rep.monotone)))
    out.write("cross.csv", csv_text(scen.digest(), ["path", "dt", "discrepancy", "monotone"], rows))
    return reports


def _variational(scen: Scenario, out: _Outputs, seed, paths, threads):
    eq, spec, grid, cfg, x = scen.equation(), scen.spec(), scen.grid(), scen.config(), scen.initial()
    path = sample_path(spec, cfg.dt, cfg.steps, seed, 0)
    bem = minimize_bem(eq, spec, path, x, cfg, grid)
    plain = type(cfg)(cfg.dt, cfg.steps, cfg.newton_tol, cfg.newton_max)
    sol = solve_path(eq, spec, path, x, plain, grid)
    err = float(np.max(np.abs(bem.values - sol.y)))
    out.write("bem.csv", csv_text(scen.digest(), ["iter", "objective", "gap"], bem.history))
    out.write("bem_compare.csv", csv_text(scen.digest(), ["max_nodal_error", "gap", "scale"],
                                          [(err, bem.gap, bem.scale)]))
    return bem, err


def _probe(scen: Scenario, out: _Outputs, seed, paths, threads):
    eq, grid = scen.equation(), scen.grid()
    rep = hypothesis_probe(eq, grid, 0.0, int(scen["run"]["probe_samples"]), seed)
    out.write("hypotheses.txt", f"# scenario sha256={scen.digest()}\n" + rep.to_text())
    return rep


HANDLERS = {"simulate": _simulate, "converge": _converge, "validate": _validate,
            "variational": _variational, "probe": _probe}


def run(scen: Scenario, subcommand: str, out_dir=None, seed=None, paths=None, threads=None):
    """Execute ``subcommand`` and return its result object; raises on failure."""
    if subcommand not in HANDLERS:
        raise ValueError(f"unknown subcommand {subcommand!r}; choose from {SUBCOMMANDS}")
    r = scen["run"]
    seed = r["seed"] if seed is None else seed
    paths = r["paths"] if paths is None else paths
    if threads is None:
        threads = r["threads"] or default_threads()
    out = _Outputs(Path(out_dir if out_dir is not None else r["out"]))
    result = HANDLERS[subcommand](scen, out, seed, paths, threads)
    out.commit()
    return result


def _positive(kind):
    def conv(text):
        v = int(text)
        if v < kind:
            raise argparse.ArgumentTypeError(f"must be >= {kind}, got {v}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spdelab",
                                 description="Pathwise solver for SPDEs with linear multiplicative noise")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario file (TOML)")
    ap.add_argument("--seed", type=_positive(0), help="master seed (overrides [run] seed)")
    ap.add_argument("--paths", type=_positive(1), help="number of paths M")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=_positive(1),
                    help="worker threads (default: [run] threads, then $SPDE_THREADS, then 1)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as err:
        print(f"spdelab: cannot read config: {err}", file=sys.stderr)
        return 2
    try:
        scen = parse_scenario(text)
    except ScenarioError as err:
        for msg in err.problems:
            print(f"{args.config}: {msg}", file=sys.stderr)
        return 2
    try:
        run(scen, args.subcommand, args.out, args.seed, args.paths, args.threads)
    except (NewtonError, EnsembleError, ValueError, ArithmeticError, RuntimeError) as err:
        print(f"spdelab {args.subcommand}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
