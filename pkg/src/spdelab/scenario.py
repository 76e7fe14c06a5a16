"""Scenario files: a TOML document with sections ``[noise] [grid] [equation] [time] [solver] [run]``.

Example::

    [noise]
    modes = [{mu = 0.25, basis = "sin", k = 1}, {mu = 0.25, basis = "sin", k = 2}]

    [grid]
    length = 1.0
    nodes = 64
    initial = "sin"

    [equation]
    kind = "PLaplacianReaction"
    flux = "linear"

    [time]
    dt = 1e-3
    steps = 100

    [run]
    seed = 1
    paths = 64

Every key is optional except ``[time] dt`` and ``steps``; unknown keys are
errors.  Validation collects all problems, each tagged with the line of the
offending key when it can be located.
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .noise import BASES, Mode, WienerSpec
from .operators import EquationDef
from .rescale import SolverConfig
from .spatial import BOUNDARY_CONDITIONS, Grid

INITIAL_PROFILES = ("sin", "step", "bump", "ones", "zero")

DEFAULTS = {
    "noise": {"modes": [], "truncation": -1},
    "grid": {"length": 1.0, "nodes": 64, "bc": "dirichlet", "initial": "sin", "amplitude": 1.0},
    "equation": {"kind": "PLaplacianReaction", "p": 2.0, "q": 2.0, "flux": "plap",
                 "reaction": "none", "coef": 1.0, "velocity": 1.0, "b": 0.0, "lam": 1.0,
                 "graph": "zero", "pivot": "", "delta": 0.0},
    "time": {"dt": None, "steps": None},
    "solver": {"newton_tol": 1e-10, "newton_max": 50, "yosida_lambda": [],
               "shift_enabled": False, "lambda_F": 0.0},
    "run": {"seed": 0, "paths": 16, "threads": 0, "out": "out", "snapshots": [],
            "levels": 4, "halvings": 3, "probe_samples": 200},
}
MODE_KEYS = {"mu", "basis", "k"}


class ScenarioError(ValueError):
    """All problems found in a scenario file."""

    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = list(problems)


@dataclass
class Scenario:
    """Fully defaulted configuration; ``sections[name][key]`` holds plain TOML values."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    # -- model objects ---------------------------------------------------------
    def grid(self) -> Grid:
        g = self["grid"]
        return Grid(float(g["length"]), int(g["nodes"]), g["bc"])

    def equation(self) -> EquationDef:
        e = dict(self["equation"])
        if not e["pivot"]:
            e["pivot"] = None
        return EquationDef(**e)

    def spec(self) -> WienerSpec:
        n = self["noise"]
        modes = tuple(Mode(float(m["mu"]), m.get("basis", "const"), int(m.get("k", 1)))
                      for m in n["modes"])
        trunc = None if n["truncation"] < 0 else int(n["truncation"])
        return WienerSpec(modes, trunc, float(self["grid"]["length"]))

    def config(self) -> SolverConfig:
        s, t = self["solver"], self["time"]
        lam = s["yosida_lambda"]
        lam = None if lam in ([], None) else (tuple(lam) if isinstance(lam, list) else lam)
        return SolverConfig(float(t["dt"]), int(t["steps"]), float(s["newton_tol"]),
                            int(s["newton_max"]), lam, bool(s["shift_enabled"]),
                            float(s["lambda_F"]))

    def initial(self) -> np.ndarray:
        g = self["grid"]
        grid = self.grid()
        prof, amp = g["initial"], float(g["amplitude"])
        if isinstance(prof, list):
            return amp * np.array(prof, dtype=float)
        x = grid.x / grid.length
        if grid.is_point or prof == "ones":
            base = np.ones(grid.nodes)
        elif prof == "sin":
            base = np.sin(np.pi * x)
        elif prof == "step":
            base = (x < 0.5).astype(float)
        elif prof == "bump":
            base = np.maximum(0.0, 1.0 - 16.0 * (x - 0.5) ** 2)
        else:
            base = np.zeros(grid.nodes)
        return amp * base

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _key_lines(text: str) -> dict:
    """``(section, key) -> line`` by a plain scan of ``[section]`` and ``key =`` lines."""
    out = {}
    section = ""
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[\s*([A-Za-z0-9_]+)\s*\]", line)
        if m:
            section = m.group(1)
            out.setdefault((section, None), no)
            continue
        m = re.match(r"\s*([A-Za-z0-9_\"']+)\s*=", line)
        if m:
            out.setdefault((section, m.group(1).strip("\"'")), no)
    return out


def _check_types(name, key, value, default, where, problems):
    if default is None or isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        kind = "a number"
    elif isinstance(default, bool):
        ok, kind = isinstance(value, bool), "true or false"
    elif isinstance(default, int):
        ok, kind = isinstance(value, int) and not isinstance(value, bool), "an integer"
    elif isinstance(default, str):
        ok, kind = isinstance(value, str), "a string"
    else:
        ok, kind = isinstance(value, list), "an array"
    if name == "grid" and key == "initial":
        ok, kind = isinstance(value, (str, list)), "a profile name or an array"
    if name == "solver" and key == "yosida_lambda":
        ok = isinstance(value, (int, float, list)) and not isinstance(value, bool)
        kind = "a number or an array"
    if not ok:
        problems.append(f"{where(name, key)}[{name}] {key} must be {kind}, got {value!r}")
    return ok


def parse_scenario(text: str) -> Scenario:
    """Parse and validate; raises :class:`ScenarioError` listing every problem."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ScenarioError([f"syntax error: {err}"]) from None
    lines = _key_lines(text)

    def where(section, key=None):
        no = lines.get((section, key)) or lines.get((section, None))
        return f"line {no}: " if no else ""

    problems = []
    sections = {}
    for name in raw:
        if name not in DEFAULTS:
            problems.append(f"{where(name)}unknown section [{name}]")
    for name, defaults in DEFAULTS.items():
        given = raw.get(name, {})
        if not isinstance(given, dict):
            problems.append(f"{where(name)}[{name}] must be a table")
            given = {}
        merged = dict(defaults)
        for key, value in given.items():
            if key not in defaults:
                problems.append(f"{where(name, key)}unknown key '{key}' in [{name}]")
                continue
            if _check_types(name, key, value, defaults[key], where, problems):
                merged[key] = float(value) if isinstance(defaults[key], float) else value
        sections[name] = merged

    t = sections["time"]
    for key in ("dt", "steps"):
        if t[key] is None:
            problems.append(f"{where('time')}missing required key '{key}' in [time]")
    if isinstance(t["steps"], float):
        if t["steps"] != int(t["steps"]):
            problems.append(f"{where('time', 'steps')}[time] steps must be an integer")
        t["steps"] = int(t["steps"])
    if t["dt"] is not None:
        t["dt"] = float(t["dt"])

    for i, m in enumerate(sections["noise"]["modes"]):
        if not isinstance(m, dict):
            problems.append(f"{where('noise', 'modes')}noise mode {i} must be a table")
            continue
        extra = set(m) - MODE_KEYS
        if extra:
            problems.append(f"{where('noise', 'modes')}unknown key(s) {sorted(extra)} in noise mode {i}")
        if "mu" not in m:
            problems.append(f"{where('noise', 'modes')}noise mode {i} needs 'mu'")
        if m.get("basis", "const") not in BASES:
            problems.append(f"{where('noise', 'modes')}noise mode {i}: basis must be one of {BASES}")

    g = sections["grid"]
    if g["bc"] not in BOUNDARY_CONDITIONS:
        problems.append(f"{where('grid', 'bc')}[grid] bc must be one of {BOUNDARY_CONDITIONS}")
    if isinstance(g["initial"], str) and g["initial"] not in INITIAL_PROFILES:
        problems.append(f"{where('grid', 'initial')}[grid] initial must be one of "
                        f"{INITIAL_PROFILES} or an array")
    if isinstance(g["initial"], list) and len(g["initial"]) != g["nodes"]:
        problems.append(f"{where('grid', 'initial')}[grid] initial has {len(g['initial'])} "
                        f"values but nodes = {g['nodes']}")

    r = sections["run"]
    for key in ("seed", "threads"):
        if isinstance(r[key], int) and r[key] < 0:
            problems.append(f"{where('run', key)}[run] {key} must be non-negative")
    for key in ("paths", "levels", "probe_samples"):
        if isinstance(r[key], int) and r[key] < 1:
            problems.append(f"{where('run', key)}[run] {key} must be positive")

    scen = Scenario(sections)
    if not problems:
        # module-level invariants, reported with the section that carries them
        for section, build in (("grid", scen.grid), ("equation", scen.equation),
                               ("noise", scen.spec), ("solver", scen.config)):
            try:
                build()
            except (ValueError, TypeError) as err:
                for msg in str(err).split("; "):
                    problems.append(f"{where(section)}[{section}] {msg}")
        if not problems:
            eq, grid = scen.equation(), scen.grid()
            if eq.kind == "FiniteDimGraph" and not grid.is_point:
                problems.append(f"{where('grid', 'bc')}[grid] FiniteDimGraph needs bc = \"none\"")
            if eq.kind != "FiniteDimGraph" and grid.is_point:
                problems.append(f"{where('grid', 'bc')}[grid] {eq.kind} needs a spatial grid")
            if eq.kind == "Transport" and grid.bc != "inflow":
                problems.append(f"{where('grid', 'bc')}[grid] Transport needs bc = \"inflow\"")
            for n in r["snapshots"]:
                if not isinstance(n, int) or not 0 <= n <= t["steps"]:
                    problems.append(f"{where('run', 'snapshots')}[run] snapshot step {n!r} "
                                    f"outside 0..{t['steps']}")
    if problems:
        raise ScenarioError(problems)
    return scen


def serialize(scen: Scenario) -> str:
    """TOML text that :func:`parse_scenario` maps back to an equal scenario."""
    return tomli_w.dumps({name: scen.sections[name] for name in DEFAULTS})
