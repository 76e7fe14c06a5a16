"""Monte-Carlo ensembles, moment estimates and strong convergence studies.

Paths are independent given ``(seed, path_index)``; workers only compute,
and every aggregate is formed afterwards in path-index order, so results do
not depend on the number of threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .direct import em_path
from .noise import WienerSpec, nu_constant, sample_path
from .operators import EquationDef, NewtonError, pivot_norm
from .rescale import (
    PathSolution,
    SolverConfig,
    coercivity_balance,
    energy_ledger,
    holder_diagnostic,
    regularity_functional,
    solve_path,
)
from .spatial import Grid

MAX_FAILURE_RATE = 0.10


class EnsembleError(RuntimeError):
    """Too many paths failed."""


def default_threads() -> int:
    env = os.environ.get("SPDE_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ValueError(f"SPDE_THREADS must be a positive integer, got {env!r}") from None
        if k < 1:
            raise ValueError(f"SPDE_THREADS must be a positive integer, got {env!r}")
        return k
    return 1


def map_paths(fn, M: int, threads: int | None = None) -> list:
    """``[fn(i) for i in range(M)]``, evaluated on ``threads`` workers.

    Exceptions are returned in place of results so that callers can decide
    on a failure policy.
    """
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")

    def safe(i):
        try:
            return fn(i)
        except (NewtonError, FloatingPointError, OverflowError, ArithmeticError) as err:
            return err

    if threads == 1 or M == 1:
        return [safe(i) for i in range(M)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(safe, range(M)))


def _check_failures(results, M):
    failed = {i: r for i, r in enumerate(results) if isinstance(r, BaseException)}
    if len(failed) > MAX_FAILURE_RATE * M:
        first = next(iter(failed.items()))
        raise EnsembleError(f"{len(failed)} of {M} paths failed (first: path {first[0]}: "
                            f"{first[1]})")
    return failed


@dataclass
class EnsembleResult:
    """Aggregates of ``M`` paths.

    ``mean_sq[n]`` estimates ``E|X(t_n)|_H^2`` and ``stderr[n]`` its standard
    error (``nan`` when fewer than two paths succeeded).  Per-path arrays are
    indexed by path index; failed paths hold ``nan`` and are listed in
    ``failures``.
    """

    M: int
    seed: int
    times: np.ndarray
    mean_sq: np.ndarray
    stderr: np.ndarray
    sq_norms: np.ndarray  # (M, N+1)
    energy_residual_max: float
    regularity: np.ndarray
    holder: list
    failures: dict = field(default_factory=dict)
    solutions: list | None = None
    coercivity: tuple | None = None

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.sq_norms[:, -1])


def _moments(sq):
    good = sq[np.all(np.isfinite(sq), axis=1)]
    k = good.shape[0]
    mean = np.array([math.fsum(col) / k for col in good.T]) if k else np.full(sq.shape[1], np.nan)
    if k >= 2:
        dev = good - mean
        var = np.array([math.fsum(col) for col in dev.T ** 2]) / (k - 1)
        se = np.sqrt(var / k)
    else:
        se = np.full(sq.shape[1], np.nan)
    return mean, se


def run_ensemble(equation: EquationDef, spec: WienerSpec, x, cfg: SolverConfig, M: int,
                 seed: int, grid: Grid, threads: int | None = None, diagnostics: bool = True,
                 keep_solutions: bool = False) -> EnsembleResult:
    """Solve ``M`` independent paths and aggregate moments and diagnostics."""
    if M < 1:
        raise ValueError(f"need at least one path, got {M}")
    x = np.asarray(x, dtype=float)
    holder_ok = (diagnostics and not grid.is_point and equation.kind == "PLaplacianReaction"
                 and equation.p == 2.0 and cfg.steps >= 16)

    def one(i):
        path = sample_path(spec, cfg.dt, cfg.steps, seed, i)
        sol = solve_path(equation, spec, path, x, cfg, grid)
        sq = np.array([pivot_norm(equation, grid, X) ** 2 for X in sol.X])
        out = {"sq": sq, "sol": sol if keep_solutions else None}
        if diagnostics:
            led = energy_ledger(sol, spec, path)
            out["ledger"] = led
            out["reg"] = regularity_functional(sol)
            out["holder"] = holder_diagnostic(sol) if holder_ok else None
        return out

    results = map_paths(one, M, threads)
    failures = _check_failures(results, M)
    N = cfg.steps
    sq = np.full((M, N + 1), np.nan)
    reg = np.full(M, np.nan)
    holder = [None] * M
    ledgers = []
    for i, r in enumerate(results):
        if i in failures:
            continue
        sq[i] = r["sq"]
        if diagnostics:
            reg[i] = r["reg"]
            holder[i] = r["holder"]
            ledgers.append(r["ledger"])
    mean, se = _moments(sq)
    res_max = max((led.max_residual for led in ledgers), default=float("nan"))
    coerc = None
    if ledgers:
        nu = cfg.nu if cfg.nu is not None else nu_constant(
            spec, equation.pivot, None if grid.is_point else grid)
        coerc = coercivity_balance(ledgers, equation, nu, cfg.T)
    sols = [None if i in failures else r["sol"] for i, r in enumerate(results)] \
        if keep_solutions else None
    return EnsembleResult(M, seed, cfg.dt * np.arange(N + 1), mean, se, sq, res_max, reg,
                          holder, {i: str(e) for i, e in failures.items()}, sols, coerc)


@dataclass
class OrderReport:
    """Strong errors ``(E|X_dt(T) - X_ref(T)|_H^2)^{1/2}`` and their log-log fit."""

    dts: np.ndarray
    errors: np.ndarray
    slope: float
    r2: float
    reference: str
    M: int


def fit_order(dts, errors) -> tuple[float, float]:
    x, z = np.log(dts), np.log(errors)
    slope, icpt = np.polyfit(x, z, 1)
    resid = z - (slope * x + icpt)
    ss_tot = np.sum((z - z.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def _nested_factors(dts):
    dts = [float(v) for v in dts]
    if len(dts) < 3:
        raise ValueError("a convergence study needs at least 3 step sizes")
    factors = []
    for a, b in zip(dts, dts[1:]):
        if not b < a:
            raise ValueError("step sizes must be strictly decreasing")
    finest = dts[-1]
    for a in dts:
        r = a / finest
        k = int(round(r))
        if abs(r - k) > 1e-9 * r:
            raise ValueError(f"step sizes are not nested: {a} is not a multiple of {finest}")
        factors.append(k)
    for a, b in zip(factors, factors[1:]):
        if a % b:
            raise ValueError(f"step sizes are not nested: {a * finest} / {b * finest}")
    return factors


def convergence_study(equation: EquationDef, spec: WienerSpec, x, cfg: SolverConfig, dts,
                      M: int, seed: int, grid: Grid, method: str = "rescale",
                      exact=None, threads: int | None = None) -> OrderReport:
    """Strong error at ``T = cfg.T`` for nested step sizes ``dts``.

    Paths are sampled once at the finest step and coarsened by summation.
    ``exact(path) -> X(T)`` supplies a closed-form reference; otherwise the
    finest level of the same method is the reference and is excluded from
    the fit.  ``method`` is ``"rescale"`` or ``"em"``.
    """
    if method not in ("rescale", "em"):
        raise ValueError(f"unknown method {method!r}")
    factors = _nested_factors(dts)
    finest = float(dts[-1])
    T = cfg.T
    n_fine = int(round(T / finest))
    if abs(n_fine * finest - T) > 1e-9 * T:
        raise ValueError(f"finest step {finest} does not divide T = {T}")
    x = np.asarray(x, dtype=float)

    def level_cfg(dt):
        return SolverConfig(dt, int(round(T / dt)), cfg.newton_tol, cfg.newton_max,
                            cfg.yosida_lambda, cfg.shift_enabled, cfg.lambda_F, cfg.nu)

    def final(path, c):
        if method == "rescale":
            return solve_path(equation, spec, path, x, c, grid).X[-1]
        return em_path(equation, spec, path, x, c, grid)[-1]

    def one(i):
        fine = sample_path(spec, finest, n_fine, seed, i)
        finals = [final(fine.coarsen(f), level_cfg(finest * f)) for f in factors]
        ref = exact(fine) if exact is not None else finals[-1]
        return [pivot_norm(equation, grid, X - ref) ** 2 for X in finals]

    results = map_paths(one, M, threads)
    _check_failures(results, M)
    sq = np.array([r for r in results if not isinstance(r, BaseException)])
    errors = np.sqrt(np.array([math.fsum(col) / len(sq) for col in sq.T]))
    dts_arr = finest * np.array(factors, dtype=float)
    use = slice(None) if exact is not None else slice(0, -1)
    slope, r2 = fit_order(dts_arr[use], errors[use])
    return OrderReport(dts_arr, errors, slope, r2, "exact" if exact is not None else "finest", M)
