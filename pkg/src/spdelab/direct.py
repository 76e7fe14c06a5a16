"""Semi-implicit Euler-Maruyama scheme for ``dX + A(t)X dt = X dW``.

The drift is implicit and the noise explicit:

    X_{n+1} + dt A(t_{n+1}) X_{n+1} = X_n + X_n * dW_n,

with ``dW_n(xi) = sum_j mu_j e_j(xi) (beta_j(t_{n+1}) - beta_j(t_n))``.  It is
an independent discretization of the same equation, driven by the same
Brownian path, used to cross-check the rescaled solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import WienerPath, WienerSpec
from .operators import EquationDef, NewtonError, SolveInfo, pivot_norm, solve_implicit
from .rescale import PathSolution, SolverConfig, solve_path
from .spatial import Grid


def _dW(spec: WienerSpec, path: WienerPath, n: int, grid: Grid) -> np.ndarray:
    return (path.increments[n] * spec.mus) @ spec.basis_matrix(grid)


def em_step(equation: EquationDef, spec: WienerSpec, path: WienerPath, n: int, X_n,
            cfg: SolverConfig, grid: Grid, info: SolveInfo | None = None) -> np.ndarray:
    """One semi-implicit Euler-Maruyama step ``X_n -> X_{n+1}``."""
    X_n = np.asarray(X_n, dtype=float)
    if not np.all(np.isfinite(X_n)):
        raise FloatingPointError("non-finite state X_n")
    if not 0 <= n < min(cfg.steps, path.steps):
        raise IndexError(f"step index {n} outside 0..{cfg.steps - 1}")
    rhs = X_n * (1.0 + _dW(spec, path, n, grid))
    try:
        return solve_implicit(equation, grid, rhs, 1.0, cfg.dt, (n + 1) * cfg.dt, X_n,
                              cfg.newton_tol, cfg.newton_max, info)
    except NewtonError as err:
        raise NewtonError(f"step {n}: {err}", err.residual, step=n) from err


def em_path(equation: EquationDef, spec: WienerSpec, path: WienerPath, x,
            cfg: SolverConfig, grid: Grid) -> np.ndarray:
    """Euler-Maruyama trajectory, shape ``(N+1, m)``."""
    if abs(path.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise ValueError(f"path time step {path.dt} differs from solver dt {cfg.dt}")
    X = np.empty((cfg.steps + 1, grid.nodes))
    X[0] = x
    for n in range(cfg.steps):
        X[n + 1] = em_step(equation, spec, path, n, X[n], cfg, grid)
    return X


@dataclass
class CrossReport:
    """Discrepancy between the rescaled and the Euler-Maruyama trajectory.

    ``dts[k]`` and ``discrepancy[k]`` belong to the ``k``-th refinement
    (``dts[0]`` is the configured step); ``order`` is the fitted log-log slope
    of discrepancy against ``dt`` (``nan`` with a single level).
    """

    dts: np.ndarray
    discrepancy: np.ndarray
    order: float
    seed: int
    path_index: int

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.discrepancy) < 0))


def discrepancy(equation, spec, path, x, cfg, grid) -> tuple[float, PathSolution, np.ndarray]:
    sol = solve_path(equation, spec, path, x, cfg, grid)
    X_em = em_path(equation, spec, path, x, cfg, grid)
    gap = max(pivot_norm(equation, grid, sol.X[n] - X_em[n]) for n in range(cfg.steps + 1))
    return float(gap), sol, X_em


def cross_validate(equation: EquationDef, spec: WienerSpec, path: WienerPath, x,
                   cfg: SolverConfig, grid: Grid, halvings: int = 0) -> CrossReport:
    """Compare both solvers on ``path`` and on ``halvings`` successive refinements.

    Refinement needs a path sampled at ``cfg.dt / 2**halvings`` (or finer); the
    coarser paths are obtained by summing its increments, so all levels see the
    same Brownian motion.
    """
    x = np.asarray(x, dtype=float)
    finest = cfg.dt / 2 ** halvings
    ratio = finest / path.dt
    factor0 = int(round(ratio))
    if factor0 < 1 or abs(ratio - factor0) > 1e-9:
        raise ValueError(f"path step {path.dt} does not divide the finest step {finest}")
    dts, gaps = [], []
    for k in range(halvings + 1):
        factor = factor0 * 2 ** (halvings - k)
        coarse = path.coarsen(factor)
        level = SolverConfig(cfg.dt / 2 ** k, cfg.steps * 2 ** k, cfg.newton_tol, cfg.newton_max,
                             cfg.yosida_lambda, cfg.shift_enabled, cfg.lambda_F, cfg.nu)
        gap, _, _ = discrepancy(equation, spec, coarse, x, level, grid)
        dts.append(level.dt)
        gaps.append(gap)
    dts, gaps = np.array(dts), np.array(gaps)
    order = float("nan")
    if len(dts) > 1 and np.all(gaps > 0):
        order = float(np.polyfit(np.log(dts), np.log(gaps), 1)[0])
    return CrossReport(dts, gaps, order, path.seed, path.path_index)
