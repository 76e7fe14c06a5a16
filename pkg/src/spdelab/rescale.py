"""Pathwise solver for ``dX + A(t)X dt = X dW`` through the substitution ``X = e^W y``.

For a fixed Brownian path the rescaled unknown obeys the random (but
deterministic given the path) equation

    dy/dt + e^{-W} A(t)(e^{W} y) + mu y = 0,    y(0) = x,

with ``mu = 1/2 sum_j mu_j^2 e_j^2``.  It is integrated by backward Euler with
the noise evaluated at the right end of each step.  Writing the step in terms
of ``w = e^{W(t_{n+1})} y_{n+1}`` turns it into a weighted resolvent problem

    (1 + dt (mu + s)) w + dt A(w) = e^{s dt} e^{W(t_{n+1})} y_n,

where ``s = nu + delta`` when the strong-monotonicity shift is enabled and 0
otherwise; the shift changes the discrete dynamics only at ``O(dt^2)``.

A more general noise of commuting-group type ``U(t) = prod_k exp(sigma_k beta_k)``
would replace ``e^{+-W}`` in :class:`Stepper` by ``U(t)^{+-1}``; it is not
implemented.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .noise import W_values, WienerPath, WienerSpec, ito_correction, nu_constant
from .operators import (
    NEWTON_MAX,
    NEWTON_TOL,
    EquationDef,
    NewtonError,
    SolveInfo,
    _apply,
    coercivity_constants,
    dual_norm,
    pivot_inner,
    pivot_norm,
    solve_implicit,
    v_norm,
)
from .spatial import Grid

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping and inner-solver settings.

    ``yosida_lambda`` is ``None`` (plain steps), a positive float (every step
    uses the Yosida-regularized drift) or a decreasing sequence (continuation
    towards ``lambda -> 0``, warm-started, the last entry wins).
    """

    dt: float
    steps: int
    newton_tol: float = NEWTON_TOL
    newton_max: int = NEWTON_MAX
    yosida_lambda: float | tuple | None = None
    shift_enabled: bool = False
    lambda_F: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        if isinstance(self.yosida_lambda, list):
            object.__setattr__(self, "yosida_lambda", tuple(self.yosida_lambda))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append(f"time step dt must be positive, got {self.dt}")
        if self.steps < 1:
            out.append(f"number of steps must be >= 1, got {self.steps}")
        if not self.newton_tol > 0:
            out.append("newton_tol must be positive")
        if self.newton_max < 1:
            out.append("newton_max must be >= 1")
        lams = self.yosida_schedule
        if any(not lam > 0 for lam in lams):
            out.append("Yosida parameters must be positive")
        if self.lambda_F < 0:
            out.append("lambda_F must be non-negative")
        if self.lambda_F > 0 and lams:
            out.append("lambda_F and Yosida regularization cannot be combined")
        return out

    @property
    def yosida_schedule(self) -> tuple:
        lam = self.yosida_lambda
        if lam is None:
            return ()
        if isinstance(lam, (int, float)):
            return (float(lam),)
        return tuple(float(v) for v in lam)

    @property
    def T(self) -> float:
        return self.dt * self.steps


@dataclass
class PathSolution:
    """Trajectory of one path: ``y`` (rescaled) and ``X = e^W y``, both ``(N+1, m)``."""

    equation: EquationDef
    grid: Grid
    times: np.ndarray
    W: np.ndarray
    y: np.ndarray
    X: np.ndarray
    newton_iterations: np.ndarray
    shift_rate: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def shifted_y(self) -> np.ndarray:
        """``e^{-(nu+delta) t} y``: the unknown of the strongly monotone formulation."""
        return np.exp(-self.shift_rate * self.times)[:, None] * self.y


class Stepper:
    """Precomputed per-path data for repeated backward-Euler steps."""

    def __init__(self, equation: EquationDef, spec: WienerSpec, path: WienerPath,
                 grid: Grid, cfg: SolverConfig):
        if abs(path.dt - cfg.dt) > 1e-12 * cfg.dt:
            raise ValueError(f"path time step {path.dt} differs from solver dt {cfg.dt}")
        if path.steps < cfg.steps:
            raise ValueError(f"path has {path.steps} steps, solver needs {cfg.steps}")
        self.equation, self.spec, self.path, self.grid, self.cfg = equation, spec, path, grid, cfg
        self.W = W_values(spec, path, grid)
        if np.max(np.abs(self.W[: cfg.steps + 1])) > _EXP_LIMIT:
            raise OverflowError("e^W overflows; use smaller noise coefficients mu_j or a "
                                "shorter horizon T")
        self.mu = ito_correction(spec, grid).values
        if cfg.nu is not None:
            nu = cfg.nu
        elif cfg.shift_enabled:
            nu = nu_constant(spec, equation.pivot, None if grid.is_point else grid)
        else:
            nu = 0.0
        self.nu = nu
        self.shift = (nu + equation.delta) if cfg.shift_enabled else 0.0
        self.info = SolveInfo()

    def times(self) -> np.ndarray:
        return self.cfg.dt * np.arange(self.cfg.steps + 1)

    def step_X(self, n: int, y_n: np.ndarray, X_guess=None) -> np.ndarray:
        """Return ``X_{n+1} = e^{W(t_{n+1})} y_{n+1}``."""
        cfg, d, dt = self.cfg, self.equation, self.cfg.dt
        if not 0 <= n < cfg.steps:
            raise IndexError(f"step index {n} outside 0..{cfg.steps - 1}")
        s = self.shift
        t1 = (n + 1) * dt
        E1 = np.exp(self.W[n + 1])
        rhs = np.exp(s * dt) * E1 * y_n
        weight = 1.0 + dt * (self.mu + s)
        info = SolveInfo()
        try:
            if cfg.yosida_schedule:
                w = self._yosida_step(rhs, weight, t1, X_guess, info, cfg.yosida_schedule)
            else:
                reg = 0.0
                if cfg.lambda_F > 0:
                    p = d.v_exponent
                    reg = dt * cfg.lambda_F * np.exp(-(p - 2.0) * s * t1)
                    if p < 2:
                        weight = weight + dt * cfg.lambda_F
                try:
                    w = solve_implicit(d, self.grid, rhs, weight, dt, t1, X_guess,
                                       cfg.newton_tol, cfg.newton_max, info, reg=reg)
                except NewtonError:
                    if reg:
                        raise
                    # stalled plain Newton: continue along Yosida parameters lambda_k -> 0
                    lams = tuple(dt * 4.0 ** -k for k in range(0, 40) if dt * 4.0 ** -k > 1e-14)
                    w = self._yosida_step(rhs, weight, t1, X_guess, info, lams)
                    w = solve_implicit(d, self.grid, rhs, weight, dt, t1, w,
                                       cfg.newton_tol, cfg.newton_max, info)
        except NewtonError as err:
            raise NewtonError(f"step {n}: {err}", err.residual, step=n) from err
        self.info.iterations += info.iterations
        self.last_iterations = info.iterations
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"step {n}: non-finite state")
        return w

    def _yosida_step(self, rhs, weight, t1, guess, info, lams):
        """Solve ``weight*w + dt*A_lam(w) = rhs`` for each ``lam`` in turn.

        With ``v = J_lam(w)`` the equation becomes ``weight*v + (weight*lam + dt)*A(v) = rhs``
        and ``w = v + lam*A(v)``, where ``A(v)`` is recovered from the equation
        itself (valid for multivalued ``A`` as well).
        """
        d, dt, cfg = self.equation, self.cfg.dt, self.cfg
        v = guess
        w = None
        for lam in lams:
            coef = weight * lam + dt
            v = solve_implicit(d, self.grid, rhs, weight, coef, t1, v, cfg.newton_tol,
                               cfg.newton_max, info)
            w = v + lam * (rhs - weight * v) / coef
        return w

    def step(self, n: int, y_n: np.ndarray) -> np.ndarray:
        return np.exp(-self.W[n + 1]) * self.step_X(n, y_n)


def step(equation: EquationDef, spec: WienerSpec, path: WienerPath, n: int, y_n,
         cfg: SolverConfig, grid: Grid) -> np.ndarray:
    """One backward-Euler step of the rescaled equation: ``y_n -> y_{n+1}``."""
    y_n = np.asarray(y_n, dtype=float)
    if not np.all(np.isfinite(y_n)):
        raise FloatingPointError("non-finite state y_n")
    return Stepper(equation, spec, path, grid, cfg).step(n, y_n)


def solve_path(equation: EquationDef, spec: WienerSpec, path: WienerPath, x,
               cfg: SolverConfig, grid: Grid) -> PathSolution:
    """Integrate the rescaled equation along one path and transform back."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.nodes,):
        raise ValueError(f"initial datum has shape {x.shape}, expected ({grid.nodes},)")
    stepper = Stepper(equation, spec, path, grid, cfg)
    N = cfg.steps
    W = stepper.W[: N + 1]
    y = np.empty((N + 1, grid.nodes))
    X = np.empty_like(y)
    y[0] = x
    X[0] = np.exp(W[0]) * x
    iters = np.zeros(N, dtype=int)
    for n in range(N):
        X[n + 1] = stepper.step_X(n, y[n], X_guess=X[n])
        y[n + 1] = np.exp(-W[n + 1]) * X[n + 1]
        iters[n] = stepper.last_iterations
    return PathSolution(equation, grid, stepper.times(), W, y, X, iters, stepper.shift,
                        {"nu": stepper.nu, "seed": path.seed, "path_index": path.path_index})


# -- functionals of a solved path -------------------------------------------

def regularity_functional(sol: PathSolution, p_prime: float | None = None) -> float:
    """``sum_n dt |e^{W(t_{n+1})} (y_{n+1} - y_n)/dt|_{V'}^{p'}``."""
    d, grid, dt = sol.equation, sol.grid, sol.dt
    p = d.v_exponent
    pc = p / (p - 1.0) if p_prime is None else p_prime
    quot = np.exp(sol.W[1:]) * np.diff(sol.y, axis=0) / dt
    if grid.is_point:
        vals = np.sum(np.abs(quot) ** pc, axis=1) ** (1.0 / pc)
    else:
        vals = np.array([dual_norm(d, grid, q) for q in quot])
    return float(dt * np.sum(vals ** pc))


@dataclass
class LedgerReport:
    """Per-step discrete energy balance and integrated coercivity terms of one path.

    ``residuals[n]`` is ``1/2|X_{n+1}|^2 - 1/2|X_n|^2`` minus the sum of the
    drift, Ito-correction, martingale and quadratic-variation work terms, all
    in the pivot norm.
    """

    residuals: np.ndarray
    drift: np.ndarray
    correction: np.ndarray
    martingale: np.ndarray
    quadratic: np.ndarray
    initial_energy: float
    final_energy: float
    v_integral: float
    h_integral: float
    dt: float

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0


def energy_ledger(sol: PathSolution, spec: WienerSpec, path: WienerPath) -> LedgerReport:
    d, grid, dt = sol.equation, sol.grid, sol.dt
    N = sol.steps
    mu = ito_correction(spec, grid).values
    E = spec.basis_matrix(grid)
    mus = spec.mus
    X = sol.X
    inc = (path.increments[:N] * mus) @ E  # Delta W_n on the nodes

    def ip(a, b):
        return pivot_inner(d, grid, a, b)

    def sq(a):
        return pivot_norm(d, grid, a) ** 2

    energy = np.array([0.5 * sq(X[n]) for n in range(N + 1)])
    drift = np.empty(N)
    corr = np.empty(N)
    mart = np.empty(N)
    quad = np.empty(N)
    for n in range(N):
        eW = np.exp(sol.W[n])
        drift[n] = ip(eW * (sol.y[n + 1] - sol.y[n]), X[n])
        corr[n] = dt * ip(mu * X[n], X[n])
        mart[n] = ip(X[n], X[n] * inc[n])
        quad[n] = 0.5 * dt * sum(mus[j] ** 2 * sq(X[n] * E[j]) for j in range(spec.J))
    residuals = np.diff(energy) - (drift + corr + mart + quad)
    p = d.v_exponent
    v_int = dt * sum(v_norm(d, grid, X[n]) ** p for n in range(1, N + 1))
    h_int = dt * sum(sq(X[n]) for n in range(1, N + 1))
    return LedgerReport(residuals, drift, corr, mart, quad, float(energy[0]),
                        float(energy[-1]), float(v_int), float(h_int), dt)


def coercivity_balance(reports, equation: EquationDef, nu: float, T: float):
    """Ensemble form of the integrated coercivity estimate.

    Returns ``(lhs, rhs)`` with
    ``lhs = 1/2 E|X(T)|^2 + alpha1 E int |X|_V^p`` and
    ``rhs = 1/2 |x|^2 + (|alpha2| + nu) E int |X|_H^2 + |alpha3| T``.
    """
    a1, a2, a3 = coercivity_constants(equation)
    final = np.mean([r.final_energy for r in reports])
    vint = np.mean([r.v_integral for r in reports])
    hint = np.mean([r.h_integral for r in reports])
    init = reports[0].initial_energy
    lhs = final + a1 * vint
    rhs = init + (abs(a2) + nu) * hint + abs(a3) * T
    return float(lhs), float(rhs)


@dataclass
class HolderFit:
    alpha_space: float
    r2_space: float
    alpha_time: float
    r2_time: float


def _loglog_fit(sep, inc):
    keep = inc > 0
    if keep.sum() < 2:
        return float("nan"), float("nan")
    x, z = np.log(sep[keep]), np.log(inc[keep])
    slope, icpt = np.polyfit(x, z, 1)
    pred = slope * x + icpt
    ss_res = np.sum((z - pred) ** 2)
    ss_tot = np.sum((z - z.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def holder_diagnostic(sol: PathSolution, t_min: float | None = None,
                      max_space_fraction: float = 0.125,
                      max_time_fraction: float = 0.0625) -> HolderFit:
    """Empirical Hoelder exponents of ``y = e^{-W} X`` in space and time.

    Maximal increments over dyadic separations (``h, 2h, ...`` and
    ``dt, 2dt, ...``) are regressed on the separation in log-log scale,
    using only times ``t >= t_min`` (default ``T/10``).
    """
    grid = sol.grid
    if grid.is_point:
        raise ValueError("the Hoelder diagnostic needs a spatial grid")
    T = sol.times[-1]
    t_min = 0.1 * T if t_min is None else t_min
    n0 = max(1, int(np.searchsorted(sol.times, t_min - 1e-12)))
    y = sol.y[n0:]
    padded = np.pad(y, ((0, 0), (1, 1)))
    m1 = grid.nodes + 1

    seps, incs = [], []
    k = 1
    while k <= max(1, int(max_space_fraction * m1)):
        incs.append(np.max(np.abs(padded[:, k:] - padded[:, :-k])))
        seps.append(k * grid.h)
        k *= 2
    a_s, r_s = _loglog_fit(np.array(seps), np.array(incs))

    seps, incs = [], []
    nt = y.shape[0]
    k = 1
    while k <= max(1, int(max_time_fraction * sol.steps)) and k < nt:
        incs.append(np.max(np.abs(y[k:] - y[:-k])))
        seps.append(k * sol.dt)
        k *= 2
    a_t, r_t = _loglog_fit(np.array(seps), np.array(incs))
    return HolderFit(a_s, r_s, a_t, r_t)


def drift_residual(sol: PathSolution) -> np.ndarray:
    """``A(X_{n+1})`` for every step (used by the pathwise-equivalence audit)."""
    return np.array([_apply(sol.equation, sol.grid, sol.X[n + 1]) for n in range(sol.steps)])
