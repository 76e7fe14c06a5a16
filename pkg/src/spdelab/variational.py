"""Space-time convex minimization (Brezis-Ekeland) for subgradient drifts.

For ``A = d phi`` on a fixed Brownian path the rescaled equation is a
gradient flow in the time-dependent weighted pivot ``<u, v>_t = int e^{2W(t)} u v``,
and the trajectory minimizes

    J(y) = Phi(y) + Phi*(-By) + <By, y>,   y(0) = x,

with ``Phi(y) = int (phi(e^W y) - nu |e^W y|^2) dt`` and ``By = y' + (mu + 2 nu) y``
(``2 nu`` because ``nu`` multiplies the squared norm, whose gradient is ``2 nu y``).
Fenchel-Young gives ``J >= 0`` with equality exactly on solutions.

The discrete functional uses the backward-Euler quotient at ``t_1..t_N`` and
the weights ``dt h e^{2 W(t_n)}``, so its unique minimizer is the trajectory
of :func:`spdelab.rescale.solve_path` with the shift disabled.  ``J`` of the
returned minimizer is the Fenchel duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg

from .noise import W_values, WienerPath, WienerSpec, ito_correction, nu_constant
from .operators import EquationDef, _apply, flux_fn, reaction_potential, solve_implicit
from .rescale import SolverConfig
from .spatial import Grid


class ConvergenceError(RuntimeError):
    """Raised when the objective stops decreasing."""


@dataclass
class SpaceTimeField:
    """Nodal values ``y(t_n, xi_i)``, shape ``(N+1, m)``; row 0 is pinned to ``x``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    history: list = field(default_factory=list)
    gap: float = float("nan")
    scale: float = float("nan")

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != (len(self.times), self.grid.nodes):
            raise ValueError(f"values have shape {self.values.shape}, expected "
                             f"({len(self.times)}, {self.grid.nodes})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("space-time field contains non-finite values")

    @property
    def x(self) -> np.ndarray:
        return self.values[0]


def phi_star_pointwise(s, p: float):
    """Conjugate of ``|r|^p / p``: ``|s|^{p'} / p'``."""
    if not p > 1:
        raise ValueError(f"exponent must exceed 1, got {p}")
    pc = p / (p - 1.0)
    return np.abs(s) ** pc / pc


def _check_def(d: EquationDef):
    if d.kind != "PLaplacianReaction":
        raise ValueError(f"the variational route needs a subgradient drift, got {d.kind}")
    if d.reaction == "sign":
        raise ValueError("nonsmooth reaction 'sign' is not supported by the variational solver")
    if d.reaction != "none" and d.coef < 0:
        raise ValueError("reaction with negative coefficient has a nonconvex potential")


def convexity_margin(d: EquationDef, grid: Grid, nu: float) -> float:
    """Lower bound of the Hessian of ``phi_h/h - nu |.|^2`` over all states.

    Negative values mean the subtracted ``nu`` term destroys convexity (for
    ``p > 2`` the flux has no curvature at zero gradients), so ``J`` may have
    a positive minimum and the route does not apply.
    """
    if d.reaction == "linear":
        floor = d.coef
    elif d.reaction == "power" and d.q == 1.0:
        floor = d.coef
    else:
        floor = 0.0
    if d.flux == "linear" or d.p == 2.0:
        lam1 = 4.0 / grid.h ** 2 * np.sin(np.pi * grid.h / (2 * grid.length)) ** 2
        floor += lam1
    elif d.p < 2.0:
        floor = np.inf
    return float(floor - 2.0 * nu)


def phi_h(d: EquationDef, grid: Grid, u) -> float:
    """Discrete energy ``h sum F(grad u) + h sum Psi(u)`` with ``grad phi_h = h A``."""
    g = grid.grad(u)
    if d.flux == "linear":
        F = 0.5 * g ** 2
    else:
        F = np.abs(g) ** d.p / d.p
    return float(grid.h * (np.sum(F) + np.sum(reaction_potential(d, u))))


class _Problem:
    """Discrete ``J`` and its gradient for one path."""

    def __init__(self, d, spec, path, x, cfg, grid):
        _check_def(d)
        self.d, self.grid, self.cfg = d, grid, cfg
        self.N, self.dt, self.h = cfg.steps, cfg.dt, grid.h
        self.x = np.asarray(x, dtype=float)
        W = W_values(spec, path, grid)[: self.N + 1]
        self.E = np.exp(W)
        self.mu = ito_correction(spec, grid).values
        self.nu = cfg.nu if cfg.nu is not None else nu_constant(spec, "L2", grid)
        if convexity_margin(d, grid, self.nu) < 0:
            raise ValueError(f"Phi is not convex for nu = {self.nu:.6g} with this drift; "
                             "pass a smaller nu split through SolverConfig(nu=...)")
        self.c = self.mu + 2.0 * self.nu
        self.w = self.dt * self.h * self.E[1:] ** 2  # pairing weights at t_1..t_N
        self._u = np.zeros((self.N, grid.nodes))  # warm starts for the inner solves

    def full(self, z):
        Y = np.empty((self.N + 1, self.grid.nodes))
        Y[0] = self.x
        Y[1:] = z.reshape(self.N, -1)
        return Y

    def B(self, Y):
        return np.diff(Y, axis=0) / self.dt + self.c * Y[1:]

    def BT(self, Z):
        """Adjoint of ``B`` restricted to the free rows (plain Euclidean pairing)."""
        out = Z * (1.0 / self.dt + self.c)
        out[:-1] -= Z[1:] / self.dt
        return out

    def phi(self, Y):
        d, g, E = self.d, self.grid, self.E
        val = 0.0
        for n in range(1, self.N + 1):
            u = E[n] * Y[n]
            val += phi_h(d, g, u) - self.nu * self.h * np.dot(u, u)
        return self.dt * val

    def phi_grad(self, Y):
        out = np.empty((self.N, self.grid.nodes))
        for n in range(1, self.N + 1):
            u = self.E[n] * Y[n]
            out[n - 1] = self.dt * self.h * self.E[n] * (_apply(self.d, self.grid, u) - 2.0 * self.nu * u)
        return out

    def phi_star(self, V, Y=None):
        """``Phi*(V)`` for ``V`` at ``t_1..t_N`` and the maximizers' gradient.

        ``Y`` supplies starting guesses ``e^W y`` for the inner solves (exact
        maximizers at the minimizer of ``J``).
        """
        d, g = self.d, self.grid
        val = 0.0
        grad = np.empty_like(V)
        for k in range(self.N):
            e = self.E[k + 1]
            # maximizer u of  h (e V) . u - phi_h(u) + nu h |u|^2
            guess = self._u[k] if Y is None else e * Y[k + 1]
            u = solve_implicit(d, g, e * V[k], -2.0 * self.nu, 1.0, u0=guess,
                               tol=1e-14, maxiter=100)
            self._u[k] = u
            val += self.h * np.dot(e * V[k], u) - phi_h(d, g, u) + self.nu * self.h * np.dot(u, u)
            grad[k] = self.dt * self.h * e * u
        return self.dt * val, grad

    def terms(self, Y):
        BY = self.B(Y)
        phi = self.phi(Y)
        pstar, gstar = self.phi_star(-BY, Y)
        pair = float(np.sum(self.w * BY * Y[1:]))
        return phi, pstar, pair, BY, gstar

    def value_and_grad(self, z):
        Y = self.full(z)
        phi, pstar, pair, BY, gstar = self.terms(Y)
        grad = self.phi_grad(Y) - self.BT(gstar)
        grad += self.BT(self.w * Y[1:]) + self.w * BY
        return phi + pstar + pair, grad.ravel()


def phi(d: EquationDef, y: SpaceTimeField, spec: WienerSpec, path: WienerPath,
        nu: float | None = None) -> float:
    """``sum_n dt (phi_h(e^W y_n) - nu h |e^W y_n|^2)`` over ``t_1..t_N``."""
    N = len(y.times) - 1
    dt = float(y.times[1] - y.times[0])
    cfg = SolverConfig(dt, N, nu=nu)
    return _Problem(d, spec, path, y.x, cfg, y.grid).phi(y.values)


def minimize_bem(d: EquationDef, spec: WienerSpec, path: WienerPath, x, cfg: SolverConfig,
                 grid: Grid, tol: float = 1e-12, maxiter: int = 5000,
                 stall: int = 100) -> SpaceTimeField:
    """Minimize the discrete Brezis-Ekeland functional along one path.

    Linear drifts make ``J`` quadratic and its minimizer is found by
    conjugate gradients on the normal equations; otherwise L-BFGS is run on
    ``(J, grad J)``.  ``history`` records ``(iteration, objective, gap)``
    where the gap is the Fenchel residual ``Phi + Phi* - <u, y>``, equal to
    ``J`` itself.

    Raises
    ------
    ConvergenceError
        If the objective fails to decrease over ``stall`` consecutive
        iterations before convergence.
    """
    prob = _Problem(d, spec, path, x, cfg, grid)
    N, m = cfg.steps, grid.nodes
    times = cfg.dt * np.arange(N + 1)
    z0 = np.tile(prob.x, N)
    history = []
    best = [np.inf, 0]

    def record(z):
        J, _ = prob.value_and_grad(z)
        it = len(history)
        history.append((it, J, J))
        if J < best[0] * (1 - 1e-15) or it == 0:
            best[0], best[1] = J, it
        elif it - best[1] >= stall:
            raise ConvergenceError(f"objective has not decreased for {stall} iterations "
                                   f"(best {best[0]:.3e} at iteration {best[1]})")

    if d.linear:
        _, g0 = prob.value_and_grad(np.zeros(N * m))
        H = LinearOperator((N * m, N * m), matvec=lambda v: prob.value_and_grad(v)[1] - g0,
                           dtype=float)
        # J is quadratic: grad J(z) = H z + g0
        z, info = cg(H, -g0, x0=z0, rtol=tol, atol=0.0, maxiter=maxiter, callback=record)
        if info > 0:
            raise ConvergenceError(f"conjugate gradients stopped after {info} iterations")
    else:
        res = minimize(prob.value_and_grad, z0, jac=True, method="L-BFGS-B", callback=record,
                       options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-13, "maxcor": 30})
        z = res.x
    Y = prob.full(z)
    phi_v, pstar, pair, _, _ = prob.terms(Y)
    gap = phi_v + pstar + pair
    history.append((len(history), gap, gap))
    out = SpaceTimeField(grid, times, Y, history)
    out.gap = float(gap)
    out.scale = float(max(abs(phi_v), abs(pstar), abs(pair)))
    return out
