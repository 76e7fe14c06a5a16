"""Truncated Wiener field ``W(t, xi) = sum_j mu_j e_j(xi) beta_j(t)``.

Brownian motions are drawn from counter-based Philox streams keyed by
``(seed, path_index, mode)`` so that every path of an ensemble can be
regenerated on its own, in any order and on any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spatial import Field, Grid

BASES = ("const", "sin", "cos")


@dataclass(frozen=True)
class Mode:
    """One term ``mu * e(xi)`` of the noise expansion.

    ``basis`` is ``"const"`` (``e = 1``), ``"sin"`` (``e = sin(k pi xi / L)``)
    or ``"cos"`` (``e = cos(k pi xi / L)``).
    """

    mu: float
    basis: str = "const"
    k: int = 1

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; expected one of {BASES}")
        if self.basis != "const" and self.k < 1:
            raise ValueError(f"wave number must be >= 1, got {self.k}")

    def values(self, grid: Grid) -> np.ndarray:
        if self.basis == "const":
            return np.ones(grid.nodes)
        if grid.is_point:
            raise ValueError("only the constant basis is available on a point grid")
        arg = self.k * np.pi * grid.x / grid.length
        return np.sin(arg) if self.basis == "sin" else np.cos(arg)

    def sup(self) -> float:
        """``|e|_inf`` on the closed domain."""
        return 1.0

    def grad_sup(self, length: float) -> float:
        return 0.0 if self.basis == "const" else self.k * np.pi / length


@dataclass(frozen=True)
class WienerSpec:
    """Coefficients and basis functions of the noise, truncated to ``truncation`` modes."""

    modes: tuple
    truncation: int | None = None
    length: float = 1.0

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(**m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        if self.truncation is None:
            object.__setattr__(self, "truncation", len(modes))
        if not 0 <= self.truncation <= len(modes):
            raise ValueError(
                f"truncation {self.truncation} outside 0..{len(modes)} available modes")

    @property
    def active(self) -> tuple:
        return self.modes[: self.truncation]

    @property
    def J(self) -> int:
        return self.truncation

    @property
    def mus(self) -> np.ndarray:
        return np.array([m.mu for m in self.active], dtype=float)

    def basis_matrix(self, grid: Grid) -> np.ndarray:
        """``(J, m)`` array of basis values at the grid nodes."""
        return _basis_matrix(self, grid)

    def gradient_constant(self) -> float:
        """``sum_j mu_j^2 |grad e_j|_inf^2`` (finite for the built-in bases)."""
        return float(sum(m.mu ** 2 * m.grad_sup(self.length) ** 2 for m in self.active))


@lru_cache(maxsize=64)
def _basis_matrix(spec: WienerSpec, grid: Grid) -> np.ndarray:
    if spec.J == 0:
        out = np.zeros((0, grid.nodes))
    else:
        out = np.array([m.values(grid) for m in spec.active])
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Realized Brownian values ``beta_j(t_n)`` on ``t_n = n dt``, ``n = 0..N``."""

    dt: float
    increments: np.ndarray  # (N, J)
    seed: int
    path_index: int

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        beta = np.zeros((inc.shape[0] + 1, inc.shape[1]))
        np.cumsum(inc, axis=0, out=beta[1:])
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def T(self) -> float:
        return self.dt * self.steps

    def coarsen(self, factor: int) -> "WienerPath":
        """Path on the grid ``factor*dt`` whose increments are sums of ours."""
        if factor < 1 or self.steps % factor:
            raise ValueError(f"cannot coarsen {self.steps} steps by a factor {factor}")
        if factor == 1:
            return self
        inc = self.increments.reshape(self.steps // factor, factor, -1).sum(axis=1)
        return WienerPath(self.dt * factor, inc, self.seed, self.path_index)


def mode_stream(seed: int, path_index: int, mode: int) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, path_index, mode)``."""
    ss = np.random.SeedSequence([int(seed), int(path_index), int(mode)])
    return np.random.Generator(np.random.Philox(ss))


def sample_path(spec: WienerSpec, dt: float, steps: int, seed: int,
                path_index: int = 0) -> WienerPath:
    """Draw one set of Brownian trajectories on ``t_n = n dt``, ``n = 0..steps``."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if steps < 1:
        raise ValueError(f"need at least one time step, got {steps}")
    if spec.J == 0:
        raise ValueError("noise truncation J must be at least 1")
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path index must be non-negative")
    sd = np.sqrt(dt)
    inc = np.empty((steps, spec.J))
    for j in range(spec.J):
        inc[:, j] = sd * mode_stream(seed, path_index, j).standard_normal(steps)
    return WienerPath(dt, inc, seed, path_index)


def _check_index(path: WienerPath, n: int):
    if not 0 <= n <= path.steps:
        raise IndexError(f"time index {n} outside 0..{path.steps}")


def _space(grid: Grid) -> str:
    return "Rd" if grid.is_point else "L2"


def W_values(spec: WienerSpec, path: WienerPath, grid: Grid) -> np.ndarray:
    """All nodal noise values, shape ``(N+1, m)``."""
    return (path.beta * spec.mus) @ spec.basis_matrix(grid)


def eval_W(spec: WienerSpec, path: WienerPath, n: int, grid: Grid) -> Field:
    """Nodal field ``W(t_n, xi_i)``."""
    _check_index(path, n)
    return Field(grid, (path.beta[n] * spec.mus) @ spec.basis_matrix(grid), _space(grid))


def exp_multiplier(spec: WienerSpec, path: WienerPath, n: int, grid: Grid,
                   sign: int = 1) -> Field:
    """Nodal field ``exp(sign * W(t_n))``; strictly positive."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    W = eval_W(spec, path, n, grid)
    return Field(grid, np.exp(sign * W.values), W.space)


def ito_correction(spec: WienerSpec, grid: Grid) -> Field:
    """``mu(xi) = 1/2 sum_j mu_j^2 e_j(xi)^2``."""
    E = spec.basis_matrix(grid)
    vals = 0.5 * (spec.mus ** 2) @ (E ** 2) if spec.J else np.zeros(grid.nodes)
    return Field(grid, vals, _space(grid))


def multiplier_norm_hminus1(grid: Grid, e: np.ndarray, tol: float = 1e-12,
                            maxiter: int = 10_000, seed: int = 0) -> float:
    """Operator norm of ``v -> e*v`` on discrete ``H^-1`` by power iteration.

    With ``K = -Delta_h`` the squared norm is the top eigenvalue of
    ``T = K M K^-1 M``, which is self-adjoint in the ``H^-1`` inner product.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.nodes)
    v /= np.sqrt(grid.inner(v, v, "Hminus1"))
    sigma = 0.0
    for _ in range(maxiter):
        w = grid.apply_stiffness(e * grid.solve_stiffness(e * v))
        new_sigma = grid.inner(w, v, "Hminus1")
        v = w / np.sqrt(grid.inner(w, w, "Hminus1"))
        if abs(new_sigma - sigma) <= tol * abs(new_sigma):
            sigma = new_sigma
            break
        sigma = new_sigma
    return float(np.sqrt(sigma))


def gamma_tilde(spec: WienerSpec, pivot: str = "L2", grid: Grid | None = None) -> np.ndarray:
    """Per-mode constants with ``|y e_j|_H <= gamma_j |e_j|_inf |y|_H``, each >= 1."""
    if pivot != "Hminus1":
        return np.ones(spec.J)
    if grid is None:
        raise ValueError("the H^-1 multiplier constants need a grid")
    E = spec.basis_matrix(grid)
    out = np.empty(spec.J)
    for j, mode in enumerate(spec.active):
        out[j] = max(1.0, multiplier_norm_hminus1(grid, E[j]) / mode.sup())
    return out


def nu_constant(spec: WienerSpec, pivot: str = "L2", grid: Grid | None = None) -> float:
    """``nu = sum_j mu_j^2 gamma_j^2 |e_j|_inf^2``."""
    if spec.J == 0:
        return 0.0
    sups = np.array([m.sup() for m in spec.active])
    gam = gamma_tilde(spec, pivot, grid)
    return float(np.sum(spec.mus ** 2 * gam ** 2 * sups ** 2))


def sup_W_samples(spec: WienerSpec, grid: Grid, dt: float, steps: int, paths: int,
                  seed: int) -> np.ndarray:
    """``sup_{t<=T} |W(t)|_inf`` for paths ``0..paths-1``."""
    out = np.empty(paths)
    for i in range(paths):
        W = W_values(spec, sample_path(spec, dt, steps, seed, i), grid)
        out[i] = np.max(np.abs(W))
    return out


def fernique_diagnostic(spec: WienerSpec, grid: Grid, dt: float, steps: int,
                        paths: int, q: float, seed: int = 0) -> float:
    """Monte-Carlo estimate of ``E exp(q sup_t |W(t)|_inf)``."""
    if paths < 100:
        raise ValueError(f"need at least 100 paths, got {paths}")
    if np.all(spec.mus == 0):
        return 1.0
    sups = sup_W_samples(spec, grid, dt, steps, paths, seed)
    return float(np.mean(np.exp(q * sups)))
