"""One-dimensional grids, finite-difference calculus and pivot-space norms.

Nodes are the interior points ``xi_i = i*h``, ``i = 1..m`` of ``[0, L]`` with
``h = L/(m+1)``; the two boundary ghosts carry the value 0.  Edge (flux)
quantities live on the ``m+1`` cell midpoints.  Node sums are weighted by
``h`` (trapezoid rule with zero boundary values), edge sums likewise
(midpoint rule), which makes the discrete gradient and divergence exact
negative adjoints of each other.

A "point" grid describes the finite-dimensional case ``H = V = R^d``: no
spatial structure, unit weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

SPACES = ("L2", "Hminus1", "Rd")
BOUNDARY_CONDITIONS = ("dirichlet", "inflow", "none")


class SpaceMismatchError(ValueError):
    """Raised when a field is used in a space it does not belong to."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[0, length]`` with ``nodes`` interior points."""

    length: float
    nodes: int
    bc: str = "dirichlet"

    def __post_init__(self):
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.bc == "none":
            if self.nodes < 1:
                raise ValueError("a point grid needs at least one component")
        else:
            if self.nodes < 3:
                raise ValueError(f"grid needs at least 3 nodes, got {self.nodes}")
            if not self.length > 0:
                raise ValueError(f"domain length must be positive, got {self.length}")

    @classmethod
    def finite(cls, dim: int = 1) -> "Grid":
        """Grid standing for the finite-dimensional space ``R^dim``."""
        return cls(length=1.0, nodes=dim, bc="none")

    @property
    def is_point(self) -> bool:
        return self.bc == "none"

    @property
    def h(self) -> float:
        if self.is_point:
            return 1.0
        return self.length / (self.nodes + 1)

    @property
    def x(self) -> np.ndarray:
        if self.is_point:
            return np.zeros(self.nodes)
        return self.h * np.arange(1, self.nodes + 1)

    @property
    def edges(self) -> np.ndarray:
        """Midpoints of the ``m+1`` cells, where fluxes live."""
        return self.h * (np.arange(self.nodes + 1) + 0.5)

    # -- array-level calculus ------------------------------------------------

    def grad(self, u: np.ndarray) -> np.ndarray:
        padded = np.concatenate(([0.0], u, [0.0]))
        return np.diff(padded) / self.h

    def div(self, w: np.ndarray) -> np.ndarray:
        if w.shape[-1] != self.nodes + 1:
            raise ValueError(
                f"edge field must have length {self.nodes + 1}, got {w.shape[-1]}")
        return np.diff(w) / self.h

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.div(self.grad(u))

    def stiffness_bands(self) -> np.ndarray:
        """Banded storage of ``-Delta_h`` for :func:`scipy.linalg.solve_banded`."""
        m, h2 = self.nodes, self.h ** 2
        ab = np.empty((3, m))
        ab[0] = -1.0 / h2
        ab[1] = 2.0 / h2
        ab[2] = -1.0 / h2
        return ab

    def solve_stiffness(self, f: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.stiffness_bands(), f)

    def apply_stiffness(self, v: np.ndarray) -> np.ndarray:
        return -self.laplacian(v)

    def inner(self, u: np.ndarray, v: np.ndarray, space: str = "L2") -> float:
        """Discrete inner product of the pivot space ``space``."""
        if space == "Hminus1":
            return self.h * float(np.dot(self.solve_stiffness(u), v))
        return self.h * float(np.dot(u, v))

    def edge_inner(self, w: np.ndarray, g: np.ndarray) -> float:
        return self.h * float(np.dot(w, g))


@dataclass(frozen=True)
class Field:
    """Nodal values on a grid, tagged with the pivot space they belong to."""

    grid: Grid
    values: np.ndarray
    space: str = "L2"
    on_edges: bool = field(default=False)

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown space tag {self.space!r}")
        values = np.array(self.values, dtype=float)
        expected = self.grid.nodes + 1 if self.on_edges else self.grid.nodes
        if values.shape != (expected,):
            raise ValueError(f"field has shape {values.shape}, grid expects ({expected},)")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.space, self.on_edges)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


def _require_dirichlet(grid: Grid):
    if grid.is_point:
        raise SpaceMismatchError("spatial calculus is undefined on a point grid")


def gradient(u: Field) -> Field:
    """Forward differences of ``u`` with zero boundary ghosts (``m+1`` edges)."""
    if u.on_edges or u.space == "Rd":
        raise SpaceMismatchError("gradient expects a nodal L2 or H^-1 field")
    _require_dirichlet(u.grid)
    return Field(u.grid, u.grid.grad(u.values), u.space, on_edges=True)


def divergence(w: Field) -> Field:
    """Backward differences of an edge field; the negative adjoint of :func:`gradient`."""
    if not w.on_edges:
        raise SpaceMismatchError("divergence expects an edge field")
    _require_dirichlet(w.grid)
    return Field(w.grid, w.grid.div(w.values), w.space)


def stiffness_solve(f: Field) -> Field:
    """Solve ``-Delta_h v = f`` with homogeneous Dirichlet data (direct tridiagonal solve)."""
    if f.on_edges:
        raise SpaceMismatchError("stiffness_solve expects a nodal field")
    _require_dirichlet(f.grid)
    return Field(f.grid, f.grid.solve_stiffness(f.values), f.space)


def lp_norm(grid: Grid, u: np.ndarray, p: float) -> float:
    return float((grid.h * np.sum(np.abs(u) ** p)) ** (1.0 / p))


def hminus1_norm(grid: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(max(grid.inner(u, u, "Hminus1"), 0.0)))


def dual_flux(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Edge flux ``v`` with ``-div v = u`` and zero mean.

    The constant of integration is the one selected by the discrete Dirichlet
    Green function, i.e. ``v = grad((-Delta_h)^-1 u)``.
    """
    return grid.grad(grid.solve_stiffness(u))


def norm(u, which: str = "L2", p: float = 2.0, grid: Grid | None = None) -> float:
    """Discrete norm of ``u``.

    Parameters
    ----------
    u : Field or ndarray
        Nodal values (or edge values for ``which="Lp"`` on an edge field).
    which : {"L2", "Lp", "W1p", "Hminus1", "dual_W"}
        ``W1p`` is the ``L^p`` norm of the gradient, ``dual_W`` is the
        ``L^p`` norm (with ``p`` the conjugate exponent supplied by the
        caller) of the zero-mean flux representing ``u`` as a divergence.
    p : float
        Exponent for the ``Lp``, ``W1p`` and ``dual_W`` norms.
    grid : Grid, optional
        Required when ``u`` is a plain array.
    """
    if isinstance(u, Field):
        grid, values = u.grid, u.values
    else:
        if grid is None:
            raise ValueError("a grid is needed to measure a raw array")
        values = np.asarray(u, dtype=float)
    if which in ("Lp", "W1p", "dual_W") and not p > 1:
        raise ValueError(f"exponent must exceed 1, got {p}")
    if which == "L2":
        return lp_norm(grid, values, 2.0)
    if which == "Lp":
        return lp_norm(grid, values, p)
    if grid.is_point:
        raise SpaceMismatchError(f"norm {which!r} needs a spatial grid")
    if which == "W1p":
        return lp_norm(grid, grid.grad(values), p)
    if which == "Hminus1":
        return hminus1_norm(grid, values)
    if which == "dual_W":
        return lp_norm(grid, dual_flux(grid, values), p)
    raise ValueError(f"unsupported norm {which!r}")


def dirichlet_eigenpairs(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and L2-normalized eigenvectors of ``-Delta_h`` (closed form)."""
    m, h, L = grid.nodes, grid.h, grid.length
    k = np.arange(1, m + 1)
    lam = 4.0 / h ** 2 * np.sin(k * np.pi * h / (2 * L)) ** 2
    vecs = np.sin(np.outer(grid.x, k) * np.pi / L) * np.sqrt(2.0 / L)
    return lam, vecs
