"""Monotone drift operators ``A(t): V -> V'`` on a 1D grid, their resolvents and probes.

All operators act on nodal arrays and return nodal arrays.  For the ``H^-1``
pivot (porous medium) the returned vector is ``-Delta_h psi(u)``, whose
``H^-1`` pairing with ``v`` is ``h * psi(u) . v``.

Implicit equations of the form ``d*u + c*A(u) = f`` (``d``, ``c`` positive
nodal weights) are solved by damped Newton; every built-in Jacobian is
tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .spatial import Field, Grid, hminus1_norm, lp_norm, norm

KINDS = ("PLaplacianReaction", "PorousMedium", "Transport", "FiniteDimGraph")
PIVOT_OF_KIND = {
    "PLaplacianReaction": "L2",
    "PorousMedium": "Hminus1",
    "Transport": "L2",
    "FiniteDimGraph": "Rd",
}
FLUXES = ("plap", "linear")
REACTIONS = ("none", "power", "linear", "sign")
GRAPHS = ("zero", "linear", "cubic", "power", "sign")

NEWTON_TOL = 1e-10
NEWTON_MAX = 50
_EPS = np.finfo(float).eps


class NewtonError(RuntimeError):
    """Inner Newton solve did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class PivotMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class EquationDef:
    """Which drift ``A`` to use and its coefficients.

    ``PLaplacianReaction``: ``-div(a(grad u)) + psi(u)`` with
    ``a(r) = |r|^(p-2) r`` (``flux="plap"``) or ``a(r) = r``, and
    ``psi(r) = c |r|^(q-1) r`` (``"power"``), ``c r`` (``"linear"``) or the
    multivalued ``c sign(r)`` (``"sign"``; resolvent only).

    ``PorousMedium``: ``-Delta psi(u)``, ``psi(r) = c |r|^(p-2) r``, ``H^-1`` pivot.

    ``Transport``: ``-a du/dxi + b u + lam |u|^(p-2) u``, upwinded, zero inflow data.

    ``FiniteDimGraph``: pointwise ``F`` on ``R^d``.
    """

    kind: str
    p: float = 2.0
    q: float = 2.0
    flux: str = "plap"
    reaction: str = "none"
    coef: float = 1.0
    velocity: float = 1.0
    b: float = 0.0
    lam: float = 1.0
    graph: str = "zero"
    pivot: str | None = None
    delta: float = 0.0

    def __post_init__(self):
        if self.pivot is None and self.kind in PIVOT_OF_KIND:
            object.__setattr__(self, "pivot", PIVOT_OF_KIND[self.kind])
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            return [f"kind must be one of {KINDS}, got {self.kind!r}"]
        want = PIVOT_OF_KIND[self.kind]
        if self.pivot != want:
            out.append(f"pivot invariant: {self.kind} requires pivot {want!r}, got {self.pivot!r}")
        if not self.p > 1:
            out.append(f"exponent p must exceed 1, got {self.p}")
        if self.flux not in FLUXES:
            out.append(f"flux must be one of {FLUXES}, got {self.flux!r}")
        if self.flux == "linear" and self.p != 2:
            out.append("linear flux a(r)=r requires p = 2")
        if self.reaction not in REACTIONS:
            out.append(f"reaction must be one of {REACTIONS}, got {self.reaction!r}")
        if self.reaction == "power" and not self.q >= 1:
            out.append(f"reaction exponent q must be >= 1, got {self.q}")
        if self.graph not in GRAPHS:
            out.append(f"graph must be one of {GRAPHS}, got {self.graph!r}")
        if self.coef < 0:
            out.append("coefficient c must be non-negative (monotone nonlinearity)")
        if self.kind == "PorousMedium" and not self.coef > 0:
            out.append("porous-medium coefficient must be positive")
        if self.kind == "Transport":
            if not self.lam > 0:
                out.append(f"transport damping lambda must be positive, got {self.lam}")
            if self.p < 2:
                out.append("transport requires p >= 2")
        if self.delta < 0:
            out.append(f"monotonicity shift delta must be >= 0, got {self.delta}")
        return out

    @property
    def multivalued(self) -> bool:
        return (self.kind == "PLaplacianReaction" and self.reaction == "sign") or (
            self.kind == "FiniteDimGraph" and self.graph == "sign")

    @property
    def linear(self) -> bool:
        if self.kind == "PLaplacianReaction":
            return self.p == 2 and self.reaction in ("none", "linear")
        if self.kind == "PorousMedium":
            return self.p == 2
        if self.kind == "Transport":
            return self.p == 2
        return self.graph in ("zero", "linear") or (self.graph == "power" and self.p == 2)

    @property
    def pointwise(self) -> bool:
        return self.kind == "FiniteDimGraph"

    @property
    def v_exponent(self) -> float:
        """Exponent ``p`` of the coercivity bound."""
        if self.kind == "FiniteDimGraph":
            return {"cubic": 4.0, "power": self.p}.get(self.graph, 2.0)
        return self.p


def heat(**kw) -> EquationDef:
    return EquationDef("PLaplacianReaction", p=2.0, flux="linear", **kw)


def p_laplacian(p: float, reaction: str = "none", q: float = 2.0, coef: float = 1.0,
                **kw) -> EquationDef:
    return EquationDef("PLaplacianReaction", p=p, flux="plap", reaction=reaction, q=q,
                       coef=coef, **kw)


def porous_medium(p: float = 4.0, coef: float = 1.0, **kw) -> EquationDef:
    return EquationDef("PorousMedium", p=p, coef=coef, **kw)


def transport(velocity: float = 1.0, b: float = 0.0, lam: float = 1.0, p: float = 2.0,
              **kw) -> EquationDef:
    return EquationDef("Transport", p=p, velocity=velocity, b=b, lam=lam, **kw)


def finite_graph(graph: str, coef: float = 1.0, p: float = 2.0, **kw) -> EquationDef:
    return EquationDef("FiniteDimGraph", graph=graph, coef=coef, p=p, **kw)


# -- scalar nonlinearities ---------------------------------------------------

def odd_power(r, e):
    """``|r|^(e-1) r``."""
    return np.abs(r) ** (e - 1.0) * r


def _odd_power_deriv(r, e):
    if e >= 1.0:
        return e * np.abs(r) ** (e - 1.0)
    return e * np.maximum(np.abs(r), 1e-12) ** (e - 1.0)


def flux_fn(d: EquationDef, g):
    if d.flux == "linear":
        return g, np.ones_like(g)
    return odd_power(g, d.p - 1.0), _odd_power_deriv(g, d.p - 1.0)


def reaction_fn(d: EquationDef, u, eps: float = 0.0):
    """Reaction ``psi`` and derivative; ``eps > 0`` selects the Yosida-regularized sign."""
    c = d.coef
    if d.reaction == "none":
        return np.zeros_like(u), np.zeros_like(u)
    if d.reaction == "linear":
        return c * u, np.full_like(u, c)
    if d.reaction == "power":
        return c * odd_power(u, d.q), c * _odd_power_deriv(u, d.q)
    if eps > 0:
        return yosida_sign(u, eps, c)
    return c * np.sign(u), np.zeros_like(u)


def reaction_potential(d: EquationDef, u):
    c = d.coef
    if d.reaction == "none":
        return np.zeros_like(u)
    if d.reaction == "linear":
        return 0.5 * c * u ** 2
    if d.reaction == "power":
        return c * np.abs(u) ** (d.q + 1) / (d.q + 1)
    return c * np.abs(u)


def yosida_sign(u, eps: float, c: float = 1.0):
    """Yosida approximation of the graph ``c * sign`` and its derivative."""
    val = np.clip(u / eps, -c, c)
    return val, np.where(np.abs(u) < c * eps, 1.0 / eps, 0.0)


def graph_fn(d: EquationDef, u, eps: float = 0.0):
    c = d.coef
    if d.graph == "zero":
        return np.zeros_like(u), np.zeros_like(u)
    if d.graph == "linear":
        return c * u, np.full_like(u, c)
    if d.graph == "cubic":
        return c * u ** 3, 3.0 * c * u ** 2
    if d.graph == "power":
        return c * odd_power(u, d.p - 1.0), c * _odd_power_deriv(u, d.p - 1.0)
    if eps > 0:
        return yosida_sign(u, eps, c)
    return c * np.sign(u), np.zeros_like(u)


def porous_fn(d: EquationDef, u):
    return d.coef * odd_power(u, d.p - 1.0), d.coef * _odd_power_deriv(u, d.p - 1.0)


def soft_threshold(z, tau):
    """Proximal map of ``tau*|.|``."""
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


# -- operator application ----------------------------------------------------

def _upwind(d: EquationDef, grid: Grid, u):
    """``-a du/dxi`` with the difference taken on the upwind side; ghosts are 0."""
    a = d.velocity
    padded = np.concatenate(([0.0], u, [0.0]))
    if a >= 0:
        du = (padded[2:] - padded[1:-1]) / grid.h
    else:
        du = (padded[1:-1] - padded[:-2]) / grid.h
    return -a * du


def _apply_G(d: EquationDef, grid: Grid, u):
    """Gradient of ``|u|_V^p / p`` (the ``F`` of the elliptic regularization, without ``+I``)."""
    e = d.v_exponent - 1.0
    if d.kind == "PLaplacianReaction":
        return -grid.div(odd_power(grid.grad(u), e))
    if d.kind == "PorousMedium":
        return grid.apply_stiffness(odd_power(u, e))
    return odd_power(u, e)


def _G_bands(d: EquationDef, grid: Grid, u):
    m, h = grid.nodes, grid.h
    e = d.v_exponent - 1.0
    lower, upper = np.zeros(m), np.zeros(m)
    if d.kind == "PLaplacianReaction":
        da = _odd_power_deriv(grid.grad(u), e)
        diag = (da[1:] + da[:-1]) / h ** 2
        upper[:-1] = -da[1:-1] / h ** 2
        lower[1:] = -da[1:-1] / h ** 2
    elif d.kind == "PorousMedium":
        dg = _odd_power_deriv(u, e)
        diag = 2.0 * dg / h ** 2
        upper[:-1] = -dg[1:] / h ** 2
        lower[1:] = -dg[:-1] / h ** 2
    else:
        diag = _odd_power_deriv(u, e)
    return lower, diag, upper


def _huber(u, eps, c):
    """Potential of :func:`yosida_sign` (Moreau envelope of ``c|.|``)."""
    a = np.abs(u)
    return np.where(a <= c * eps, u ** 2 / (2.0 * eps), c * a - 0.5 * c ** 2 * eps)


def _potential_density(d: EquationDef, grid: Grid, u, eps: float = 0.0):
    """Nodal contributions ``P_i`` with ``grad sum_i P_i = h A(u)``.

    Defined for ``PLaplacianReaction`` (flux energy split evenly between the
    two nodes of each edge is not needed: only the sum matters, so the edge
    terms are folded into node ``i``) and ``FiniteDimGraph``.
    """
    h = grid.h
    if d.kind == "PLaplacianReaction":
        g = grid.grad(u)
        F = 0.5 * g ** 2 if d.flux == "linear" else np.abs(g) ** d.p / d.p
        if d.reaction == "sign" and eps > 0:
            R = _huber(u, eps, d.coef)
        else:
            R = reaction_potential(d, u)
        out = h * R
        out[0] += h * F[-1]  # fold the edge energy into the node sum
        out += h * F[:-1]
        return out
    c = d.coef
    if d.graph == "zero":
        return np.zeros_like(u)
    if d.graph == "linear":
        return 0.5 * c * u ** 2
    if d.graph == "cubic":
        return 0.25 * c * u ** 4
    if d.graph == "power":
        return c * np.abs(u) ** d.p / d.p
    if eps > 0:
        return _huber(u, eps, c)
    return c * np.abs(u)


def _G_potential(d: EquationDef, grid: Grid, u) -> float:
    """``|u|_V^p / p`` in the node-weighted discrete norm (gradient ``h G(u)``)."""
    p = d.v_exponent
    if d.kind == "PLaplacianReaction":
        return grid.h * float(np.sum(np.abs(grid.grad(u)) ** p)) / p
    return grid.h * float(np.sum(np.abs(u) ** p)) / p


def _apply(d: EquationDef, grid: Grid, u, eps: float = 0.0):
    if d.kind == "PLaplacianReaction":
        a, _ = flux_fn(d, grid.grad(u))
        psi, _ = reaction_fn(d, u, eps)
        return -grid.div(a) + psi
    if d.kind == "PorousMedium":
        psi, _ = porous_fn(d, u)
        return grid.apply_stiffness(psi)
    if d.kind == "Transport":
        return _upwind(d, grid, u) + d.b * u + d.lam * odd_power(u, d.p - 1.0)
    return graph_fn(d, u, eps)[0]


def _A_bands(d: EquationDef, grid: Grid, u, eps: float = 0.0, secant: bool = False):
    """Sub-, main- and super-diagonal of the Jacobian of ``A`` at ``u``.

    ``secant`` replaces the flux derivative by the secant slope ``a(g)/g``
    (lagged diffusivity), which for ``p < 2`` majorizes it.
    """
    m, h = grid.nodes, grid.h
    lower, upper = np.zeros(m), np.zeros(m)
    if d.kind == "PLaplacianReaction":
        g = grid.grad(u)
        if secant and d.flux != "linear":
            da = np.maximum(np.abs(g), 1e-12) ** (d.p - 2.0)
        else:
            _, da = flux_fn(d, g)
        _, dpsi = reaction_fn(d, u, eps)
        diag = (da[1:] + da[:-1]) / h ** 2 + dpsi
        upper[:-1] = -da[1:-1] / h ** 2  # J[i, i+1]
        lower[1:] = -da[1:-1] / h ** 2  # J[i, i-1]
    elif d.kind == "PorousMedium":
        _, dpsi = porous_fn(d, u)
        diag = 2.0 * dpsi / h ** 2
        upper[:-1] = -dpsi[1:] / h ** 2
        lower[1:] = -dpsi[:-1] / h ** 2
    elif d.kind == "Transport":
        a = d.velocity
        diag = np.full(m, abs(a) / h + d.b) + d.lam * _odd_power_deriv(u, d.p - 1.0)
        if a >= 0:
            upper[:-1] = -a / h
        else:
            lower[1:] = a / h
    else:
        diag = graph_fn(d, u, eps)[1]
    return lower, diag, upper


def _check_pivot(d: EquationDef, u):
    if isinstance(u, Field) and u.space != d.pivot:
        raise PivotMismatchError(f"{d.kind} works in pivot {d.pivot}, field is {u.space}")


def _check_grid(d: EquationDef, grid: Grid):
    if grid is None:
        raise ValueError("a grid is required for plain arrays (or pass a Field)")
    if d.pointwise != grid.is_point:
        raise PivotMismatchError(
            f"{d.kind} needs a {'point' if d.pointwise else 'spatial'} grid")
    if (d.kind == "Transport") != (grid.bc == "inflow"):
        raise PivotMismatchError(f"{d.kind} on a grid with bc={grid.bc!r}: the inflow "
                                 "boundary belongs to transport only")


def apply_A(d: EquationDef, u, t: float = 0.0, grid: Grid | None = None):
    """Residual ``A(t) u`` (dual-space element as a nodal vector).

    Multivalued graphs have no single-valued application; the zero selection
    of ``sign`` at 0 is returned for ``FiniteDimGraph``.
    """
    _check_pivot(d, u)
    if isinstance(u, Field):
        grid, vals = u.grid, u.values
    else:
        vals = np.asarray(u, dtype=float)
    _check_grid(d, grid)
    if d.kind == "PLaplacianReaction" and d.reaction == "sign":
        raise ValueError("the sign reaction is multivalued; use resolvent()")
    out = _apply(d, grid, vals)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values in A(u) for {d.kind}")
    if isinstance(u, Field):
        return Field(grid, out, u.space)
    return out


# -- pivot geometry ----------------------------------------------------------

def pivot_norm(d: EquationDef, grid: Grid, u) -> float:
    if d.pivot == "Hminus1":
        return hminus1_norm(grid, u)
    return lp_norm(grid, u, 2.0)


def pivot_inner(d: EquationDef, grid: Grid, u, v) -> float:
    return grid.inner(u, v, "Hminus1" if d.pivot == "Hminus1" else "L2")


def v_norm(d: EquationDef, grid: Grid, u) -> float:
    """Norm of the reflexive space ``V``."""
    p = d.v_exponent
    if d.kind == "PLaplacianReaction":
        return norm(u, "W1p", p, grid)
    return lp_norm(grid, u, p)


def dual_norm(d: EquationDef, grid: Grid, theta) -> float:
    """Norm of ``V'``: ``W^{-1,p'}`` via the flux surrogate, or ``L^{p'}``."""
    p = d.v_exponent
    pc = p / (p - 1.0)
    if d.kind == "PLaplacianReaction":
        return norm(theta, "dual_W", pc, grid)
    if d.kind == "PorousMedium":
        return lp_norm(grid, grid.solve_stiffness(theta), pc)
    return lp_norm(grid, theta, pc)


def coercivity_constants(d: EquationDef) -> tuple[float, float, float]:
    """``(alpha1, alpha2, alpha3)`` with ``<Au,u> >= a1|u|_V^p + a2|u|_H^2 + a3``."""
    if d.kind == "PLaplacianReaction":
        return 1.0, 0.0, 0.0
    if d.kind == "PorousMedium":
        return d.coef, 0.0, 0.0
    if d.kind == "Transport":
        return d.lam, min(d.b, 0.0), 0.0
    if d.graph in ("linear", "cubic", "power") and d.coef > 0:
        return d.coef, 0.0, 0.0
    return 1.0, -1.0, 0.0


# -- implicit solves ---------------------------------------------------------

@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def _banded(lower, diag, upper):
    m = diag.size
    ab = np.zeros((3, m))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return ab


def _linear_solve(lower, diag, upper, rhs, pointwise):
    if pointwise:
        return rhs / diag
    return solve_banded((1, 1), _banded(lower, diag, upper), rhs)


def _sign_active_set(d: EquationDef, grid: Grid, rhs, weight, coef, reg, maxiter,
                     u0=None, xi0=None):
    """Exact solve of ``weight*u + coef*(L u + c sign(u)) + reg*G u = rhs`` (linear flux).

    After division by ``coef`` the system is ``K u + c sign(u) = b`` with a
    symmetric tridiagonal M-matrix ``K``; a primal-dual active-set iteration
    on the multiplier ``xi in c*sign(u)`` solves it exactly.  Returns ``None``
    if the sets have not settled after ``maxiter`` sweeps.  ``u0, xi0`` warm
    start the iteration (``xi0`` in units of ``coef``).
    """
    m = grid.nodes
    lo, di, up = _A_bands(d, grid, np.zeros(m))
    if reg:
        glo, gdi, gup = _G_bands(d, grid, np.zeros(m))
        r = reg / coef
        lo, di, up = lo + r * glo, di + r * gdi, up + r * gup
    mass = weight / coef
    di = di + mass
    K = sparse.diags([lo[1:], di, up[:-1]], [-1, 0, 1], format="csr")
    b = rhs / coef
    alpha = d.coef
    u = _linear_solve(lo, di, up, b, False) if u0 is None else np.asarray(u0, dtype=float)
    xi = np.zeros(m) if xi0 is None else np.asarray(xi0, dtype=float)
    gamma = mass.copy()
    seen = set()
    prev = None
    for _ in range(maxiter):
        z = xi + gamma * u
        s = np.where(z > alpha, 1.0, np.where(z < -alpha, -1.0, 0.0))
        if prev is not None and np.array_equal(s, prev):
            return u
        key = s.tobytes()
        if key in seen:
            # cycling: weight the multiplier more heavily and carry on
            gamma = gamma / 10.0
            seen.clear()
        seen.add(key)
        act = s != 0
        u = np.zeros(m)
        if act.any():
            idx = np.flatnonzero(act)
            sub = K[idx][:, idx].tocsc()
            u[idx] = np.atleast_1d(spsolve(sub, b[idx] - alpha * s[idx]))
        xi = np.where(act, alpha * s, b - K @ u)
        prev = s
    return None


def solve_implicit(d: EquationDef, grid: Grid, rhs, weight=1.0, coef=1.0, t: float = 0.0,
                   u0=None, tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAX,
                   info: SolveInfo | None = None, eps: float = 0.0, reg: float = 0.0):
    """Solve ``weight*u + coef*A(u) + reg*G(u) = rhs`` for ``u``.

    ``weight`` and ``coef`` are positive scalars or nodal arrays.  Linear
    operators take a single tridiagonal solve; multivalued ``sign`` graphs are
    handled exactly (finite-dimensional case) or through Yosida continuation.
    ``G`` is the gradient of ``|u|_V^p / p`` (elliptic regularization).
    """
    rhs = np.asarray(rhs, dtype=float)
    if d.pointwise and d.linear and not reg and eps == 0.0:
        # zero / linear graph: a single division (hot path of scalar studies)
        if info is not None:
            info.iterations, info.residual = 1, 0.0
        slope = 0.0 if d.graph == "zero" else d.coef
        u = rhs / (weight + coef * slope)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite solution in implicit solve")
        return u
    m = grid.nodes
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (m,))
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (m,))
    info = info if info is not None else SolveInfo()
    if not np.all(np.isfinite(rhs)):
        raise FloatingPointError("non-finite right-hand side in implicit solve")

    if d.multivalued and eps == 0.0:
        if d.pointwise and not reg:
            info.iterations, info.residual = 0, 0.0
            return soft_threshold(rhs, coef * d.coef) / weight
        if (d.kind == "PLaplacianReaction" and (d.flux == "linear" or d.p == 2)
                and (not reg or d.v_exponent == 2)):
            u = _sign_active_set(d, grid, rhs, weight, coef, reg, 2 * grid.nodes)
            if u is None:
                # settle the sets on a regularized problem, then finish exactly
                eps = 1e-8
                v = _continuation(d, grid, rhs, weight, coef, t, u0, tol, maxiter, info, reg,
                                  eps_min=eps)
                u = _sign_active_set(d, grid, rhs, weight, coef, reg, 2 * grid.nodes, v,
                                     yosida_sign(v, eps, d.coef)[0])
                if u is None:
                    return v
            info.iterations, info.residual = info.iterations + 1, 0.0
            return u
        return _continuation(d, grid, rhs, weight, coef, t, u0, tol, maxiter, info, reg)

    if d.linear and (not reg or d.v_exponent == 2):
        z = np.zeros(m)
        lo, di, up = _A_bands(d, grid, z, eps)
        lo, di, up = coef * lo, coef * di, coef * up
        if reg:
            glo, gdi, gup = _G_bands(d, grid, z)
            lo, di, up = lo + reg * glo, di + reg * gdi, up + reg * gup
        u = _linear_solve(lo, weight + di, up, rhs, d.pointwise)
        info.iterations, info.residual = 1, 0.0
        return u

    def residual(v):
        out = weight * v + coef * _apply(d, grid, v, eps) - rhs
        return out + reg * _apply_G(d, grid, v) if reg else out

    def rnorm(r):
        return pivot_norm(d, grid, r) if not d.pointwise else float(np.linalg.norm(r))

    # gradient structure: h * residual is the Euclidean gradient of this merit
    # (a nodal coef in front of a differential operator breaks the structure)
    has_energy = d.pointwise or (d.kind == "PLaplacianReaction" and np.ptp(coef) == 0.0)

    def merit(v):
        return (grid.h * (0.5 * np.dot(weight * v, v) - np.dot(rhs, v))
                + np.dot(coef, _potential_density(d, grid, v, eps))
                + (reg * _G_potential(d, grid, v) if reg else 0.0))

    # p < 2: Newton overshoots through flat spots; the secant matrix does not
    secant = d.kind == "PLaplacianReaction" and d.flux != "linear" and d.p < 2.0
    scale = max(rnorm(rhs), _EPS)
    u = rhs / weight if u0 is None else np.array(u0, dtype=float)
    r = residual(u)
    rn = rnorm(r)
    it = 0
    while rn > tol * scale:
        if it >= maxiter:
            raise NewtonError(f"Newton did not converge in {maxiter} iterations "
                              f"(relative residual {rn / scale:.3e})", rn / scale)
        lo, di, up = _A_bands(d, grid, u, eps, secant)
        if reg:
            glo, gdi, gup = _G_bands(d, grid, u)
            lo, di, up = coef * lo + reg * glo, coef * di + reg * gdi, coef * up + reg * gup
        else:
            lo, di, up = coef * lo, coef * di, coef * up
        du = _linear_solve(lo, weight + di, up, -r, d.pointwise)
        slope = grid.h * float(np.dot(r, du)) if has_energy else 0.0
        m0 = merit(u) if slope < 0 else None
        # merit differences below this are rounding
        noise = 64 * _EPS * abs(m0) if m0 is not None else 0.0
        step = 1.0
        while True:
            trial = u + step * du
            rt = residual(trial)
            rtn = rnorm(rt)
            if np.isfinite(rtn):
                # Armijo on the convex energy when there is one (globally
                # convergent where the Jacobian degenerates); mixing it with a
                # residual test can cycle
                if m0 is not None and -slope > noise:
                    if merit(trial) <= m0 + 1e-4 * step * slope:
                        break
                elif rtn <= (1.0 - 1e-4 * step) * rn:
                    break
            step *= 0.5
            if step < 1e-10:
                break
        it += 1
        if step < 1e-10:
            # no descent left: accept if we sit at the rounding floor
            if rn <= 1e3 * _EPS * scale * max(1.0, np.max(np.abs(di)) / np.min(weight)):
                break
            raise NewtonError(f"line search failed (relative residual {rn / scale:.3e})",
                              rn / scale)
        u, r, rn = trial, rt, rtn
        info.history.append(rn / scale)
        if step == 1.0 and rnorm(du) <= tol * max(rnorm(u), scale):
            # Newton increment below tolerance.  For p < 2 fluxes the residual
            # is only Hoelder-1/2 near flat spots and cannot reach tol * scale
            # in floating point, while the increment still measures the error
            # in u.
            break
    info.iterations += it
    info.residual = rn / scale
    return u


def _continuation(d, grid, rhs, weight, coef, t, u0, tol, maxiter, info, reg=0.0,
                  eps0: float = 1e-1, eps_min: float = 1e-12):
    """Yosida continuation ``eps_k = eps0 * 4^-k`` for a multivalued reaction."""
    u = u0
    eps = eps0
    while True:
        u = solve_implicit(d, grid, rhs, weight, coef, t, u, tol, maxiter, info, eps=eps,
                           reg=reg)
        if eps <= eps_min:
            return u
        eps = max(eps / 4.0, eps_min)


def resolvent(d: EquationDef, lam: float, z, t: float = 0.0, grid: Grid | None = None,
              tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAX):
    """``(I + lam A)^{-1} z``: the ``u`` with ``u + lam A(u) = z`` in the pivot."""
    if not lam > 0:
        raise ValueError(f"resolvent parameter must be positive, got {lam}")
    _check_pivot(d, z)
    if isinstance(z, Field):
        grid, vals = z.grid, z.values
    else:
        vals = np.asarray(z, dtype=float)
    _check_grid(d, grid)
    u = solve_implicit(d, grid, vals, 1.0, lam, t, tol=tol, maxiter=maxiter)
    return Field(grid, u, z.space) if isinstance(z, Field) else u


def yosida(d: EquationDef, lam: float, z, t: float = 0.0, grid: Grid | None = None,
           tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAX):
    """Yosida approximation ``(z - (I + lam A)^{-1} z) / lam``."""
    u = resolvent(d, lam, z, t, grid, tol, maxiter)
    if isinstance(z, Field):
        return z.with_values((z.values - u.values) / lam)
    return (np.asarray(z, dtype=float) - u) / lam


def duality_map_F(w, p: float, pivot: str = "L2"):
    """Pointwise duality map ``|w|^(p-2) w`` of ``L^p`` (plus identity when ``p < 2``).

    With the ``h``-weighted discrete norm, ``<F(w), w> = |w|_{L^p}^p`` exactly.
    """
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    vals = w.values if isinstance(w, Field) else np.asarray(w, dtype=float)
    out = odd_power(vals, p - 1.0)
    if p < 2:
        out = out + vals
    return w.with_values(out) if isinstance(w, Field) else out


# -- hypothesis probe --------------------------------------------------------

@dataclass
class ProbeReport:
    kind: str
    samples: int
    delta: float
    monotonicity_min: float
    alpha1_empirical: float
    coercivity_exponent: float
    growth_max: float
    tol: float = 1e-10

    @property
    def monotone(self) -> bool:
        return self.monotonicity_min >= -self.tol

    @property
    def coercive(self) -> bool:
        return self.alpha1_empirical > 0

    @property
    def bounded_growth(self) -> bool:
        return bool(np.isfinite(self.growth_max))

    @property
    def passed(self) -> bool:
        return self.monotone and self.coercive and self.bounded_growth

    def to_text(self) -> str:
        def flag(ok):
            return "PASS" if ok else "FAIL"

        return "\n".join([
            f"operator: {self.kind}",
            f"samples: {self.samples}",
            f"delta: {self.delta!r}",
            f"monotonicity_min: {self.monotonicity_min!r} [{flag(self.monotone)}]",
            f"alpha1_empirical: {self.alpha1_empirical!r} [{flag(self.coercive)}]",
            f"coercivity_exponent: {self.coercivity_exponent!r}",
            f"growth_max: {self.growth_max!r} [{flag(self.bounded_growth)}]",
            f"overall: {flag(self.passed)}",
            "",
        ])


def random_field(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    """Random test field mixing smooth sine sums and rough noise over several scales."""
    m = grid.nodes
    amp = 10.0 ** rng.uniform(-1.0, 1.0)
    if grid.is_point or rng.random() < 0.5:
        return amp * rng.standard_normal(m)
    k = np.arange(1, 9)
    c = rng.standard_normal(k.size) / k
    return amp * np.sin(np.outer(grid.x, k) * np.pi / grid.length) @ c


def hypothesis_probe(d: EquationDef, grid: Grid, t: float = 0.0, samples: int = 100,
                     seed: int = 0, eps: float = 1e-6) -> ProbeReport:
    """Empirical monotonicity, coercivity and growth constants on random fields.

    Multivalued graphs are probed through their Yosida approximation with
    parameter ``eps``.
    """
    if samples < 10:
        raise ValueError(f"need at least 10 samples, got {samples}")
    _check_grid(d, grid)
    rng = np.random.default_rng(seed)
    p = d.v_exponent
    a1, a2, a3 = coercivity_constants(d)
    e = eps if d.multivalued else 0.0

    def A(u):
        return _apply(d, grid, u, e)

    mono, alpha, growth = np.inf, np.inf, 0.0
    for _ in range(samples):
        u, v = random_field(grid, rng), random_field(grid, rng)
        diff = u - v
        hn2 = pivot_norm(d, grid, diff) ** 2
        if hn2 > 0:
            val = pivot_inner(d, grid, A(u) - A(v), diff) + d.delta * hn2
            mono = min(mono, val / hn2)
        Au = A(u)
        vn = v_norm(d, grid, u)
        if vn > 0:
            excess = pivot_inner(d, grid, Au, u) - a2 * pivot_norm(d, grid, u) ** 2 - a3
            alpha = min(alpha, excess / vn ** p)
        growth = max(growth, dual_norm(d, grid, Au) / (vn ** (p - 1.0) + 1.0))

    # exponent of <A(su), su> in s for large s along a random direction
    u = random_field(grid, rng)
    s = np.logspace(1, 3, 9)
    vals = np.array([pivot_inner(d, grid, A(si * u), si * u) for si in s])
    if np.all(vals > 0):
        exponent = float(np.polyfit(np.log(s), np.log(vals), 1)[0])
    else:
        exponent = float("nan")
    return ProbeReport(d.kind, samples, d.delta, float(mono), float(alpha), exponent,
                       float(growth))
