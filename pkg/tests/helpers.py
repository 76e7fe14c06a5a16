"""Shared fixtures: the built-in operator catalogue and resolvent property checks."""

import numpy as np

from spdelab.operators import (
    coercivity_constants,
    finite_graph,
    heat,
    p_laplacian,
    pivot_inner,
    pivot_norm,
    porous_medium,
    random_field,
    resolvent,
    transport,
    v_norm,
)
from spdelab.spatial import Grid


def builtin_operators(m=16, dim=3):
    """``(label, EquationDef, Grid)`` for every built-in drift."""
    g = Grid(1.0, m)
    flow = Grid(1.0, m, "inflow")
    pt = Grid.finite(dim)
    ops = [
        ("heat", heat(), g),
        ("p_laplacian p=3", p_laplacian(3.0), g),
        ("p_laplacian p=1.5", p_laplacian(1.5), g),
        ("p_laplacian + cubic reaction", p_laplacian(2.0, "power", 3.0), g),
        ("p_laplacian + sign reaction", p_laplacian(2.0, "sign"), g),
        ("porous medium r^3", porous_medium(4.0), g),
        ("transport", transport(1.0, 0.5), flow),
        ("transport p=3 leftward", transport(-1.0, -0.3, 1.0, 3.0), flow),
    ]
    ops += [(f"graph {name}", finite_graph(name, p=3.0), pt)
            for name in ("zero", "linear", "cubic", "power", "sign")]
    return ops


def resolvent_suite(d, grid, n, seed=0, lam=0.1, mu=0.03):
    """Worst violations of the four resolvent properties over ``n`` random inputs.

    Returns a dict of non-positive-when-satisfied excesses:
    ``firm``     |J z1 - J z2|^2 - <J z1 - J z2, z1 - z2>, relative to |z1 - z2|^2
    ``identity`` |J_mu(mu/lam z + (1 - mu/lam) J_lam z) - J_lam z|, relative to |z|
    ``lipschitz`` lam |G z1 - G z2| / |z1 - z2| - 1
    ``coercive`` a1|Jz|_V^p + a2|Jz|^2 + a3 - <G z, z>  (absolute)
    """
    rng = np.random.default_rng(seed)
    a1, a2, a3 = coercivity_constants(d)
    worst = dict(firm=-np.inf, identity=-np.inf, lipschitz=-np.inf, coercive=-np.inf)
    for _ in range(n):
        z1, z2 = random_field(grid, rng), random_field(grid, rng)
        J1, J2 = resolvent(d, lam, z1, grid=grid), resolvent(d, lam, z2, grid=grid)
        dz, dJ = z1 - z2, J1 - J2
        nz = pivot_norm(d, grid, dz)
        worst["firm"] = max(worst["firm"],
                            (pivot_norm(d, grid, dJ) ** 2 - pivot_inner(d, grid, dJ, dz)) / nz ** 2)
        Jm = resolvent(d, mu, mu / lam * z1 + (1 - mu / lam) * J1, grid=grid)
        worst["identity"] = max(worst["identity"],
                                pivot_norm(d, grid, Jm - J1) / pivot_norm(d, grid, z1))
        G1, G2 = (z1 - J1) / lam, (z2 - J2) / lam
        worst["lipschitz"] = max(worst["lipschitz"], lam * pivot_norm(d, grid, G1 - G2) / nz - 1)
        lower = a1 * v_norm(d, grid, J1) ** d.v_exponent + a2 * pivot_norm(d, grid, J1) ** 2 + a3
        worst["coercive"] = max(worst["coercive"], lower - pivot_inner(d, grid, G1, z1))
    return worst


# criterion thresholds: rounding-level slack for the three metric properties
SUITE_TOL = dict(firm=1e-9, identity=1e-8, lipschitz=1e-9, coercive=1e-8)


def suite_ok(worst):
    return all(worst[k] <= SUITE_TOL[k] for k in SUITE_TOL)
