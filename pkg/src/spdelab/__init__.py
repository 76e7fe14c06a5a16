"""Pathwise numerics for nonlinear SPDEs with linear multiplicative noise.

``dX + A(t)X dt = X dW`` is solved through the rescaling ``X = e^W y``,
cross-checked by a semi-implicit Euler-Maruyama scheme and, for subgradient
drifts, by a space-time convex minimization.
"""

from .direct import CrossReport, cross_validate, em_path, em_step
from .ensemble import EnsembleResult, OrderReport, convergence_study, run_ensemble
from .noise import Mode, WienerPath, WienerSpec, sample_path
from .operators import (
    EquationDef,
    NewtonError,
    finite_graph,
    heat,
    hypothesis_probe,
    p_laplacian,
    porous_medium,
    resolvent,
    transport,
    yosida,
)
from .rescale import (
    PathSolution,
    SolverConfig,
    energy_ledger,
    holder_diagnostic,
    regularity_functional,
    solve_path,
    step,
)
from .scenario import Scenario, ScenarioError, parse_scenario, serialize
from .spatial import Field, Grid
from .variational import SpaceTimeField, minimize_bem, phi, phi_star_pointwise

__version__ = "0.1.0"
