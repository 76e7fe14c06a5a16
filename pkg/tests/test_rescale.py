import numpy as np
import pytest

from spdelab.noise import Mode, WienerSpec, sample_path
from spdelab.operators import NewtonError, finite_graph, heat, p_laplacian, porous_medium
from spdelab.rescale import (
    SolverConfig,
    Stepper,
    coercivity_balance,
    drift_residual,
    energy_ledger,
    holder_diagnostic,
    regularity_functional,
    solve_path,
    step,
)
from spdelab.spatial import Grid

G = Grid(1.0, 24)
SPEC = WienerSpec((Mode(0.25, "sin", 1), Mode(0.25, "sin", 2)))
X0 = np.sin(np.pi * G.x) + 0.5 * np.sin(3 * np.pi * G.x)


def dense_stiffness(grid):
    m = grid.nodes
    K = 2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
    return K / grid.h ** 2


def test_config_validation():
    with pytest.raises(ValueError, match="dt"):
        SolverConfig(0.0, 10)
    with pytest.raises(ValueError, match="steps"):
        SolverConfig(0.1, 0)
    with pytest.raises(ValueError, match="Yosida"):
        SolverConfig(0.1, 10, yosida_lambda=(0.1, -1.0))
    with pytest.raises(ValueError, match="combined"):
        SolverConfig(0.1, 10, yosida_lambda=0.1, lambda_F=1.0)
    assert SolverConfig(0.1, 10, yosida_lambda=[0.1, 0.01]).yosida_schedule == (0.1, 0.01)
    assert SolverConfig(0.25, 8).T == 2.0


def test_path_must_match_config():
    path = sample_path(SPEC, 0.01, 10, 0)
    with pytest.raises(ValueError, match="differs"):
        solve_path(heat(), SPEC, path, X0, SolverConfig(0.02, 5), G)
    with pytest.raises(ValueError, match="steps"):
        solve_path(heat(), SPEC, path, X0, SolverConfig(0.01, 20), G)
    with pytest.raises(ValueError, match="shape"):
        solve_path(heat(), SPEC, path, X0[:-1], SolverConfig(0.01, 10), G)


def test_gbm_matches_discrete_closed_form():
    # A = 0: X_n = x exp(sigma beta_n) (1 + dt sigma^2/2)^-n exactly
    sigma, dt, N = 0.5, 0.01, 100
    spec = WienerSpec((Mode(sigma),))
    P = Grid.finite(1)
    path = sample_path(spec, dt, N, 3, 0)
    sol = solve_path(finite_graph("zero"), spec, path, np.array([2.0]), SolverConfig(dt, N), P)
    n = np.arange(N + 1)
    expect = 2.0 * np.exp(sigma * path.beta[:, 0]) * (1 + 0.5 * sigma ** 2 * dt) ** -n
    assert np.allclose(sol.X[:, 0], expect, rtol=1e-13)
    assert np.allclose(sol.y * np.exp(sol.W), sol.X, rtol=1e-15)


def test_deterministic_heat_is_backward_euler():
    spec = WienerSpec((Mode(0.0, "sin", 1),))
    dt, N = 0.002, 30
    sol = solve_path(heat(), spec, sample_path(spec, dt, N, 0), X0, SolverConfig(dt, N), G)
    M = np.eye(G.nodes) + dt * dense_stiffness(G)
    u = X0.copy()
    for n in range(N):
        u = np.linalg.solve(M, u)
        assert np.allclose(sol.X[n + 1], u, rtol=1e-12, atol=1e-14)


def test_noisy_heat_against_dense_oracle():
    dt, N = 0.002, 20
    path = sample_path(SPEC, dt, N, 5, 2)
    sol = solve_path(heat(), SPEC, path, X0, SolverConfig(dt, N), G)
    E = np.array([np.sin(np.pi * G.x), np.sin(2 * np.pi * G.x)])
    mu = 0.5 * (0.25 ** 2) * np.sum(E ** 2, axis=0)
    K = dense_stiffness(G)
    y = X0.copy()
    for n in range(N):
        W1 = 0.25 * path.beta[n + 1] @ E
        X1 = np.linalg.solve(np.diag(1 + dt * mu) + dt * K, np.exp(W1) * y)
        y = np.exp(-W1) * X1
        assert np.allclose(sol.y[n + 1], y, rtol=1e-11, atol=1e-13)


def test_single_step_agrees_with_path():
    dt, N = 0.005, 6
    path = sample_path(SPEC, dt, N, 1)
    cfg = SolverConfig(dt, N)
    sol = solve_path(p_laplacian(3.0), SPEC, path, X0, cfg, G)
    y3 = step(p_laplacian(3.0), SPEC, path, 3, sol.y[3], cfg, G)
    assert np.allclose(y3, sol.y[4], rtol=1e-8, atol=1e-10)
    with pytest.raises(IndexError):
        Stepper(heat(), SPEC, path, G, cfg).step(N, sol.y[N])
    with pytest.raises(FloatingPointError):
        step(heat(), SPEC, path, 0, np.full(G.nodes, np.nan), cfg, G)


def test_drift_equation_is_satisfied():
    dt, N = 0.005, 8
    d = p_laplacian(3.0)
    path = sample_path(SPEC, dt, N, 4)
    sol = solve_path(d, SPEC, path, X0, SolverConfig(dt, N, newton_tol=1e-12), G)
    mu = 0.5 * 0.0625 * (np.sin(np.pi * G.x) ** 2 + np.sin(2 * np.pi * G.x) ** 2)
    AX = drift_residual(sol)
    for n in range(N):
        lhs = (1 + dt * mu) * sol.X[n + 1] + dt * AX[n]
        rhs = np.exp(sol.W[n + 1]) * sol.y[n]
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_shift_changes_dynamics_at_second_order():
    path = sample_path(SPEC, 1e-3, 64, 2)
    gaps = []
    for k in (0, 1):
        c = 2 ** k
        p = path.coarsen(c)
        a = solve_path(heat(), SPEC, p, X0, SolverConfig(1e-3 * c, 64 // c), G)
        b = solve_path(heat(), SPEC, p, X0, SolverConfig(1e-3 * c, 64 // c, shift_enabled=True), G)
        assert b.shift_rate > 0 and a.shift_rate == 0
        gaps.append(np.max(np.abs(a.X[-1] - b.X[-1])))
    # dt^2 per step, O(dt) globally: doubling dt doubles the gap
    assert gaps[1] / gaps[0] == pytest.approx(2.0, abs=0.1)
    assert np.allclose(b.shifted_y(), np.exp(-b.shift_rate * b.times)[:, None] * b.y)


def test_yosida_schedule_approaches_plain_solution():
    dt, N = 0.005, 10
    d = p_laplacian(3.0)
    path = sample_path(SPEC, dt, N, 6)
    plain = solve_path(d, SPEC, path, X0, SolverConfig(dt, N), G).X[-1]
    errs = [np.max(np.abs(solve_path(d, SPEC, path, X0, SolverConfig(dt, N, yosida_lambda=lam),
                                     G).X[-1] - plain)) for lam in (1e-2, 1e-3)]
    assert errs[1] < errs[0] / 5
    cont = solve_path(d, SPEC, path, X0, SolverConfig(dt, N, yosida_lambda=(1e-1, 1e-2, 1e-3)),
                      G).X[-1]
    assert np.max(np.abs(cont - plain)) == pytest.approx(errs[1], rel=1e-6)


def test_sign_reaction_path():
    dt, N = 0.005, 10
    d = p_laplacian(2.0, "sign", coef=0.5)
    path = sample_path(SPEC, dt, N, 0)
    sol = solve_path(d, SPEC, path, 0.2 * X0, SolverConfig(dt, N), G)
    # the sign reaction shrinks small data
    assert np.all(np.isfinite(sol.X))
    assert np.max(np.abs(sol.X[-1])) < np.max(np.abs(sol.X[0]))


def test_elliptic_regularization_is_small():
    dt, N = 0.005, 10
    d = p_laplacian(3.0)
    path = sample_path(SPEC, dt, N, 8)
    a = solve_path(d, SPEC, path, X0, SolverConfig(dt, N), G).X[-1]
    b = solve_path(d, SPEC, path, X0, SolverConfig(dt, N, lambda_F=1e-6), G).X[-1]
    assert 0 < np.max(np.abs(a - b)) < 1e-5


def test_exponential_overflow_is_reported():
    spec = WienerSpec((Mode(1e4),))
    path = sample_path(spec, 0.01, 10, 0)
    with pytest.raises(OverflowError):
        solve_path(finite_graph("zero"), spec, path, np.ones(1), SolverConfig(0.01, 10),
                   Grid.finite(1))


def test_newton_failure_names_step():
    path = sample_path(SPEC, 0.5, 2, 0)
    cfg = SolverConfig(0.5, 2, newton_max=1, lambda_F=1.0)
    with pytest.raises(NewtonError, match="step 0"):
        solve_path(p_laplacian(4.0), SPEC, path, 50 * X0, cfg, G)


def test_energy_ledger_deterministic_identity():
    # without noise the residual is exactly 1/2 |X_{n+1} - X_n|^2
    spec = WienerSpec((Mode(0.0, "sin", 1),))
    dt, N = 0.002, 15
    path = sample_path(spec, dt, N, 0)
    sol = solve_path(heat(), spec, path, X0, SolverConfig(dt, N), G)
    rep = energy_ledger(sol, spec, path)
    jumps = np.array([0.5 * G.h * np.sum((sol.X[n + 1] - sol.X[n]) ** 2) for n in range(N)])
    assert np.allclose(rep.residuals, jumps, rtol=1e-9, atol=1e-15)
    assert np.all(rep.martingale == 0) and np.all(rep.quadratic == 0)
    assert rep.final_energy < rep.initial_energy


def test_energy_ledger_residual_is_higher_order():
    path = sample_path(SPEC, 2.5e-4, 400, 1)
    worst = []
    for c in (4, 1):
        p = path.coarsen(c)
        sol = solve_path(heat(), SPEC, p, X0, SolverConfig(p.dt, p.steps), G)
        worst.append(energy_ledger(sol, SPEC, p).max_residual)
    assert worst[1] < worst[0] / 2


def test_coercivity_balance_heat():
    reps = []
    for i in range(8):
        path = sample_path(SPEC, 0.002, 50, 9, i)
        sol = solve_path(heat(), SPEC, path, X0, SolverConfig(0.002, 50), G)
        reps.append(energy_ledger(sol, SPEC, path))
    lhs, rhs = coercivity_balance(reps, heat(), 0.125, 0.1)
    assert lhs <= rhs
    assert rhs == pytest.approx(reps[0].initial_energy
                                + 0.125 * np.mean([r.h_integral for r in reps]))


def test_regularity_functional_gbm():
    # A = 0: |e^W (y_{n+1}-y_n)/dt| = (sigma^2/2) X_{n+1}
    sigma, dt, N = 0.5, 0.01, 50
    spec = WienerSpec((Mode(sigma),))
    path = sample_path(spec, dt, N, 2)
    sol = solve_path(finite_graph("zero"), spec, path, np.ones(1), SolverConfig(dt, N),
                     Grid.finite(1))
    expect = dt * np.sum((0.5 * sigma ** 2 * sol.X[1:, 0]) ** 2)
    assert regularity_functional(sol) == pytest.approx(expect, rel=1e-12)


def test_regularity_functional_finite_on_pdes():
    path = sample_path(SPEC, 0.004, 25, 0)
    for d in (heat(), p_laplacian(3.0), porous_medium(4.0)):
        sol = solve_path(d, SPEC, path, X0, SolverConfig(0.004, 25), G)
        val = regularity_functional(sol)
        assert np.isfinite(val) and val > 0


def test_holder_diagnostic_smooth_run():
    path = sample_path(SPEC, 1e-3, 100, 3)
    g = Grid(1.0, 64)
    sol = solve_path(heat(), SPEC, path, np.sin(np.pi * g.x), SolverConfig(1e-3, 100), g)
    fit = holder_diagnostic(sol)
    assert fit.alpha_space > 0.5 and fit.alpha_time > 0.5
    assert fit.r2_space >= 0.8 and fit.r2_time >= 0.8
    with pytest.raises(ValueError):
        P = Grid.finite(1)
        spec = WienerSpec((Mode(0.5),))
        holder_diagnostic(solve_path(finite_graph("zero"), spec, sample_path(spec, 0.1, 4, 0),
                                     np.ones(1), SolverConfig(0.1, 4), P))
