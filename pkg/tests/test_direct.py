import numpy as np
import pytest

from spdelab.direct import CrossReport, cross_validate, discrepancy, em_path, em_step
from spdelab.noise import Mode, WienerSpec, sample_path
from spdelab.operators import finite_graph, heat, p_laplacian
from spdelab.rescale import SolverConfig
from spdelab.spatial import Grid

G = Grid(1.0, 32)
SPEC = WienerSpec((Mode(0.25, "sin", 1), Mode(0.25, "sin", 2)))
X0 = np.sin(np.pi * G.x)


def test_em_scalar_recursion():
    # A = 0: X_{n+1} = X_n (1 + sigma dbeta_n)
    spec = WienerSpec((Mode(0.5),))
    path = sample_path(spec, 0.01, 40, 1)
    X = em_path(finite_graph("zero"), spec, path, np.ones(1), SolverConfig(0.01, 40),
                Grid.finite(1))
    expect = np.concatenate(([1.0], np.cumprod(1 + 0.5 * path.increments[:, 0])))
    assert np.allclose(X[:, 0], expect, rtol=1e-14)


def test_em_step_is_implicit_in_drift():
    path = sample_path(SPEC, 0.01, 5, 2)
    cfg = SolverConfig(0.01, 5)
    X1 = em_step(heat(), SPEC, path, 0, X0, cfg, G)
    dW = 0.25 * (path.increments[0, 0] * np.sin(np.pi * G.x)
                 + path.increments[0, 1] * np.sin(2 * np.pi * G.x))
    assert np.allclose(X1 - 0.01 * G.laplacian(X1), X0 * (1 + dW), rtol=1e-12, atol=1e-14)
    with pytest.raises(IndexError):
        em_step(heat(), SPEC, path, 5, X0, cfg, G)
    with pytest.raises(FloatingPointError):
        em_step(heat(), SPEC, path, 0, np.full(32, np.inf), cfg, G)


def test_no_noise_means_no_discrepancy():
    spec = WienerSpec((Mode(0.0, "sin", 1), Mode(0.0, "sin", 2)))
    path = sample_path(spec, 0.01 / 4, 40, 0)
    rep = cross_validate(p_laplacian(3.0), spec, path, X0, SolverConfig(0.01, 10), G, 2)
    assert np.all(rep.discrepancy <= 1e-12)


def test_discrepancy_shrinks_on_average():
    halv = 3
    path_dt = 0.004 / 2 ** halv
    ratios = []
    for i in range(16):
        path = sample_path(SPEC, path_dt, 10 * 2 ** halv, 7, i)
        rep = cross_validate(heat(), SPEC, path, X0, SolverConfig(0.004, 10), G, halv)
        assert isinstance(rep, CrossReport) and rep.dts.size == halv + 1
        ratios.append(rep.discrepancy[-1] / rep.discrepancy[0])
    # strong order 1/2 of the explicit noise: 8x smaller dt -> about sqrt(8) smaller gap
    assert np.exp(np.mean(np.log(ratios))) == pytest.approx(8 ** -0.5, rel=0.35)


def test_cross_validate_needs_fine_path():
    path = sample_path(SPEC, 0.01, 10, 0)
    with pytest.raises(ValueError, match="does not divide"):
        cross_validate(heat(), SPEC, path, X0, SolverConfig(0.01, 10), G, 1)


def test_discrepancy_returns_both_trajectories():
    path = sample_path(SPEC, 0.01, 10, 3)
    gap, sol, X_em = discrepancy(heat(), SPEC, path, X0, SolverConfig(0.01, 10), G)
    assert X_em.shape == sol.X.shape
    assert gap == pytest.approx(max(np.sqrt(G.h * np.sum((sol.X[n] - X_em[n]) ** 2))
                                    for n in range(11)))


def test_monotone_flag():
    assert CrossReport(np.array([1, 0.5]), np.array([2.0, 1.0]), 1.0, 0, 0).monotone
    assert not CrossReport(np.array([1, 0.5]), np.array([1.0, 1.0]), 0.0, 0, 0).monotone
