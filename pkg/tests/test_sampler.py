import numpy as np
import pytest

from popdice import (IntegrationAbort, LinearFeatureModel, PopulationTrajectory,
                     TimeGrid, integrate_ode, integrate_sde,
                     polynomial_features, read_trajectory, write_trajectory)


def constant_field_model(grid, velocity):
    # s(t, x) = velocity . x gives grad s = velocity everywhere
    d = len(velocity)
    feats = polynomial_features(d, 1)
    theta = np.zeros((grid.num_nodes, feats.size))
    theta[:, 1:1 + d] = np.asarray(velocity)
    return LinearFeatureModel(feats, grid, theta=theta)


def cubic_field_model(grid):
    # a smooth nonlinear field with genuine time dependence
    rng = np.random.default_rng(8)
    feats = polynomial_features(1, 4)
    theta = 0.1 * rng.normal(size=(grid.num_nodes, feats.size))
    return LinearFeatureModel(feats, grid, theta=theta)


GRID = TimeGrid(np.linspace(0.0, 1.0, 9))


def test_zero_field_keeps_x0():
    m = constant_field_model(GRID, [0.0, 0.0])
    x0 = np.random.default_rng(0).normal(size=(10, 2))
    traj = integrate_ode(m, x0, GRID, scheme="euler", substeps=3)
    for j in range(GRID.num_nodes):
        assert np.array_equal(traj.marginal(j), x0)


def test_constant_field_exact_translation():
    m = constant_field_model(GRID, [1.0, 0.0])
    x0 = np.random.default_rng(1).normal(size=(7, 2))
    traj = integrate_ode(m, x0, GRID, scheme="euler", substeps=5)
    for j, t in enumerate(GRID.nodes):
        expected = x0 + t * np.array([1.0, 0.0])
        assert np.allclose(traj.marginal(j), expected, rtol=1e-12, atol=1e-12)


def test_rk4_beats_euler_on_smooth_field():
    grid = TimeGrid(np.linspace(0.0, 1.0, 5))
    m = cubic_field_model(grid)
    x0 = np.random.default_rng(2).normal(size=(20, 1))
    ref = integrate_ode(m, x0, grid, scheme="rk4", substeps=1024)
    e_euler = integrate_ode(m, x0, grid, scheme="euler", substeps=4)
    e_rk4 = integrate_ode(m, x0, grid, scheme="rk4", substeps=4)
    err_euler = np.max(np.abs(e_euler.states - ref.states))
    err_rk4 = np.max(np.abs(e_rk4.states - ref.states))
    assert err_euler >= 10.0 * err_rk4


def test_evaluation_counter_exact():
    m = constant_field_model(GRID, [0.5])
    x0 = np.zeros((11, 1))
    K = GRID.last_index
    t_e = integrate_ode(m, x0, GRID, scheme="euler", substeps=3)
    assert t_e.field_evaluations == 11 * K * 3 * 1
    t_r = integrate_ode(m, x0, GRID, scheme="rk4", substeps=3)
    assert t_r.field_evaluations == 11 * K * 3 * 4
    t_s = integrate_sde(m, x0, GRID, eps=0.1, substeps=2, seed=0)
    assert t_s.field_evaluations == 11 * K * 2 * 1


def test_sde_pure_diffusion_variance():
    grid = TimeGrid([0.0, 1.0])
    m = constant_field_model(grid, [0.0])
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(100_000, 1))
    traj = integrate_sde(m, x0, grid, eps=1.0, substeps=1, seed=5)
    v0 = x0.var()
    v1 = traj.marginal(1).var()
    se = (v0 + 1.0) * np.sqrt(2.0 / x0.shape[0])
    assert abs(v1 - (v0 + 1.0)) < 3 * se


def test_sde_small_eps_approaches_ode():
    grid = TimeGrid(np.linspace(0.0, 1.0, 5))
    m = cubic_field_model(grid)
    x0 = np.random.default_rng(4).normal(size=(50, 1))
    ode = integrate_ode(m, x0, grid, scheme="euler", substeps=2)
    for eps in (1e-3, 1e-5):
        sde = integrate_sde(m, x0, grid, eps=eps, substeps=2, seed=9)
        diff = np.max(np.abs(sde.states - ode.states))
        assert diff < eps * 20.0


def test_sde_seed_determinism():
    grid = TimeGrid(np.linspace(0.0, 1.0, 4))
    m = constant_field_model(grid, [0.2])
    x0 = np.zeros((8, 1))
    a = integrate_sde(m, x0, grid, eps=0.3, seed=7)
    b = integrate_sde(m, x0, grid, eps=0.3, seed=7)
    c = integrate_sde(m, x0, grid, eps=0.3, seed=8)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_ode_ignores_seedless_randomness():
    grid = TimeGrid(np.linspace(0.0, 1.0, 4))
    m = cubic_field_model(grid)
    x0 = np.random.default_rng(5).normal(size=(6, 1))
    a = integrate_ode(m, x0, grid)
    b = integrate_ode(m, x0, grid)
    assert np.array_equal(a.states, b.states)


def test_integration_abort_records_prefix():
    grid = TimeGrid(np.linspace(0.0, 1.0, 6))
    feats = polynomial_features(1, 3)
    theta = np.zeros((6, feats.size))
    theta[:, -1] = 1e120  # x^3 feature: overflows within a couple of steps
    m = LinearFeatureModel(feats, grid, theta=theta)
    x0 = np.full((4, 1), 2.0)
    with pytest.raises(IntegrationAbort) as err:
        integrate_ode(m, x0, grid, scheme="euler", substeps=1)
    assert err.value.trajectory.num_samples == 4
    assert err.value.last_valid_node < 5


def test_trajectory_roundtrip(tmp_path):
    m = constant_field_model(GRID, [1.0])
    x0 = np.random.default_rng(6).normal(size=(5, 1))
    traj = integrate_ode(m, x0, GRID)
    path = tmp_path / "traj"
    write_trajectory(traj, path)
    back = read_trajectory(path)
    assert np.array_equal(back.states, traj.states)
    assert back.pairing
    # reading a plain dataset as a trajectory must fail on the pairing flag
    from popdice import gen_stationary_gaussian, write_dataset, DatasetFormatError
    ds = gen_stationary_gaussian(K=2, N=3, dt=0.1, variance=1.0, seed=1)
    write_dataset(ds, tmp_path / "ds")
    with pytest.raises(DatasetFormatError):
        read_trajectory(tmp_path / "ds")


def test_invalid_arguments():
    m = constant_field_model(GRID, [0.0])
    with pytest.raises(ValueError):
        integrate_ode(m, np.zeros((2, 1)), GRID, substeps=0)
    with pytest.raises(ValueError):
        integrate_ode(m, np.zeros((2, 1)), GRID, scheme="heun")
    with pytest.raises(ValueError):
        integrate_sde(m, np.zeros((2, 1)), GRID, eps=0.0)
