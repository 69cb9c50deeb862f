import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popdice import (LinearFeatureModel, MarginalDataset, PopulationTrajectory,
                     TimeCurve, TimeGrid, gen_gaussian_analytic,
                     kinetic_energy, moments, polynomial_features,
                     relative_potential_error, sinkhorn_divergence,
                     split_half_baseline, time_averaged_divergence,
                     w2_exact_1d)


# -- relative potential error -----------------------------------------------------

def _fixture(scale):
    m = [TimeCurve("linear", (0.0, 1.0))]
    s = TimeCurve("const", (1.0,))
    grid = TimeGrid(np.linspace(0, 1, 5))
    ds, oracle = gen_gaussian_analytic(m, s, grid, N=64, seed=1)
    feats = polynomial_features(1, 1)
    theta = np.zeros((5, feats.size))
    theta[:, 1] = scale  # grad s = scale everywhere; truth is 1
    model = LinearFeatureModel(feats, grid, theta=theta)
    return model, oracle, ds


def test_relative_error_zero_for_exact_field():
    model, oracle, ds = _fixture(1.0)
    assert relative_potential_error(model, oracle, ds) == pytest.approx(0.0,
                                                                        abs=1e-16)


def test_relative_error_doubled_field_is_horizon():
    model, oracle, ds = _fixture(2.0)
    # ratio 1 at every node, trapezoid weights sum to T = 1
    assert relative_potential_error(model, oracle, ds) == pytest.approx(1.0,
                                                                        rel=1e-12)


def test_relative_error_zero_denominator():
    m = [TimeCurve("const", (0.0,))]
    s = TimeCurve("const", (1.0,))
    grid = TimeGrid(np.linspace(0, 1, 3))
    ds, oracle = gen_gaussian_analytic(m, s, grid, N=16, seed=2)
    model, _, _ = _fixture(1.0)
    model2 = LinearFeatureModel(polynomial_features(1, 1), grid)
    with pytest.raises(ZeroDivisionError):
        relative_potential_error(model2, oracle, ds)


# -- moments ------------------------------------------------------------------------

def test_moments_constant_samples():
    assert moments(np.full((5, 2), 3.0), 2) == pytest.approx(9.0)


def test_moments_symmetric_third_vanishes():
    s = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    assert moments(s, 3) == 0.0


def test_moments_gaussian_second():
    rng = np.random.default_rng(3)
    s = rng.normal(size=100_000)
    assert abs(moments(s, 2) - 1.0) < 0.015


def test_moments_order_validation():
    with pytest.raises(ValueError):
        moments(np.ones((2, 1)), 0)


# -- kinetic energy --------------------------------------------------------------------

def make_traj(states, nodes=None):
    states = np.asarray(states, dtype=float)
    nodes = nodes if nodes is not None else np.arange(states.shape[1],
                                                      dtype=float)
    return PopulationTrajectory(TimeGrid(nodes), states)


def test_kinetic_energy_static():
    traj = make_traj(np.ones((4, 3, 2)))
    assert kinetic_energy(traj) == 0.0


def test_kinetic_energy_single_hop():
    states = np.zeros((1, 2, 1))
    states[0, 1, 0] = 1.0
    assert kinetic_energy(make_traj(states)) == pytest.approx(0.5)


def test_kinetic_energy_translation_invariant():
    rng = np.random.default_rng(4)
    states = rng.normal(size=(6, 5, 2))
    t1 = kinetic_energy(make_traj(states))
    t2 = kinetic_energy(make_traj(states + np.array([3.0, -1.0])))
    assert t1 == t2


def test_kinetic_energy_requires_pairing():
    traj = make_traj(np.zeros((2, 3, 1)))
    traj.pairing = False
    with pytest.raises(ValueError):
        kinetic_energy(traj)


# -- exact 1-D Wasserstein-2 --------------------------------------------------------------

def test_w2_identical_zero():
    a = np.random.default_rng(5).normal(size=40)
    assert w2_exact_1d(a, a.copy()) == 0.0


def test_w2_point_masses():
    assert w2_exact_1d([0.0], [2.0]) == pytest.approx(2.0)


def test_w2_sorted_matching():
    assert w2_exact_1d([0.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0)


def test_w2_unequal_counts():
    v = w2_exact_1d(np.zeros(10), np.zeros(7) + 1.0)
    assert v == pytest.approx(1.0)


@given(st.integers(min_value=0, max_value=100_000))
@settings(max_examples=40, deadline=None)
def test_w2_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=12) * rng.uniform(0.5, 2) for _ in range(3))
    ab = w2_exact_1d(a, b)
    bc = w2_exact_1d(b, c)
    ac = w2_exact_1d(a, c)
    assert ac <= ab + bc + 1e-12


# -- Sinkhorn divergence ---------------------------------------------------------------------

def test_sinkhorn_self_zero():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(48, 2))
    res = sinkhorn_divergence(a, a.copy())
    assert abs(res.value) <= 1e-9
    converged = sinkhorn_divergence(a, a.copy(), max_iters=1500)
    assert converged.converged and abs(converged.value) <= 1e-9


def test_sinkhorn_symmetry_and_nonnegativity():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(40, 2))
    b = rng.normal(size=(40, 2)) + 0.5
    r1 = sinkhorn_divergence(a, b, max_iters=3000)
    r2 = sinkhorn_divergence(b, a, max_iters=3000)
    assert r1.converged and r2.converged
    assert r1.value == pytest.approx(r2.value, abs=1e-9)
    assert r1.value >= -1e-9


def test_sinkhorn_approaches_w2_squared_small_eps():
    # the exact 1-D transport oracle pins the small-eps limit
    rng = np.random.default_rng(8)
    a = rng.normal(size=(96, 1))
    b = rng.normal(size=(96, 1)) * 1.3 + 0.7
    w2 = w2_exact_1d(a[:, 0], b[:, 0])
    scale = float(np.var(np.concatenate([a, b])))
    res = sinkhorn_divergence(a, b, eps_s=1e-3 * scale, max_iters=6000,
                              tol=1e-9)
    assert res.value == pytest.approx(w2**2, rel=0.05)


def test_sinkhorn_translation_cost():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(64, 2))
    v = np.array([0.8, -0.3])
    res = sinkhorn_divergence(a, a + v, eps_s=5e-3, max_iters=2000, tol=1e-9)
    assert res.value == pytest.approx(float(v @ v), rel=0.05)


def test_sinkhorn_nonconvergence_flag():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(30, 1))
    b = rng.normal(size=(30, 1)) + 5.0
    res = sinkhorn_divergence(a, b, eps_s=1e-4, max_iters=2, tol=1e-12)
    assert not res.converged


def test_sinkhorn_input_validation():
    with pytest.raises(ValueError):
        sinkhorn_divergence(np.ones((3, 1)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        sinkhorn_divergence(np.array([[np.nan]]), np.ones((1, 1)))


# -- time-averaged divergence -------------------------------------------------------------------

def _ref_dataset(seed=11, N=64):
    rng = np.random.default_rng(seed)
    grid = TimeGrid(np.linspace(0, 1, 4))
    return MarginalDataset(grid, [rng.normal(size=(N, 2)) + 0.2 * j
                                  for j in range(4)])


def test_time_averaged_self_is_zero():
    ds = _ref_dataset()
    traj = PopulationTrajectory(ds.grid, np.stack(ds.samples, axis=1))
    res, per_node = time_averaged_divergence(traj, ds)
    assert abs(res.value) <= 1e-9
    assert np.all(np.abs(per_node) <= 1e-9)


def test_time_averaged_grid_mismatch():
    ds = _ref_dataset()
    other = TimeGrid(np.linspace(0, 2, 4))
    traj = PopulationTrajectory(other, np.stack(ds.samples, axis=1))
    with pytest.raises(ValueError):
        time_averaged_divergence(traj, ds)


def test_split_half_baseline_positive_noise_floor():
    ds = _ref_dataset(N=128)
    res, per_node = split_half_baseline(ds, seed=3)
    assert res.value > 0
    assert np.all(np.isfinite(per_node))


def test_metric_report_csv(tmp_path):
    from popdice import MetricReport
    rep = MetricReport()
    rep.add("sinkhorn", 0.5, "avg", True)
    rep.add("sinkhorn", 0.25, 3, False)
    path = tmp_path / "metrics.csv"
    rep.write_csv(path)
    text = path.read_text()
    assert "metric,node_index,value,converged" in text
    assert "sinkhorn,avg,0.5,1" in text
    assert rep.value("sinkhorn", 3) == 0.25
