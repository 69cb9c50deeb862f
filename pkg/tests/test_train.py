import numpy as np
import pytest

from popdice import (LinearFeatureModel, MarginalDataset, MlpModel,
                     RankDeficiencyError, TimeCurve, TimeGrid, TrainConfig,
                     cosine_lr, dice_loss, gen_gaussian_analytic,
                     monitor_instability, polynomial_features,
                     read_trace_csv, solve_linear_dice, train,
                     weak_form_residual, write_trace_csv)
from popdice.features import PolynomialBlock, FeatureMap


def small_fixture(rng, K=4, N=32, d=1):
    grid = TimeGrid(np.linspace(0.0, 1.0, K + 1))
    samples = [rng.normal(size=(N, d)) + 0.1 * j for j in range(K + 1)]
    return grid, MarginalDataset(grid, samples)


# -- schedule and config ---------------------------------------------------------

def test_cosine_schedule_endpoints_exact():
    cfg = TrainConfig(iterations=1000, lr_start=5e-4, lr_end=1e-6)
    assert cosine_lr(cfg, 0) == 5e-4
    assert cosine_lr(cfg, 1000) == 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=10, lr_start=1e-6, lr_end=1e-4)
    with pytest.raises(ValueError):
        TrainConfig(iterations=-1)
    with pytest.raises(ValueError):
        TrainConfig(iterations=10, loss="ot")


# -- training behavior -------------------------------------------------------------

def test_training_reduces_loss_and_is_deterministic():
    rng = np.random.default_rng(0)
    grid, ds = small_fixture(rng, K=6, N=64)
    cfg = TrainConfig(iterations=300, lr_start=3e-3, lr_end=1e-5, n_x=16,
                      n_t=3, seed=4)
    m1 = MlpModel(d=1, width=8, depth=2, seed=9)
    m1, tr1 = train(m1, ds, cfg)
    m2 = MlpModel(d=1, width=8, depth=2, seed=9)
    m2, tr2 = train(m2, ds, cfg)
    assert np.array_equal(m1.get_params(), m2.get_params())
    assert np.array_equal(tr1.total, tr2.total)
    assert len(tr1) == 300
    full_before = dice_loss(MlpModel(d=1, width=8, depth=2, seed=9), ds).total
    full_after = dice_loss(m1, ds).total
    assert full_after < full_before


def test_training_abort_preserves_trace():
    rng = np.random.default_rng(1)
    grid, ds = small_fixture(rng, K=3, N=16)
    m = LinearFeatureModel(polynomial_features(1, 2), grid)
    m.theta[1, 1] = 1e308  # kinetic term overflows at the first evaluation
    cfg = TrainConfig(iterations=50, lr_start=1e-3, lr_end=1e-5, n_x=8, n_t=3,
                      seed=0)
    m, trace = train(m, ds, cfg)
    assert trace.aborted
    assert trace.abort_iteration == 0
    assert len(trace) == 1
    assert trace.instability_detected


def test_full_batch_mode_matches_reference_loss():
    rng = np.random.default_rng(2)
    grid, ds = small_fixture(rng, K=4, N=24)
    m = LinearFeatureModel(polynomial_features(1, 2), grid,
                           theta=rng.normal(size=(5, 3)))
    ref = dice_loss(m, ds).total
    cfg = TrainConfig(iterations=1, lr_start=1e-9, lr_end=1e-9, full_batch=True)
    _, trace = train(m, ds, cfg)
    assert trace.total[0] == pytest.approx(ref, rel=1e-12)


def test_restore_best_flag():
    rng = np.random.default_rng(3)
    grid, ds = small_fixture(rng, K=4, N=32)
    cfg = TrainConfig(iterations=100, lr_start=5e-3, lr_end=5e-3, n_x=8,
                      n_t=2, seed=1, restore_best=True)
    m = MlpModel(d=1, width=6, depth=2, seed=2)
    m, trace = train(m, ds, cfg)
    assert len(trace) == 100


# -- instability monitor ------------------------------------------------------------

def test_monitor_monotone_no_flags():
    totals = np.linspace(1.0, 0.1, 500)
    kins = np.linspace(1.0, 0.1, 500)
    flags = monitor_instability(totals, kins, window=50)
    assert not flags.any()


def test_monitor_flags_injected_ramp():
    n = 8000
    totals = np.full(n, 0.01)
    kins = np.full(n, 0.005)
    ramp = np.minimum(np.arange(n - 5000) / 50.0, 500.0)
    totals[5000:] = -0.01 * np.exp(ramp)  # |loss| runaway
    flags = monitor_instability(totals, kins, window=500)
    assert flags[5000:].any()
    assert not flags[:5000].any()
    first = int(np.argmax(flags))
    assert 5000 <= first <= 7000


def test_monitor_requires_proportional_kinetic_growth_exemption():
    # |loss| grows together with the kinetic term: not the residual signature
    n = 2000
    totals = np.concatenate([np.full(1000, 0.01), np.full(1000, 10.0)])
    kins = np.concatenate([np.full(1000, 0.01), np.full(1000, 10.0)])
    flags = monitor_instability(totals, kins, window=200)
    assert not flags[:1500].any()


def test_monitor_window_validation():
    with pytest.raises(ValueError):
        monitor_instability(np.zeros(10), np.zeros(10), window=1)


# -- exact linear solve ---------------------------------------------------------------

def test_solve_stationary_identical_marginals_zero():
    rng = np.random.default_rng(4)
    S = rng.normal(size=(128, 2))
    grid = TimeGrid(np.linspace(0, 1, 6))
    ds = MarginalDataset(grid, [S.copy() for _ in range(6)])
    model = solve_linear_dice(polynomial_features(2, 2), ds)
    assert np.max(np.abs(model.theta)) == 0.0


def test_solve_rank_deficiency_named_node():
    rng = np.random.default_rng(5)
    grid = TimeGrid([0.0, 0.5, 1.0])
    ds = MarginalDataset(grid, [rng.normal(size=(16, 1)) for _ in range(3)])
    # duplicated linear blocks make the Gram matrix exactly singular
    feats = FeatureMap(1, [PolynomialBlock(1, 1), PolynomialBlock(1, 1)])
    with pytest.raises(RankDeficiencyError) as err:
        solve_linear_dice(feats, ds, ridge=0.0)
    assert err.value.node == 0
    # the default ridge regularizes the same system
    solve_linear_dice(feats, ds)


def test_solve_recovers_moving_mean_field():
    # empirical solve on the analytic fixture: field error bounded by a
    # multiple of dt_max (pilot-calibrated constant, noise included)
    m = [TimeCurve("linear", (0.0, 1.0))]
    s = TimeCurve("const", (1.0,))
    grid = TimeGrid(np.linspace(0.0, 1.0, 9))
    ds, oracle = gen_gaussian_analytic(m, s, grid, N=60_000, seed=6)
    model = solve_linear_dice(polynomial_features(1, 2), ds)
    rng = np.random.default_rng(0)
    errs = []
    for t in grid.nodes:
        X = oracle.sample(t, 4000, rng)
        diff = model.spatial_grad(t, X) - oracle.field(t, X)
        errs.append(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    assert max(errs) <= 2.0 * grid.dt_max


def test_solve_mean_pinning():
    rng = np.random.default_rng(7)
    grid, ds = small_fixture(rng, K=3, N=200)
    model = solve_linear_dice(polynomial_features(1, 2), ds)
    for j in range(grid.num_nodes):
        sj = model.potential(grid.nodes[j], ds.samples[j])
        assert abs(np.mean(sj)) < 1e-12


def test_weak_form_residual_small_at_solution():
    rng = np.random.default_rng(8)
    grid, ds = small_fixture(rng, K=4, N=64)
    model = solve_linear_dice(polynomial_features(1, 3), ds)
    res = weak_form_residual(model, ds)
    assert np.max(np.abs(res)) < 1e-8
    # perturbing theta breaks the stationarity
    model.theta[2, 1] += 0.1
    assert np.max(np.abs(weak_form_residual(model, ds))) > 1e-4


def test_trace_lower_bounded_by_solved_minimum():
    # Cor. 2 in practice: the training trace never descends below the exact
    # minimizer's loss for linear models
    rng = np.random.default_rng(9)
    grid, ds = small_fixture(rng, K=4, N=48)
    feats = polynomial_features(1, 2)
    solved = solve_linear_dice(feats, ds, ridge=0.0)
    bound = dice_loss(solved, ds).total
    model = LinearFeatureModel(feats, grid, normalization=solved.norm)
    cfg = TrainConfig(iterations=400, lr_start=2e-2, lr_end=1e-4,
                      full_batch=True, seed=3)
    model, trace = train(model, ds, cfg)
    assert trace.total.min() >= bound - 1e-6


def test_exact_moment_solve_requires_polynomial_features():
    from popdice import random_fourier_features, gen_gaussian_analytic
    m = [TimeCurve("const", (0.0,))]
    s = TimeCurve("const", (1.0,))
    grid = TimeGrid(np.linspace(0, 1, 3))
    _, oracle = gen_gaussian_analytic(m, s, grid, N=2, seed=0)
    with pytest.raises(ValueError):
        solve_linear_dice(random_fourier_features(1, 4), oracle, grid=grid)


# -- trace persistence ------------------------------------------------------------------

def test_trace_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    grid, ds = small_fixture(rng, K=3, N=16)
    m = MlpModel(d=1, width=4, depth=1, seed=0)
    m, trace = train(m, ds, TrainConfig(iterations=20, lr_start=1e-3,
                                        lr_end=1e-5, n_x=4, n_t=2, seed=0))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    assert np.array_equal(back.iteration, trace.iteration)
    assert np.array_equal(back.total, trace.total)
    assert np.array_equal(back.lr, trace.lr)
    assert np.array_equal(back.flags, trace.flags)
