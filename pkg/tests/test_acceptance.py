"""Acceptance suite: every criterion runs at its stated tolerance and prints
one pass/fail line. Desk-scale configurations (sizes, batch shapes, learning
rates) are pinned here from pilot calibration; paper-scale runs carry the
``paper_scale`` marker and are excluded from the default run.
"""

import time

import numpy as np
import pytest

import popdice as pd
from popdice import (LinearFeatureModel, MarginalDataset, MlpModel,
                     NodeConstantShift, Normalization, TimeCurve, TimeGrid,
                     TrainConfig, am_loss, am_residual, dice_loss,
                     dice_loss_entropic, gen_brownian, gen_chaotic_ode,
                     gen_gaussian_analytic, gen_known_potential,
                     gen_stationary_gaussian, integrate_ode, integrate_sde,
                     kinetic_energy, kinetic_term, monitor_instability,
                     polynomial_features, quadrature_weights,
                     random_fourier_features, relative_potential_error,
                     solve_linear_dice, split_half_baseline,
                     time_averaged_divergence, train, weak_form_residual)
from popdice.features import FourierBlock, PolynomialBlock, FeatureMap
from popdice.sampler import PopulationTrajectory


def announce(capfd, criterion, ok, detail):
    with capfd.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"[acceptance] criterion {criterion}: {status} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


def random_triple(rng, uniform_grid=False, mlp=False):
    K = 4 if uniform_grid else int(rng.integers(2, 6))
    if uniform_grid:
        nodes = np.linspace(0.0, float(rng.uniform(0.5, 2.0)), K + 1)
    else:
        nodes = np.concatenate(([0.0], np.cumsum(rng.uniform(0.05, 0.4, K))))
    grid = TimeGrid(nodes)
    d = int(rng.integers(1, 3))
    ds = MarginalDataset(grid, [rng.normal(size=(8, d))
                                for _ in range(K + 1)])
    if mlp:
        model = MlpModel(d=1, width=6, depth=2, seed=int(rng.integers(1 << 16)))
        ds = MarginalDataset(grid, [rng.normal(size=(8, 1))
                                    for _ in range(K + 1)])
        model.set_params(rng.normal(scale=0.4, size=model.num_params))
    elif rng.uniform() < 0.5:
        feats = polynomial_features(d, 2)
        model = LinearFeatureModel(feats, grid,
                                   theta=rng.normal(size=(K + 1, feats.size)))
    else:
        feats = random_fourier_features(d, 5, seed=int(rng.integers(1 << 16)))
        model = LinearFeatureModel(feats, grid,
                                   theta=rng.normal(size=(K + 1, feats.size)))
    f = rng.normal(scale=5.0, size=K + 1)
    slopes = rng.normal(scale=20.0, size=K + 1)
    return model, ds, grid, f, slopes


def test_criterion_01_constant_invariance(capfd):
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for k in range(100):
        model, ds, grid, f, _ = random_triple(rng, mlp=(k % 10 == 9))
        base = dice_loss(model, ds).total
        shifted = dice_loss(NodeConstantShift(model, grid, f), ds).total
        worst = max(worst, abs(shifted - base) / (1.0 + abs(base)))
        if k % 10 == 4:  # the invariance holds for the entropic variant too
            b = dice_loss_entropic(model, ds, 0.3).total
            s = dice_loss_entropic(NodeConstantShift(model, grid, f), ds,
                                   0.3).total
            worst = max(worst, abs(s - b) / (1.0 + abs(b)))
    elapsed = time.time() - t0
    announce(capfd, 1, worst <= 1e-10 and elapsed < 10.0,
             f"max relative drift {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_am_residual_identity(capfd):
    rng = np.random.default_rng(202)
    t0 = time.time()
    worst = 0.0
    for k in range(100):
        uniform = k % 2 == 0
        model, ds, grid, f, slopes = random_triple(rng, uniform_grid=uniform,
                                                   mlp=(k % 20 == 19))
        rules = ("trapezoid", "simpson") if uniform else ("trapezoid",)
        for rule in rules:
            base = am_loss(model, ds, rule=rule).total
            shifted = am_loss(NodeConstantShift(model, grid, f, slopes), ds,
                              rule=rule).total
            resid = am_residual(f, slopes, grid, rule=rule)
            worst = max(worst, abs((shifted - base) - resid)
                        / (1.0 + abs(resid)))
    elapsed = time.time() - t0
    announce(capfd, 2, worst <= 1e-10 and elapsed < 10.0,
             f"max identity violation {worst:.2e}, {elapsed:.1f}s")


def test_criterion_03_two_node_equivalence(capfd):
    rng = np.random.default_rng(303)
    t0 = time.time()
    worst = 0.0
    for _ in range(50):
        T = float(rng.uniform(0.2, 3.0))
        grid = TimeGrid([0.0, T])
        d = int(rng.integers(1, 3))
        ds = MarginalDataset(grid, [rng.normal(size=(12, d)) for _ in range(2)])
        feats = polynomial_features(d, 2)
        model = LinearFeatureModel(feats, grid,
                                   theta=rng.normal(size=(2, feats.size)))
        a = am_loss(model, ds, rule="trapezoid").total
        d_ = dice_loss(model, ds).total
        worst = max(worst, abs(a - d_) / max(1.0, abs(d_)))
    elapsed = time.time() - t0
    announce(capfd, 3, worst <= 1e-12 and elapsed < 5.0,
             f"max |L_AM - L_DICE| {worst:.2e} relative, {elapsed:.1f}s")


def test_criterion_04_blowup_demo(capfd):
    t0 = time.time()
    rng = np.random.default_rng(404)
    T = 1.25
    grid = TimeGrid([0.0, T])
    ds = MarginalDataset(grid, [rng.normal(size=(64, 1)),
                                rng.normal(size=(64, 1)) + 0.4])
    feats = polynomial_features(1, 2)
    base = LinearFeatureModel(feats, grid,
                              theta=rng.normal(scale=0.3, size=(2, feats.size)))
    thetas = np.linspace(-3.0, 3.0, 13)

    def shifted(th):
        # f_th(t) = -th t^2/T^2 (1 - t/T): node values (0, 0), slopes (0, th/T)
        return NodeConstantShift(base, grid, values=[0.0, 0.0],
                                 slopes=[0.0, th / T])

    L_dice = np.array([dice_loss(shifted(th), ds).total for th in thetas])
    L_am = np.array([am_loss(shifted(th), ds).total for th in thetas])
    d_dice = np.gradient(L_dice, thetas)
    d_am = np.gradient(L_am, thetas)
    resid = np.array([am_residual([0.0, 0.0], [0.0, th / T], grid)
                      for th in thetas])
    d_resid = np.gradient(resid, thetas)

    dice_flat = float(np.max(np.abs(d_dice)))
    am_var = float(np.var(d_am))
    am_grad = float(np.mean(d_am))
    oracle_grad = float(np.mean(d_resid))
    stated = -1.0 / (2.0 * T)
    ok = (dice_flat <= 1e-10 and am_var <= 1e-12 and abs(am_grad) > 1e-6
          and abs(am_grad - oracle_grad) <= 1e-10)
    elapsed = time.time() - t0
    announce(capfd, 4, ok and elapsed < 5.0,
             f"dL_DICE/dth {dice_flat:.1e}; dL_AM/dth {am_grad:+.6f} "
             f"(var {am_var:.1e}) = residual oracle {oracle_grad:+.6f}; "
             f"documented constant {stated:+.6f} "
             f"{'matches' if abs(am_grad - stated) < 1e-8 else 'does not match'} "
             f"the oracle; {elapsed:.1f}s")


def test_criterion_12_single_pass_inference_cost(capfd):
    grid = TimeGrid(np.linspace(0.0, 1.0, 7))
    feats = polynomial_features(2, 1)
    model = LinearFeatureModel(feats, grid)
    x0 = np.zeros((23, 2))
    K = grid.last_index
    checks = []
    for scheme, stages in (("euler", 1), ("rk4", 4)):
        for substeps in (1, 3):
            traj = integrate_ode(model, x0, grid, scheme=scheme,
                                 substeps=substeps)
            checks.append(traj.field_evaluations == 23 * K * substeps * stages)
    traj = integrate_sde(model, x0, grid, eps=0.1, substeps=2, seed=0)
    checks.append(traj.field_evaluations == 23 * K * 2 * 1)
    announce(capfd, 12, all(checks),
             "field-evaluation counter equals N*K*substeps*stages exactly")
