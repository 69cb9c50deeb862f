import numpy as np
import pytest

from popdice import (LinearFeatureModel, MarginalDataset, MlpModel, TimeGrid,
                     polynomial_features, random_fourier_features)


def random_grid(rng, K=None, t0=0.0):
    K = K or int(rng.integers(2, 7))
    steps = rng.uniform(0.05, 0.3, size=K)
    return TimeGrid(t0 + np.concatenate(([0.0], np.cumsum(steps))))


def random_dataset(rng, grid, d=1, n=12):
    samples = [rng.normal(size=(n, d)) for _ in range(grid.num_nodes)]
    return MarginalDataset(grid, samples)


def random_linear_model(rng, grid, d=1, kind="poly"):
    if kind == "poly":
        feats = polynomial_features(d, 2)
    else:
        feats = random_fourier_features(d, 6, sigma_f=1.0,
                                        seed=int(rng.integers(1 << 16)))
    theta = rng.normal(scale=0.5, size=(grid.num_nodes, feats.size))
    return LinearFeatureModel(feats, grid, theta=theta)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_mlp():
    return MlpModel(d=2, width=8, depth=2, seed=11)
