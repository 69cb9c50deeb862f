"""Generate new sample populations from a trained field: deterministic ODE
flow and the entropic SDE (Euler-Maruyama). One call produces the whole
trajectory over all time nodes; a field-evaluation counter certifies the
single-pass inference cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import TimeGrid

__all__ = [
    "PopulationTrajectory",
    "IntegrationAbort",
    "integrate_ode",
    "integrate_sde",
    "write_trajectory",
    "read_trajectory",
]

_SDE_STREAM = 0x53444531


@dataclass
class PopulationTrajectory:
    """Paired sample paths: row i of states is one trajectory over all nodes."""

    grid: TimeGrid
    states: np.ndarray  # (N, K+1, d)
    provenance: dict = field(default_factory=dict)
    pairing: bool = True
    field_evaluations: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 3 or self.states.shape[1] != self.grid.num_nodes:
            raise ValueError("states must be (N, K+1, d)")

    @property
    def num_samples(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def marginal(self, j: int) -> np.ndarray:
        return self.states[:, j, :]


class IntegrationAbort(RuntimeError):
    """Non-finite state during integration; carries the valid prefix."""

    def __init__(self, last_valid_node: int, trajectory: PopulationTrajectory):
        self.last_valid_node = last_valid_node
        self.trajectory = trajectory
        super().__init__(f"integration aborted after node {last_valid_node}: "
                         "non-finite state")


def _partial_trajectory(grid, states_done, provenance):
    n_nodes = len(states_done)
    sub = TimeGrid(grid.nodes[:max(n_nodes, 2)])
    S = np.stack(states_done[:sub.num_nodes], axis=1)
    return PopulationTrajectory(sub, S, provenance=provenance)


def integrate_ode(model, x0, grid: TimeGrid, scheme: str = "rk4",
                  substeps: int = 1, mu=None) -> PopulationTrajectory:
    """Integrate xdot = grad s(t, x) from t_0 to t_K, recording the state at
    every grid node; ``substeps`` subdivides each interval."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if scheme not in ("euler", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    X = np.array(x0, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    evals = 0

    def f(t, Y):
        nonlocal evals
        evals += Y.shape[0]
        return model.spatial_grad(t, Y, mu)

    states = [X.copy()]
    prov = {"integrator": scheme, "substeps": substeps, "eps": None,
            "seed": None}
    for j in range(grid.last_index):
        t = grid.nodes[j]
        h = (grid.nodes[j + 1] - grid.nodes[j]) / substeps
        for _ in range(substeps):
            if scheme == "euler":
                X = X + h * f(t, X)
            else:
                k1 = f(t, X)
                k2 = f(t + h / 2, X + (h / 2) * k1)
                k3 = f(t + h / 2, X + (h / 2) * k2)
                k4 = f(t + h, X + h * k3)
                X = X + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        if not np.all(np.isfinite(X)):
            raise IntegrationAbort(j, _partial_trajectory(grid, states, prov))
        states.append(X.copy())
    traj = PopulationTrajectory(grid, np.stack(states, axis=1), provenance=prov)
    traj.field_evaluations = evals
    return traj


def integrate_sde(model, x0, grid: TimeGrid, eps: float, substeps: int = 1,
                  seed: int = 0, mu=None) -> PopulationTrajectory:
    """Euler-Maruyama for dX = grad s(t, X) dt + eps dW; deterministic given
    the seed."""
    if eps <= 0:
        raise ValueError("eps must be > 0 (use integrate_ode for eps = 0)")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    X = np.array(x0, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SDE_STREAM]))
    evals = 0
    states = [X.copy()]
    prov = {"integrator": "euler_maruyama", "substeps": substeps, "eps": eps,
            "seed": seed}
    for j in range(grid.last_index):
        t = grid.nodes[j]
        h = (grid.nodes[j + 1] - grid.nodes[j]) / substeps
        for _ in range(substeps):
            drift = model.spatial_grad(t, X, mu)
            evals += X.shape[0]
            noise = rng.standard_normal(X.shape)
            X = X + h * drift + eps * np.sqrt(h) * noise
            t += h
        if not np.all(np.isfinite(X)):
            raise IntegrationAbort(j, _partial_trajectory(grid, states, prov))
        states.append(X.copy())
    traj = PopulationTrajectory(grid, np.stack(states, axis=1), provenance=prov)
    traj.field_evaluations = evals
    return traj


def write_trajectory(traj: PopulationTrajectory, path) -> None:
    from .datagen import MarginalDataset, write_dataset

    ds = MarginalDataset(traj.grid,
                         [traj.states[:, j, :] for j in range(traj.grid.num_nodes)],
                         provenance=dict(traj.provenance))
    write_dataset(ds, path, pairing=True)


def read_trajectory(path) -> PopulationTrajectory:
    from .datagen import read_dataset

    ds = read_dataset(path, expect_pairing=True)
    states = np.stack(ds.samples, axis=1)
    return PopulationTrajectory(ds.grid, states, provenance=ds.provenance)
