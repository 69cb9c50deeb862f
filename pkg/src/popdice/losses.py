"""Training objectives over unpaired marginal samples.

The fully discrete DICE loss sums over consecutive node pairs (j-1, j):

    (t_j - t_{j-1})/2 * ( E_j[ |grad s_j|^2 / 2 ] + E_{j-1}[ |grad s_{j-1}|^2 / 2 ] )
    - 1/2 * ( E_j - E_{j-1} )[ s_j + s_{j-1} ]

with E_j the plain Monte Carlo estimator over the samples of marginal j. The
entropic variant adds (eps^2/2) * Lap(s) inside each kinetic expectation. The
time-discrete action-matching (AM) loss is

    sum_j w_j E_j[ dt s + |grad s|^2 / 2 ] - E_K[ s(t_K, .) ] + E_0[ s(t_0, .) ]

with w_j from a quadrature rule, and carries the residual R(f) under additions
of spatially constant, time-varying f.

All evaluations run through the model's public methods, so these functions are
valid inside ``PotentialModel.param_grad`` functionals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "LossReport",
    "LossBatch",
    "NonFiniteLossError",
    "empirical_expectation",
    "dice_loss",
    "dice_loss_entropic",
    "dice_loss_parametric",
    "am_loss",
    "am_residual",
    "kinetic_term",
    "draw_batch",
]

_BATCH_STREAM = 0x42415443  # batch substream tag


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to a non-finite value."""

    def __init__(self, term: str, node: int, mu_index: Optional[int] = None):
        self.term = term
        self.node = node
        self.mu_index = mu_index
        where = f"node {node}" + (f", parameter index {mu_index}"
                                  if mu_index is not None else "")
        super().__init__(f"non-finite {term} term at {where}")


@dataclass
class LossReport:
    """Decomposition of one loss evaluation.

    total = kinetic_term + entropic_term - source_term for the DICE family;
    for AM the source term collects the time-derivative quadrature and the
    boundary expectations with the same sign convention.
    """

    total: float
    kinetic_term: float
    source_term: float
    entropic_term: float = 0.0
    iteration: int = 0


@dataclass
class LossBatch:
    """Deterministically re-drawable mini batch.

    For the DICE family ``nodes`` holds drawn pair indices j >= 1; each entry
    contributes the consecutive pair (j-1, j) exactly as the full sum's j-th
    summand. ``node_subsets`` indexes samples of marginal j and
    ``companion_subsets`` samples of marginal j-1. For AM ``nodes`` holds
    quadrature node indices 0..K and ``boundary_subsets`` the sample subsets
    at nodes 0 and K.
    """

    kind: str
    nodes: np.ndarray
    node_subsets: np.ndarray
    companion_subsets: Optional[np.ndarray] = None
    boundary_subsets: Optional[tuple] = None
    mu_index: Optional[int] = None
    seed: int = 0
    iteration: int = 0


def _rng(seed: int, iteration: int):
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), _BATCH_STREAM, int(iteration)]))


def _draw_subset(rng, n_avail: int, n_x: int) -> np.ndarray:
    return rng.choice(n_avail, size=n_x, replace=n_x > n_avail)


def draw_batch(dataset, n_t: int, n_x: int, seed: int, iteration: int,
               kind: str = "dice", num_mu: Optional[int] = None) -> LossBatch:
    """Draw the batch for one iteration; identical (seed, iteration) pairs
    yield identical batches."""
    rng = _rng(seed, iteration)
    mu_index = int(rng.integers(num_mu)) if num_mu else None
    if isinstance(dataset, (list, tuple)):
        dataset = dataset[mu_index or 0]
    grid = dataset.grid
    K = grid.last_index
    counts = [s.shape[0] for s in dataset.samples]
    if kind == "dice":
        if n_t <= K:
            nodes = np.sort(rng.choice(K, size=n_t, replace=False)) + 1
        else:
            nodes = np.sort(rng.integers(1, K + 1, size=n_t))
        right = np.stack([_draw_subset(rng, counts[j], n_x) for j in nodes])
        left = np.stack([_draw_subset(rng, counts[j - 1], n_x) for j in nodes])
        return LossBatch("dice", nodes, right, companion_subsets=left,
                         mu_index=mu_index, seed=seed, iteration=iteration)
    if kind == "am":
        nodes = np.sort(rng.integers(0, K + 1, size=n_t))
        subs = np.stack([_draw_subset(rng, counts[j], n_x) for j in nodes])
        b0 = _draw_subset(rng, counts[0], n_x)
        bK = _draw_subset(rng, counts[K], n_x)
        return LossBatch("am", nodes, subs, boundary_subsets=(b0, bK),
                         mu_index=mu_index, seed=seed, iteration=iteration)
    raise ValueError(f"unknown batch kind {kind!r}")


def empirical_expectation(samples, g) -> float:
    """Plain Monte Carlo estimator: arithmetic mean of g over sample rows."""
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] == 0:
        raise ValueError("empirical expectation of an empty marginal")
    vals = np.asarray(g(S), dtype=np.float64)
    return float(np.mean(vals))


def _is_traced(x) -> bool:
    import jax
    return isinstance(x, jax.core.Tracer)


def _check(x, term: str, node: int, mu_index=None):
    if _is_traced(x):
        return
    if not np.all(np.isfinite(np.asarray(x))):
        raise NonFiniteLossError(term, node, mu_index)


def _mean(x):
    return x.mean()


def _half_sq_norm(g):
    return 0.5 * (g * g).sum(axis=1)


def _dice_pair_terms(model, grid, XL, XR, j, eps, mu, mu_index):
    """Kinetic / entropic / source contributions of the pair (j-1, j)."""
    tl = grid.nodes[j - 1]
    tr = grid.nodes[j]
    w = 0.5 * (tr - tl)
    kin_l = _mean(_half_sq_norm(model.spatial_grad(tl, XL, mu)))
    _check(kin_l, "kinetic", j - 1, mu_index)
    kin_r = _mean(_half_sq_norm(model.spatial_grad(tr, XR, mu)))
    _check(kin_r, "kinetic", j, mu_index)
    kin = w * (kin_r + kin_l)
    if eps:
        lap_l = _mean(model.spatial_laplacian(tl, XL, mu))
        _check(lap_l, "entropic", j - 1, mu_index)
        lap_r = _mean(model.spatial_laplacian(tr, XR, mu))
        _check(lap_r, "entropic", j, mu_index)
        ent = w * (eps**2 / 2.0) * (lap_r + lap_l)
    else:
        ent = 0.0
    s_r_right = model.potential(tr, XR, mu)
    s_l_right = model.potential(tl, XR, mu)
    s_r_left = model.potential(tr, XL, mu)
    s_l_left = model.potential(tl, XL, mu)
    src = 0.5 * (_mean(s_r_right + s_l_right) - _mean(s_r_left + s_l_left))
    _check(src, "source", j, mu_index)
    return kin, ent, src


def _dice_eval(model, dataset, eps: float, batch: Optional[LossBatch],
               mu=None, mu_index=None, iteration: int = 0) -> LossReport:
    grid = dataset.grid
    K = grid.last_index
    if batch is None:
        pairs = [(j, dataset.samples[j - 1], dataset.samples[j])
                 for j in range(1, K + 1)]
        scale = 1.0
    else:
        if batch.kind != "dice":
            raise ValueError("expected a dice batch")
        pairs = [(int(j), dataset.samples[j - 1][left], dataset.samples[j][right])
                 for j, right, left in zip(batch.nodes, batch.node_subsets,
                                           batch.companion_subsets)]
        scale = K / len(batch.nodes)
        iteration = batch.iteration
    kin = ent = src = 0.0
    for j, XL, XR in pairs:
        if XL.shape[0] == 0 or XR.shape[0] == 0:
            raise ValueError(f"empty marginal in pair ({j - 1}, {j})")
        k, e, s = _dice_pair_terms(model, grid, XL, XR, j, eps, mu, mu_index)
        kin = kin + k
        ent = ent + e
        src = src + s
    kin, ent, src = scale * kin, scale * ent, scale * src
    return LossReport(total=kin + ent - src, kinetic_term=kin,
                      source_term=src, entropic_term=ent, iteration=iteration)


def dice_loss(model, dataset, batch: Optional[LossBatch] = None,
              iteration: int = 0) -> LossReport:
    """Fully discrete DICE loss; full-data mode sums all pairs j = 1..K."""
    return _dice_eval(model, dataset, 0.0, batch, mu=dataset.mu,
                      iteration=iteration)


def dice_loss_entropic(model, dataset, eps: float,
                       batch: Optional[LossBatch] = None,
                       iteration: int = 0) -> LossReport:
    """DICE plus (eps^2/2) * Lap(s) inside each kinetic expectation; eps = 0
    reduces exactly to dice_loss."""
    if eps < 0:
        raise ValueError("entropic regularization eps must be >= 0")
    return _dice_eval(model, dataset, float(eps), batch, mu=dataset.mu,
                      iteration=iteration)


def dice_loss_parametric(model, datasets: Sequence,
                         batch: Optional[LossBatch] = None,
                         eps: float = 0.0, iteration: int = 0) -> LossReport:
    """Sum of per-parameter DICE losses over datasets with distinct mu labels.

    Batched mode evaluates one uniformly drawn parameter index and scales by
    the number of parameters, which keeps the estimator unbiased.
    """
    M = len(datasets)
    if M == 0:
        raise ValueError("parametric loss needs at least one dataset")
    if batch is None:
        kin = ent = src = 0.0
        for l, ds in enumerate(datasets):
            rep = _dice_eval(model, ds, eps, None, mu=ds.mu, mu_index=l)
            kin += rep.kinetic_term
            ent += rep.entropic_term
            src += rep.source_term
        return LossReport(total=kin + ent - src, kinetic_term=kin,
                          source_term=src, entropic_term=ent,
                          iteration=iteration)
    l = batch.mu_index or 0
    rep = _dice_eval(model, datasets[l], eps, batch, mu=datasets[l].mu,
                     mu_index=l)
    return LossReport(total=M * rep.total, kinetic_term=M * rep.kinetic_term,
                      source_term=M * rep.source_term,
                      entropic_term=M * rep.entropic_term,
                      iteration=batch.iteration)


def am_loss(model, dataset, rule: str = "trapezoid",
            batch: Optional[LossBatch] = None, iteration: int = 0) -> LossReport:
    """Time-discrete action-matching loss with a deterministic quadrature rule
    in full-data mode.

    Batched mode is a Monte Carlo estimate of the time integral with weight
    T / n_t per drawn node; the boundary expectations are always included,
    estimated on their own subsets.
    """
    from .grid import quadrature_weights

    grid = dataset.grid
    mu = dataset.mu
    K = grid.last_index
    if batch is None:
        w = quadrature_weights(grid, rule)
        sel = [(j, float(w[j]), dataset.samples[j]) for j in range(K + 1)]
        X0, XK = dataset.samples[0], dataset.samples[K]
    else:
        if batch.kind != "am":
            raise ValueError("expected an am batch")
        w_mc = grid.horizon / len(batch.nodes)
        sel = [(int(j), w_mc, dataset.samples[j][idx])
               for j, idx in zip(batch.nodes, batch.node_subsets)]
        b0, bK = batch.boundary_subsets
        X0, XK = dataset.samples[0][b0], dataset.samples[K][bK]
        iteration = batch.iteration
    kin = 0.0
    dt_quad = 0.0
    for j, wj, X in sel:
        g = model.spatial_grad(grid.nodes[j], X, mu)
        k = wj * _mean(_half_sq_norm(g))
        _check(k, "kinetic", j)
        kin = kin + k
        ds = model.time_partial(grid.nodes[j], X, mu)
        q = wj * _mean(ds)
        _check(q, "source", j)
        dt_quad = dt_quad + q
    sK = _mean(model.potential(grid.nodes[K], XK, mu))
    s0 = _mean(model.potential(grid.nodes[0], X0, mu))
    _check(sK, "source", K)
    _check(s0, "source", 0)
    src = sK - s0 - dt_quad
    return LossReport(total=kin - src, kinetic_term=kin, source_term=src,
                      entropic_term=0.0, iteration=iteration)


def am_residual(f_values, f_derivatives, grid, rule: str = "trapezoid") -> float:
    """Quadrature residual R(f) = sum_j w_j f'(t_j) - f(t_K) + f(t_0)."""
    from .grid import quadrature_weights

    fv = np.asarray(f_values, dtype=np.float64)
    fd = np.asarray(f_derivatives, dtype=np.float64)
    if fv.shape != (grid.num_nodes,) or fd.shape != (grid.num_nodes,):
        raise ValueError("need one value and one derivative per time node")
    w = quadrature_weights(grid, rule)
    return float(np.sum(w * fd) - fv[-1] + fv[0])


def kinetic_term(model, dataset) -> float:
    """sum_j w_j E_j[ |grad s(t_j, .)|^2 / 2 ] with central weights; equals the
    kinetic part of the full-data DICE loss."""
    grid = dataset.grid
    w = grid.central_weights()
    total = 0.0
    for j in range(grid.num_nodes):
        g = model.spatial_grad(grid.nodes[j], dataset.samples[j], dataset.mu)
        total += float(w[j]) * float(np.mean(_half_sq_norm(g)))
    return total
