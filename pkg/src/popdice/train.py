"""Parameter estimation: stochastic Adam training for any potential model,
closed-form per-node solves for linear feature models, and instability
monitoring of training traces.

The stochastic path evaluates a fused, jit-compiled objective built from the
model's pure evaluation functions; term values match the reference
implementations in ``losses`` (tested). The optimizer state lives in float64
on the host so trajectories are bitwise reproducible for a given seed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

import jax
import jax.numpy as jnp

from .datagen import AnalyticOracle, MarginalDataset
from .features import FeatureMap
from .field_model import LinearFeatureModel, Normalization, PotentialModel
from .grid import TimeGrid, quadrature_weights
from .losses import draw_batch

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "RankDeficiencyError",
    "train",
    "solve_linear_dice",
    "monitor_instability",
    "cosine_lr",
    "weak_form_residual",
    "write_trace_csv",
    "read_trace_csv",
]


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"singular node system at node {node}; "
                         "use a positive ridge or drop redundant features")


@dataclass
class TrainConfig:
    iterations: int
    lr_start: float = 5e-4
    lr_end: float = 1e-6
    n_x: int = 128
    n_t: int = 128
    n_mu: int = 1
    loss: str = "dice"  # dice | dice_entropic | am
    eps: float = 0.0
    quadrature: str = "trapezoid"
    seed: int = 0
    clip_norm: Optional[float] = None
    full_batch: bool = False
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    restore_best: bool = False
    instability_window: int = 500

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.loss not in ("dice", "dice_entropic", "am"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.loss == "dice_entropic" and self.eps < 0:
            raise ValueError("eps must be >= 0")


@dataclass
class TrainTrace:
    iteration: np.ndarray
    lr: np.ndarray
    total: np.ndarray
    kinetic: np.ndarray
    source: np.ndarray
    entropic: np.ndarray
    flags: np.ndarray
    aborted: bool = False
    abort_iteration: Optional[int] = None
    wall_per_100: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.iteration.size

    @property
    def instability_detected(self) -> bool:
        return bool(self.aborted or np.any(self.flags))


def cosine_lr(config: TrainConfig, i: int) -> float:
    """lr(i) = lr_end + (lr_start - lr_end)(1 + cos(pi i / iterations)) / 2."""
    n = max(config.iterations, 1)
    return config.lr_end + 0.5 * (config.lr_start - config.lr_end) * (
        1.0 + np.cos(np.pi * i / n))


# ---------------------------------------------------------------------------
# Fused jitted objectives
# ---------------------------------------------------------------------------

def _make_dice_objective(model: PotentialModel, eps: float):
    fns = model._pure_eval_fns()
    value_fn, lap_fn = fns["value"], fns["lap"]
    d_q = model.d_q

    def terms(params, w, TL, TR, XL, XR, MU, scale):
        B, n_x, d = XL.shape
        TLf = jnp.repeat(TL, n_x)
        TRf = jnp.repeat(TR, n_x)
        XLf = XL.reshape(B * n_x, d)
        XRf = XR.reshape(B * n_x, d)
        MUf = jnp.broadcast_to(MU, (2 * B * n_x, d_q))
        Tg = jnp.concatenate([TLf, TRf])
        Xg = jnp.concatenate([XLf, XRf])
        vals_g, vjp = jax.vjp(lambda X_: value_fn(params, Tg, X_, MUf), Xg)
        (G,) = vjp(jnp.ones_like(vals_g))
        sq = 0.5 * jnp.sum(G * G, axis=1).reshape(2, B, n_x).mean(axis=2)
        kin = scale * jnp.sum(w * (sq[0] + sq[1]))
        # cross values: s(t_{j-1}, .) under E_j and s(t_j, .) under E_{j-1}
        Tc = jnp.concatenate([TLf, TRf])
        Xc = jnp.concatenate([XRf, XLf])
        vals_c = value_fn(params, Tc, Xc, MUf)
        s_ll, s_rr = vals_g.reshape(2, B, n_x).mean(axis=2)
        s_lr, s_rl = vals_c.reshape(2, B, n_x).mean(axis=2)
        src = scale * jnp.sum(0.5 * ((s_rr + s_lr) - (s_rl + s_ll)))
        if eps:
            L = lap_fn(params, Tg, Xg, MUf).reshape(2, B, n_x).mean(axis=2)
            ent = scale * (eps**2 / 2.0) * jnp.sum(w * (L[0] + L[1]))
        else:
            ent = jnp.zeros(())
        total = kin + ent - src
        return total, (kin, src, ent)

    return jax.jit(jax.value_and_grad(terms, has_aux=True))


def _make_am_objective(model: PotentialModel):
    fns = model._pure_eval_fns()
    value_fn, dt_fn = fns["value"], fns["dt"]
    d_q = model.d_q

    def terms(params, w, Tq, Xq, t0, X0, tK, XK, MU, scale):
        B, n_x, d = Xq.shape
        Tf = jnp.repeat(Tq, n_x)
        Xf = Xq.reshape(B * n_x, d)
        MUf = jnp.broadcast_to(MU, (B * n_x, d_q))
        _, vjp = jax.vjp(lambda X_: value_fn(params, Tf, X_, MUf), Xf)
        (G,) = vjp(jnp.ones(B * n_x, dtype=Xf.dtype))
        sq = 0.5 * jnp.sum(G * G, axis=1).reshape(B, n_x).mean(axis=1)
        kin = scale * jnp.sum(w * sq)
        dts = dt_fn(params, Tf, Xf, MUf).reshape(B, n_x).mean(axis=1)
        quad = scale * jnp.sum(w * dts)
        MU0 = jnp.broadcast_to(MU, (X0.shape[0], d_q))
        MUK = jnp.broadcast_to(MU, (XK.shape[0], d_q))
        s0 = value_fn(params, jnp.full(X0.shape[0], t0), X0, MU0).mean()
        sK = value_fn(params, jnp.full(XK.shape[0], tK), XK, MUK).mean()
        src = sK - s0 - quad
        total = kin - src
        return total, (kin, src, jnp.zeros(()))

    return jax.jit(jax.value_and_grad(terms, has_aux=True))


# ---------------------------------------------------------------------------
# Adam on a flat float64 master vector
# ---------------------------------------------------------------------------

class _FlatParams:
    def __init__(self, model: PotentialModel):
        self.model = model
        pytree = model._pytree()
        leaves, self.treedef = jax.tree_util.tree_flatten(pytree)
        self.shapes = [l.shape for l in leaves]
        self.dtypes = [l.dtype for l in leaves]
        self.sizes = [int(np.prod(s)) if s else 1 for s in self.shapes]
        self.flat = np.concatenate([np.ravel(np.asarray(l, dtype=np.float64))
                                    for l in leaves])

    def pytree(self):
        leaves, off = [], 0
        for shape, dtype, size in zip(self.shapes, self.dtypes, self.sizes):
            leaves.append(jnp.asarray(self.flat[off:off + size].reshape(shape),
                                      dtype=dtype))
            off += size
        return jax.tree_util.tree_unflatten(self.treedef, leaves)

    def flatten_grads(self, grads) -> np.ndarray:
        leaves = jax.tree_util.tree_leaves(grads)
        return np.concatenate([np.ravel(np.asarray(l, dtype=np.float64))
                               for l in leaves])

    def write_back(self):
        self.model.set_params(self.flat)


def _adam_update(flat, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    m[:] = beta1 * m + (1 - beta1) * grad
    v[:] = beta2 * v + (1 - beta2) * grad * grad
    mhat = m / (1 - beta1**step)
    vhat = v / (1 - beta2**step)
    flat -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# Batch assembly (host side)
# ---------------------------------------------------------------------------

def _dice_arrays(dataset, batch, grid):
    nodes = grid.nodes
    if batch is None:
        K = grid.last_index
        js = np.arange(1, K + 1)
        XR = np.stack([dataset.samples[j] for j in js])
        XL = np.stack([dataset.samples[j - 1] for j in js])
        scale = 1.0
    else:
        js = batch.nodes
        XR = np.stack([dataset.samples[j][idx]
                       for j, idx in zip(js, batch.node_subsets)])
        XL = np.stack([dataset.samples[j - 1][idx]
                       for j, idx in zip(js, batch.companion_subsets)])
        scale = grid.last_index / len(js)
    w = 0.5 * (nodes[js] - nodes[js - 1])
    return w, nodes[js - 1], nodes[js], XL, XR, scale


def _am_arrays(dataset, batch, grid, rule):
    nodes = grid.nodes
    if batch is None:
        w = quadrature_weights(grid, rule)
        js = np.arange(grid.num_nodes)
        Xq = np.stack([dataset.samples[j] for j in js])
        X0, XK = dataset.samples[0], dataset.samples[-1]
    else:
        js = batch.nodes
        w = np.full(len(js), grid.horizon / len(js))
        Xq = np.stack([dataset.samples[j][idx]
                       for j, idx in zip(js, batch.node_subsets)])
        b0, bK = batch.boundary_subsets
        X0, XK = dataset.samples[0][b0], dataset.samples[-1][bK]
    return (np.asarray(w, dtype=np.float64)[js] if batch is None else w,
            nodes[js], Xq, nodes[0], X0, nodes[-1], XK)


def train(model: PotentialModel, data: Union[MarginalDataset, Sequence],
          config: TrainConfig):
    """Adam with the cosine learning-rate schedule on the batched loss.

    Returns (model, trace); the model's parameters are updated in place. A
    non-finite loss or gradient aborts training with the trace preserved and
    the abort flag set. Deterministic given the config seed.
    """
    datasets = list(data) if isinstance(data, (list, tuple)) else [data]
    parametric = len(datasets) > 1
    grid = datasets[0].grid
    for ds in datasets[1:]:
        if ds.grid != grid:
            raise ValueError("parametric datasets must share one time grid")
    M = len(datasets)

    if config.loss in ("dice", "dice_entropic"):
        eps = config.eps if config.loss == "dice_entropic" else 0.0
        objective = _make_dice_objective(model, eps)
        kind = "dice"
    else:
        objective = _make_am_objective(model)
        kind = "am"

    fp = _FlatParams(model)
    m_state = np.zeros_like(fp.flat)
    v_state = np.zeros_like(fp.flat)

    n_iter = config.iterations
    totals = np.zeros(n_iter)
    kins = np.zeros(n_iter)
    srcs = np.zeros(n_iter)
    ents = np.zeros(n_iter)
    lrs = np.zeros(n_iter)
    aborted = False
    abort_it = None
    wall = []
    best_val = np.inf
    best_flat = None

    if config.full_batch:
        if kind == "dice":
            static = _dice_arrays(datasets[0], None, grid)
        else:
            static = _am_arrays(datasets[0], None, grid, config.quadrature)

    t_block = time.perf_counter()
    for i in range(n_iter):
        lr = cosine_lr(config, i)
        lrs[i] = lr
        mu_vec = np.zeros(0)
        scale_mu = 1.0
        if config.full_batch:
            arrays = static
            if datasets[0].mu is not None and model.d_q:
                mu_vec = datasets[0].mu
        else:
            batch = draw_batch(datasets if parametric else datasets[0],
                               config.n_t, config.n_x, config.seed, i,
                               kind=kind, num_mu=M if parametric else None)
            ds = datasets[batch.mu_index or 0]
            if parametric:
                scale_mu = float(M)
                if model.d_q:
                    mu_vec = ds.mu
            elif ds.mu is not None and model.d_q:
                mu_vec = ds.mu
            if kind == "dice":
                arrays = _dice_arrays(ds, batch, grid)
            else:
                arrays = _am_arrays(ds, batch, grid, config.quadrature)

        if kind == "dice":
            w, TL, TR, XL, XR, scale = arrays
            (total, (kin, src, ent)), grads = objective(
                fp.pytree(), w, TL, TR, XL, XR, mu_vec, scale * scale_mu)
        else:
            w, Tq, Xq, t0, X0, tK, XK = arrays
            (total, (kin, src, ent)), grads = objective(
                fp.pytree(), w, Tq, Xq, t0, X0, tK, XK, mu_vec, scale_mu)

        totals[i] = float(total)
        kins[i] = float(kin)
        srcs[i] = float(src)
        ents[i] = float(ent)
        g = fp.flatten_grads(grads)
        if not (np.isfinite(totals[i]) and np.all(np.isfinite(g))):
            aborted = True
            abort_it = i
            i += 1
            break
        if config.clip_norm is not None:
            norm = float(np.linalg.norm(g))
            if norm > config.clip_norm:
                g *= config.clip_norm / norm
        _adam_update(fp.flat, g, m_state, v_state, i + 1, lr)
        if config.restore_best and totals[i] < best_val:
            best_val = totals[i]
            best_flat = fp.flat.copy()
        if config.checkpoint_every and config.checkpoint_dir and \
                (i + 1) % config.checkpoint_every == 0:
            fp.write_back()
            model.save(f"{config.checkpoint_dir}/checkpoint_{i + 1:08d}.bin")
        if (i + 1) % 100 == 0:
            now = time.perf_counter()
            wall.append(now - t_block)
            t_block = now
    else:
        i = n_iter

    if config.restore_best and best_flat is not None:
        fp.flat = best_flat
    fp.write_back()

    n_done = i
    flags = monitor_instability(totals[:n_done], kins[:n_done],
                                config.instability_window)
    trace = TrainTrace(iteration=np.arange(n_done), lr=lrs[:n_done],
                       total=totals[:n_done], kinetic=kins[:n_done],
                       source=srcs[:n_done], entropic=ents[:n_done],
                       flags=flags, aborted=aborted, abort_iteration=abort_it,
                       wall_per_100=wall)
    return model, trace


def monitor_instability(totals, kinetics, window: int,
                        min_run: int = 10) -> np.ndarray:
    """Flag iteration ranges where |loss| exceeds 10x its running-window median
    while the kinetic term does not grow proportionally (the signature of the
    quadrature-residual runaway). Only sustained ranges of at least ``min_run``
    consecutive iterations count; isolated mini-batch noise spikes do not.
    Non-finite losses are always flagged."""
    if window < 2:
        raise ValueError("window must be >= 2")
    totals = np.asarray(totals, dtype=np.float64)
    kinetics = np.asarray(kinetics, dtype=np.float64)
    n = totals.size
    raw = np.zeros(n, dtype=bool)
    abs_t = np.abs(totals)
    for i in range(window, n):
        if not np.isfinite(totals[i]):
            raw[i] = True
            continue
        med_t = np.median(abs_t[i - window:i])
        med_k = np.median(kinetics[i - window:i])
        if abs_t[i] > 10.0 * med_t and kinetics[i] <= 10.0 * med_k:
            raw[i] = True
    flags = np.zeros(n, dtype=bool)
    start = None
    for i in range(n + 1):
        if i < n and raw[i]:
            if start is None:
                start = i
        else:
            if start is not None and i - start >= min_run:
                flags[start:i] = True
            start = None
    flags |= ~np.isfinite(totals)
    return flags


# ---------------------------------------------------------------------------
# Closed-form per-node solve for linear feature models
# ---------------------------------------------------------------------------

class _EmpiricalMoments:
    def __init__(self, template: LinearFeatureModel, dataset: MarginalDataset):
        self.template = template
        self.dataset = dataset

    def mean_phi(self, j):
        return self.template.feature_values(self.dataset.samples[j]).mean(axis=0)

    def grad_gram(self, j):
        J = self.template.feature_grads(self.dataset.samples[j])  # (N, m, d)
        return np.einsum("nad,nbd->ab", J, J) / J.shape[0]


class _ExactGaussianMoments:
    """Closed-form E[phi] and E[Dphi Dphi^T] for polynomial features under the
    Gaussian analytic oracle (whitening handled by exponent arithmetic)."""

    def __init__(self, template: LinearFeatureModel, oracle: AnalyticOracle,
                 grid: TimeGrid):
        self.grid = grid
        self.oracle = oracle
        self.norm = template.norm
        feats = template.features
        if len(feats.blocks) != 1 or feats.blocks[0].kind != "poly":
            raise ValueError("exact moments support polynomial features only")
        block = feats.blocks[0]
        self.d = feats.d
        # exponent rows for every feature incl. the constant at index 0
        self.exps = np.concatenate([np.zeros((1, self.d), dtype=np.int64),
                                    block.exponents])

    def _z_moment(self, exps, t):
        # z = (x - mean)/scale with x ~ oracle marginal; oracle.moment gives
        # raw-x moments, so compute z-moments from the shifted/scaled Gaussian
        from .datagen import gaussian_moment_1d
        m_x = np.array([self.oracle.moment(
            tuple(int(k == i) for k in range(self.d)), t)
            for i in range(self.d)])
        var_x = np.array([self.oracle.moment(
            tuple(2 * int(k == i) for k in range(self.d)), t)
            for i in range(self.d)]) - m_x**2
        mz = (m_x - self.norm.mean) / self.norm.scale
        sz = np.sqrt(var_x) / self.norm.scale
        out = 1.0
        for i, e in enumerate(exps):
            out *= gaussian_moment_1d(float(mz[i]), float(sz[i]), int(e))
        return out

    def mean_phi(self, j):
        t = self.grid.nodes[j]
        return np.array([self._z_moment(e, t) for e in self.exps])

    def grad_gram(self, j):
        t = self.grid.nodes[j]
        m = self.exps.shape[0]
        G = np.zeros((m, m))
        inv_s2 = 1.0 / self.norm.scale**2
        for a in range(m):
            for b in range(a, m):
                acc = 0.0
                for i in range(self.d):
                    ea, eb = self.exps[a], self.exps[b]
                    if ea[i] == 0 or eb[i] == 0:
                        continue
                    coef = ea[i] * eb[i] * inv_s2[i]
                    prod = ea + eb
                    prod = prod.copy()
                    prod[i] -= 2
                    acc += coef * self._z_moment(prod, t)
                G[a, b] = G[b, a] = acc
        return G


def solve_linear_dice(features: FeatureMap, data, grid: Optional[TimeGrid] = None,
                      ridge: Optional[float] = None,
                      normalization: Optional[Normalization] = None
                      ) -> LinearFeatureModel:
    """Per-node Galerkin solve of the discrete weak form restricted to the
    feature span: A_j theta_j = b_j with A_j = w_j E_j[Dphi Dphi^T] + ridge I
    and b_j = (E_{j+1} - E_{j-1})[phi] / 2 under the ghost convention.

    The constant feature is excluded from the system (its gradient vanishes)
    and set afterwards by mean-pinning, which selects the zero-mean
    representative at every node. ``data`` is a marginal dataset or a Gaussian
    analytic oracle (then ``grid`` is required and expectations are exact).
    The default ridge is 1e-10 tr(A_j)/m per node; an explicitly zero ridge
    raises on rank-deficient nodes.
    """
    if isinstance(data, MarginalDataset):
        grid = data.grid
        if normalization is None:
            normalization = Normalization.from_samples(data.samples)
        model = LinearFeatureModel(features, grid, normalization=normalization)
        moments = _EmpiricalMoments(model, data)
    elif isinstance(data, AnalyticOracle):
        if grid is None:
            raise ValueError("solving against an oracle requires a grid")
        if data.moment is None:
            raise ValueError("oracle does not provide exact moments")
        model = LinearFeatureModel(features, grid,
                                   normalization=normalization or
                                   Normalization(d=features.d))
        moments = _ExactGaussianMoments(model, data, grid)
    else:
        raise TypeError("data must be a MarginalDataset or AnalyticOracle")

    K = grid.last_index
    w = grid.central_weights()
    m = features.size
    mean_phi = [moments.mean_phi(j) for j in range(K + 1)]
    theta = np.zeros((K + 1, m))
    for j in range(K + 1):
        jp = min(j + 1, K)
        jm = max(j - 1, 0)
        b = 0.5 * (mean_phi[jp][1:] - mean_phi[jm][1:])
        A = w[j] * moments.grad_gram(j)[1:, 1:]
        lam = (1e-10 * np.trace(A) / A.shape[0]) if ridge is None else float(ridge)
        if lam == 0.0:
            # surface rank deficiency instead of returning a garbage solve
            eig = np.linalg.eigvalsh(A)
            if eig[0] <= max(eig[-1], 1.0) * np.finfo(float).eps * A.shape[0]:
                raise RankDeficiencyError(j)
        try:
            theta[j, 1:] = np.linalg.solve(A + lam * np.eye(A.shape[0]), b)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(j) from exc
        # mean-pinning: zero-mean representative at node j
        theta[j, 0] = -float(mean_phi[j][1:] @ theta[j, 1:])
    model.theta = theta
    return model


def weak_form_residual(model: LinearFeatureModel, dataset: MarginalDataset
                       ) -> np.ndarray:
    """Residual of the discrete weak form over all non-constant feature-span
    test functions: (K+1, m-1) array of A0_j theta_j - b_j (no ridge)."""
    grid = dataset.grid
    K = grid.last_index
    w = grid.central_weights()
    moments = _EmpiricalMoments(model, dataset)
    mean_phi = [moments.mean_phi(j) for j in range(K + 1)]
    out = np.zeros((K + 1, model.features.size - 1))
    for j in range(K + 1):
        jp = min(j + 1, K)
        jm = max(j - 1, 0)
        b = 0.5 * (mean_phi[jp][1:] - mean_phi[jm][1:])
        A = w[j] * moments.grad_gram(j)[1:, 1:]
        out[j] = A @ model.theta[j, 1:] - b
    return out


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------

def write_trace_csv(trace: TrainTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "total", "kinetic", "source",
                         "entropic", "flag"])
        for k in range(len(trace)):
            writer.writerow([int(trace.iteration[k]), repr(float(trace.lr[k])),
                             repr(float(trace.total[k])),
                             repr(float(trace.kinetic[k])),
                             repr(float(trace.source[k])),
                             repr(float(trace.entropic[k])),
                             int(trace.flags[k])])


def read_trace_csv(path) -> TrainTrace:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:7] != ["iteration", "lr", "total", "kinetic", "source",
                          "entropic", "flag"]:
            raise ValueError("not a training trace CSV")
        for row in reader:
            if row:
                rows.append(row)
    cols = np.array([[float(v) for v in row] for row in rows])
    if cols.size == 0:
        cols = np.zeros((0, 7))
    return TrainTrace(iteration=cols[:, 0].astype(int), lr=cols[:, 1],
                      total=cols[:, 2], kinetic=cols[:, 3], source=cols[:, 4],
                      entropic=cols[:, 5], flags=cols[:, 6].astype(bool))
