"""Potential parameterizations s(t, x[, mu]): evaluation, exact spatial
derivatives, and exact parameter gradients of scalar functionals.

Two families are provided. ``LinearFeatureModel`` carries one coefficient
vector per time node and is linear in time between nodes; its derivatives are
assembled analytically from the feature map. ``MlpModel`` is a swish network
over (t, x[, mu]) whose spatial gradient, Laplacian and time derivative come
from nested automatic differentiation (forward-over-reverse for the
Laplacian), never from finite differences.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Optional, Sequence

import numpy as np

import jax
jax.config.update("jax_enable_x64", True)
import jax.numpy as jnp

from .features import FeatureMap
from .grid import TimeGrid

__all__ = [
    "PotentialModel",
    "LinearFeatureModel",
    "MlpModel",
    "NodeConstantShift",
    "Normalization",
    "save_model",
    "load_model",
]

_CHECKPOINT_MAGIC = b"PDICEMD1"


class Normalization:
    """Affine input whitening z = (x - mean) / scale, chained through all
    derivatives. Defaults to the identity."""

    def __init__(self, mean=None, scale=None, d: int = 1):
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise ValueError("normalization scale must be positive")

    @staticmethod
    def from_samples(samples: Sequence[np.ndarray]) -> "Normalization":
        pooled = np.concatenate([np.asarray(s) for s in samples], axis=0)
        std = pooled.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return Normalization(pooled.mean(axis=0), std)

    def config(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @staticmethod
    def from_config(cfg) -> "Normalization":
        return Normalization(np.array(cfg["mean"]), np.array(cfg["scale"]))


def _as_batch(t, X, mu, d, d_q, dtype=np.float64):
    X = np.asarray(X, dtype=dtype)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.shape[1] != d:
        raise ValueError(f"expected points in R^{d}, got shape {X.shape}")
    n = X.shape[0]
    T = np.asarray(t, dtype=dtype)
    if T.ndim == 0:
        T = np.full(n, float(T), dtype=dtype)
    elif T.shape != (n,):
        raise ValueError("t must be a scalar or match the batch size")
    if d_q:
        if mu is None:
            raise ValueError("model is mu-conditioned; a parameter value is required")
        MU = np.asarray(mu, dtype=dtype)
        if MU.ndim == 1:
            MU = np.broadcast_to(MU, (n, d_q)).copy()
        if MU.shape != (n, d_q):
            raise ValueError(f"expected mu in R^{d_q}")
    else:
        MU = np.zeros((n, 0), dtype=dtype)
    return T, X, MU, squeeze


class PotentialModel:
    """Common capability surface of all potential models."""

    d: int
    d_q: int = 0

    # -- evaluation (numpy in, numpy out; t scalar or per-row vector) --------
    def potential(self, t, X, mu=None) -> np.ndarray:
        raise NotImplementedError

    def spatial_grad(self, t, X, mu=None) -> np.ndarray:
        raise NotImplementedError

    def spatial_laplacian(self, t, X, mu=None) -> np.ndarray:
        raise NotImplementedError

    def time_partial(self, t, X, mu=None) -> np.ndarray:
        raise NotImplementedError

    # -- parameters -----------------------------------------------------------
    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat: np.ndarray) -> None:
        raise NotImplementedError

    @property
    def num_params(self) -> int:
        return self.get_params().size

    def param_grad(self, functional: Callable) -> np.ndarray:
        """Exact gradient w.r.t. the parameter vector of a scalar functional
        built from the exposed evaluations over finite point sets.

        The functional receives a view with the same evaluation methods as the
        model and must return a scalar.
        """
        pytree = self._pytree()

        def objective(params):
            return self._traced_view(params).functional_value(functional)

        grads = jax.grad(objective)(pytree)
        flat = np.concatenate([np.ravel(np.asarray(g, dtype=np.float64))
                               for g in jax.tree_util.tree_leaves(grads)])
        if not np.all(np.isfinite(flat)):
            # re-run on the concrete model so the losses' per-term checks can
            # name the offending term
            functional(self)
            raise FloatingPointError("non-finite parameter gradient")
        return flat

    # -- internals used by param_grad/training --------------------------------
    def _pytree(self):
        raise NotImplementedError

    def _traced_view(self, pytree) -> "_TracedView":
        raise NotImplementedError

    # -- persistence -----------------------------------------------------------
    def _header(self) -> dict:
        raise NotImplementedError

    def save(self, path) -> None:
        save_model(self, path)


class _TracedView:
    """Model-shaped facade whose evaluations flow through traced parameters."""

    def __init__(self, model, eval_fns, d, d_q):
        self._fns = eval_fns
        self._model = model
        self.d = d
        self.d_q = d_q

    def functional_value(self, functional):
        return functional(self)

    def _prep(self, t, X, mu):
        X = jnp.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        n = X.shape[0]
        T = jnp.asarray(t)
        if T.ndim == 0:
            T = jnp.full(n, T)
        if self.d_q:
            MU = jnp.asarray(mu)
            if MU.ndim == 1:
                MU = jnp.broadcast_to(MU, (n, self.d_q))
        else:
            MU = jnp.zeros((n, 0))
        return T, X, MU

    def potential(self, t, X, mu=None):
        return self._fns["value"](*self._prep(t, X, mu))

    def spatial_grad(self, t, X, mu=None):
        return self._fns["grad"](*self._prep(t, X, mu))

    def spatial_laplacian(self, t, X, mu=None):
        return self._fns["lap"](*self._prep(t, X, mu))

    def time_partial(self, t, X, mu=None):
        return self._fns["dt"](*self._prep(t, X, mu))


# ---------------------------------------------------------------------------
# Linear-in-features model with per-node coefficients
# ---------------------------------------------------------------------------

def _segment(t_nodes, T, xp):
    seg = xp.clip(xp.searchsorted(t_nodes, T, side="right") - 1, 0,
                  len(t_nodes) - 2)
    tl = t_nodes[seg]
    tr = t_nodes[seg + 1]
    wr = (T - tl) / (tr - tl)
    wl = (tr - T) / (tr - tl)
    return seg, wl, wr, tr - tl


def _blend(theta, seg, wl, wr, xp):
    """Interpolated per-row coefficients; exact node hits never touch the
    neighboring node (keeps endpoint evaluation clean even when a neighbor
    carries non-finite parameters)."""
    left = theta[seg]
    right = theta[seg + 1]
    mix = wl[:, None] * left + wr[:, None] * right
    mix = xp.where(wr[:, None] == 0.0, left, mix)
    return xp.where(wl[:, None] == 0.0, right, mix)


class LinearFeatureModel(PotentialModel):
    """s(t_j, x) = theta_j . phi(x) with the linear-in-time interpolant between
    nodes. The feature map always contains the constant feature at index 0."""

    kind = "linear"

    def __init__(self, features: FeatureMap, grid: TimeGrid,
                 theta: Optional[np.ndarray] = None,
                 normalization: Optional[Normalization] = None):
        self.features = features
        self.grid = grid
        self.d = features.d
        self.d_q = 0
        m = features.size
        if theta is None:
            theta = np.zeros((grid.num_nodes, m))
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (grid.num_nodes, m):
            raise ValueError(f"theta must have shape {(grid.num_nodes, m)}")
        self.theta = theta
        self.norm = normalization or Normalization(d=self.d)

    # numpy evaluation path ---------------------------------------------------
    def _z(self, X):
        return (X - self.norm.mean[None, :]) / self.norm.scale[None, :]

    def _node_theta(self, T):
        seg, wl, wr, _ = _segment(self.grid.nodes, T, np)
        return _blend(self.theta, seg, wl, wr, np)

    def potential(self, t, X, mu=None):
        T, X, _, squeeze = _as_batch(t, X, mu, self.d, 0)
        phi = self.features.value(self._z(X))
        out = np.sum(phi * self._node_theta(T), axis=1)
        return out[0] if squeeze else out

    def spatial_grad(self, t, X, mu=None):
        T, X, _, squeeze = _as_batch(t, X, mu, self.d, 0)
        J = self.features.jac(self._z(X))  # (N, m, d)
        th = self._node_theta(T)
        g = np.einsum("nmd,nm->nd", J, th) / self.norm.scale[None, :]
        return g[0] if squeeze else g

    def spatial_laplacian(self, t, X, mu=None):
        T, X, _, squeeze = _as_batch(t, X, mu, self.d, 0)
        lap = self.features.lap(self._z(X), weights=1.0 / self.norm.scale**2)
        out = np.sum(lap * self._node_theta(T), axis=1)
        return out[0] if squeeze else out

    def time_partial(self, t, X, mu=None):
        # right-sided slope at interior nodes, left-sided at t_K
        T, X, _, squeeze = _as_batch(t, X, mu, self.d, 0)
        seg, _, _, dt = _segment(self.grid.nodes, T, np)
        slope = (self.theta[seg + 1] - self.theta[seg]) / dt[:, None]
        phi = self.features.value(self._z(X))
        out = np.sum(phi * slope, axis=1)
        return out[0] if squeeze else out

    # feature access for the exact solver --------------------------------------
    def feature_values(self, X) -> np.ndarray:
        return self.features.value(self._z(np.asarray(X, dtype=np.float64)))

    def feature_grads(self, X) -> np.ndarray:
        J = self.features.jac(self._z(np.asarray(X, dtype=np.float64)))
        return J / self.norm.scale[None, None, :]

    # parameters ----------------------------------------------------------------
    def get_params(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def set_params(self, flat) -> None:
        self.theta = np.asarray(flat, dtype=np.float64).reshape(self.theta.shape).copy()

    def _pytree(self):
        return {"theta": jnp.asarray(self.theta)}

    def _pure_eval_fns(self):
        nodes = jnp.asarray(self.grid.nodes)
        mean = jnp.asarray(self.norm.mean)
        scale = jnp.asarray(self.norm.scale)
        feats = self.features
        inv_scale2 = np.asarray(1.0 / self.norm.scale**2)

        def node_theta(theta, T):
            seg, wl, wr, _ = _segment(nodes, T, jnp)
            return _blend(theta, seg, wl, wr, jnp)

        def value(params, T, X, MU):
            Z = (X - mean[None, :]) / scale[None, :]
            return jnp.sum(feats.value(Z, xp=jnp) * node_theta(params["theta"], T),
                           axis=1)

        def grad(params, T, X, MU):
            Z = (X - mean[None, :]) / scale[None, :]
            J = feats.jac(Z, xp=jnp)
            th = node_theta(params["theta"], T)
            return jnp.einsum("nmd,nm->nd", J, th) / scale[None, :]

        def lap(params, T, X, MU):
            Z = (X - mean[None, :]) / scale[None, :]
            L = feats.lap(Z, weights=inv_scale2, xp=jnp)
            return jnp.sum(L * node_theta(params["theta"], T), axis=1)

        def dt(params, T, X, MU):
            seg, _, _, dseg = _segment(nodes, T, jnp)
            theta = params["theta"]
            slope = (theta[seg + 1] - theta[seg]) / dseg[:, None]
            Z = (X - mean[None, :]) / scale[None, :]
            return jnp.sum(feats.value(Z, xp=jnp) * slope, axis=1)

        return {"value": value, "grad": grad, "lap": lap, "dt": dt}

    def _traced_view(self, pytree):
        fns = self._pure_eval_fns()
        bound = {k: (lambda f: (lambda T, X, MU: f(pytree, T, X, MU)))(f)
                 for k, f in fns.items()}
        return _TracedView(self, bound, self.d, 0)

    # bookkeeping ----------------------------------------------------------------
    def pin_means(self, node_means: np.ndarray) -> None:
        """Subtract the empirical node means from the constant coordinate so
        each s(t_j, .) has zero mean under its marginal."""
        self.theta[:, 0] -= np.asarray(node_means, dtype=np.float64)

    def _header(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "d_q": 0,
            "dtype": "float64",
            "features": self.features.config(),
            "times": self.grid.nodes.tolist(),
            "normalization": self.norm.config(),
        }

    @staticmethod
    def _from_header(header, flat):
        feats = FeatureMap.from_config(header["features"])
        grid = TimeGrid(np.array(header["times"]))
        model = LinearFeatureModel(feats, grid,
                                   normalization=Normalization.from_config(
                                       header["normalization"]))
        model.set_params(flat)
        return model


# ---------------------------------------------------------------------------
# Swish multi-layer perceptron over (t, x[, mu])
# ---------------------------------------------------------------------------

def _mlp_forward(params, U):
    h = U
    for W, b in params[:-1]:
        h = jax.nn.swish(h @ W + b)
    W, b = params[-1]
    return (h @ W + b)[:, 0]


def _mlp_value(params, mean, scale, T, X, MU):
    Z = (X - mean[None, :]) / scale[None, :]
    U = jnp.concatenate([T[:, None], Z, MU], axis=1)
    return _mlp_forward(params, U)


def _mlp_grad_x(params, mean, scale, T, X, MU):
    g = jax.grad(lambda X_: jnp.sum(_mlp_value(params, mean, scale, T, X_, MU)))(X)
    return g


def _mlp_dt(params, mean, scale, T, X, MU):
    return jax.grad(lambda T_: jnp.sum(_mlp_value(params, mean, scale, T_, X, MU)))(T)


def _mlp_lap(params, mean, scale, T, X, MU):
    # forward-over-reverse: jvp through the batched spatial gradient, one
    # tangent direction per coordinate
    d = X.shape[1]

    def gfun(X_):
        return _mlp_grad_x(params, mean, scale, T, X_, MU)

    total = jnp.zeros(X.shape[0], dtype=X.dtype)
    eye = jnp.eye(d, dtype=X.dtype)
    for i in range(d):
        tangent = jnp.broadcast_to(eye[i], X.shape)
        _, jv = jax.jvp(gfun, (X,), (tangent,))
        total = total + jv[:, i]
    return total


_mlp_value_j = jax.jit(_mlp_value)
_mlp_grad_x_j = jax.jit(_mlp_grad_x)
_mlp_dt_j = jax.jit(_mlp_dt)
_mlp_lap_j = jax.jit(_mlp_lap)


class MlpModel(PotentialModel):
    """Fully connected network with swish activations mapping (t, x[, mu]) to a
    scalar potential."""

    kind = "mlp"

    def __init__(self, d: int, width: int = 32, depth: int = 3, d_q: int = 0,
                 seed: int = 0, dtype=np.float64,
                 normalization: Optional[Normalization] = None,
                 params: Optional[list] = None):
        if depth < 1:
            raise ValueError("depth (number of hidden layers) must be >= 1")
        self.d = d
        self.d_q = d_q
        self.width = width
        self.depth = depth
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.norm = normalization or Normalization(d=d)
        sizes = [1 + d + d_q] + [width] * depth + [1]
        self._sizes = sizes
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4D4C5031]))
            params = []
            for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                W = rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)
                if k == len(sizes) - 2:
                    W = np.zeros_like(W)  # flat potential at init
                params.append((jnp.asarray(W, dtype=self.dtype),
                               jnp.asarray(np.zeros(fan_out), dtype=self.dtype)))
        self.params = params

    def _call(self, fn, t, X, mu):
        T, X, MU, squeeze = _as_batch(t, X, mu, self.d, self.d_q, dtype=self.dtype)
        out = np.asarray(fn(self.params, jnp.asarray(self.norm.mean, dtype=self.dtype),
                            jnp.asarray(self.norm.scale, dtype=self.dtype),
                            jnp.asarray(T), jnp.asarray(X), jnp.asarray(MU)))
        return out[0] if squeeze else out

    def potential(self, t, X, mu=None):
        return self._call(_mlp_value_j, t, X, mu)

    def spatial_grad(self, t, X, mu=None):
        return self._call(_mlp_grad_x_j, t, X, mu)

    def spatial_laplacian(self, t, X, mu=None):
        return self._call(_mlp_lap_j, t, X, mu)

    def time_partial(self, t, X, mu=None):
        return self._call(_mlp_dt_j, t, X, mu)

    # parameters ------------------------------------------------------------
    def get_params(self) -> np.ndarray:
        return np.concatenate([np.ravel(np.asarray(a, dtype=np.float64))
                               for Wb in self.params for a in Wb])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        out, off = [], 0
        for W, b in self.params:
            nW, nb = W.size, b.size
            out.append((jnp.asarray(flat[off:off + nW].reshape(W.shape),
                                    dtype=self.dtype),
                        jnp.asarray(flat[off + nW:off + nW + nb], dtype=self.dtype)))
            off += nW + nb
        if off != flat.size:
            raise ValueError("parameter vector has the wrong length")
        self.params = out

    def _pytree(self):
        return [tuple(layer) for layer in self.params]

    def _pure_eval_fns(self):
        mean = jnp.asarray(self.norm.mean, dtype=self.dtype)
        scale = jnp.asarray(self.norm.scale, dtype=self.dtype)
        return {
            "value": lambda p, T, X, MU: _mlp_value(p, mean, scale, T, X, MU),
            "grad": lambda p, T, X, MU: _mlp_grad_x(p, mean, scale, T, X, MU),
            "lap": lambda p, T, X, MU: _mlp_lap(p, mean, scale, T, X, MU),
            "dt": lambda p, T, X, MU: _mlp_dt(p, mean, scale, T, X, MU),
        }

    def _traced_view(self, pytree):
        fns = self._pure_eval_fns()
        bound = {k: (lambda f: (lambda T, X, MU: f(pytree, T, X, MU)))(f)
                 for k, f in fns.items()}
        return _TracedView(self, bound, self.d, self.d_q)

    def _header(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "d_q": self.d_q,
            "width": self.width,
            "depth": self.depth,
            "seed": self.seed,
            "dtype": self.dtype.name,
            "normalization": self.norm.config(),
        }

    @staticmethod
    def _from_header(header, flat):
        model = MlpModel(header["d"], header["width"], header["depth"],
                         d_q=header["d_q"], seed=header["seed"],
                         dtype=np.dtype(header["dtype"]),
                         normalization=Normalization.from_config(
                             header["normalization"]))
        model.set_params(flat)
        return model


# ---------------------------------------------------------------------------
# Spatially constant, time-varying shift wrapper
# ---------------------------------------------------------------------------

class NodeConstantShift:
    """Wraps a model as s + f with f constant over space, given node values
    f(t_j) and node slopes df/dt(t_j).

    Evaluation is supported at grid nodes (exact time match) and, for the
    potential, in between by linear interpolation of the node values. When
    slopes are omitted they follow the piecewise-linear convention of the
    interpolant (right-sided at interior nodes, left-sided at t_K).
    """

    def __init__(self, base, grid: TimeGrid, values, slopes=None):
        self.base = base
        self.grid = grid
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (grid.num_nodes,):
            raise ValueError("need one constant per time node")
        if slopes is None:
            dv = np.diff(self.values) / grid.spacings()
            slopes = np.concatenate([dv, [dv[-1]]])
        self.slopes = np.asarray(slopes, dtype=np.float64)
        if self.slopes.shape != (grid.num_nodes,):
            raise ValueError("need one slope per time node")
        self.d = base.d
        self.d_q = getattr(base, "d_q", 0)

    def _f(self, T):
        seg, wl, wr, _ = _segment(self.grid.nodes, T, np)
        return wl * self.values[seg] + wr * self.values[seg + 1]

    def _df(self, T):
        # exact node times take the stored node slope
        nodes = self.grid.nodes
        seg, _, _, dt = _segment(nodes, T, np)
        out = (self.values[seg + 1] - self.values[seg]) / dt
        idx = np.searchsorted(nodes, T)
        idx = np.clip(idx, 0, nodes.size - 1)
        at_node = nodes[idx] == T
        return np.where(at_node, self.slopes[np.where(at_node, idx, 0)], out)

    def potential(self, t, X, mu=None):
        base = self.base.potential(t, X, mu)
        T = np.full(np.shape(base) or (1,), t, dtype=np.float64) \
            if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64)
        shift = self._f(T)
        return base + (shift[0] if np.ndim(base) == 0 else shift)

    def spatial_grad(self, t, X, mu=None):
        return self.base.spatial_grad(t, X, mu)

    def spatial_laplacian(self, t, X, mu=None):
        return self.base.spatial_laplacian(t, X, mu)

    def time_partial(self, t, X, mu=None):
        base = self.base.time_partial(t, X, mu)
        T = np.full(np.shape(base) or (1,), t, dtype=np.float64) \
            if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64)
        shift = self._df(T)
        return base + (shift[0] if np.ndim(base) == 0 else shift)


# ---------------------------------------------------------------------------
# Checkpoint file: magic, version, JSON header, raw little-endian float64
# parameters
# ---------------------------------------------------------------------------

def save_model(model: PotentialModel, path) -> None:
    header = model._header()
    flat = model.get_params()
    header["param_count"] = int(flat.size)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", 1, len(blob)))
        fh.write(blob)
        fh.write(flat.astype("<f8").tobytes())


def load_model(path) -> PotentialModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic bytes)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != header["param_count"]:
        raise ValueError("checkpoint payload truncated")
    if header["kind"] == "linear":
        return LinearFeatureModel._from_header(header, flat)
    if header["kind"] == "mlp":
        return MlpModel._from_header(header, flat)
    raise ValueError(f"unknown model kind {header['kind']!r}")
