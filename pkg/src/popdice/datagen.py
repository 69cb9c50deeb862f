"""Deterministic generators of marginal datasets for every in-scope fixture,
plus analytic oracles (true tangent fields, closed-form Gaussian moments).

Datasets carry unpaired populations: any pairing present during generation is
erased by an independent per-node shuffle before the data leave this module.
Generators are pure functions of (parameters, seed); randomness is drawn from
per-node child streams so parallel schedules reproduce.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import TimeGrid

__all__ = [
    "MarginalDataset",
    "AnalyticOracle",
    "TimeCurve",
    "TrajectoryBlowupError",
    "DatasetFormatError",
    "gen_stationary_gaussian",
    "gen_known_potential",
    "gen_gaussian_analytic",
    "gen_brownian",
    "gen_chaotic_ode",
    "register_system",
    "write_dataset",
    "read_dataset",
    "read_dataset_csv",
    "known_potential_grad",
    "gaussian_moment_1d",
]

_DATA_STREAM = 0x44415441  # data substream tag
_META_MAGIC = "PDICE-DATASET"
_FORMAT_VERSION = 1


class TrajectoryBlowupError(RuntimeError):
    def __init__(self, t: float, max_norm: float):
        self.t = t
        self.max_norm = max_norm
        super().__init__(f"trajectory blow-up at t={t:g} (|x| reached {max_norm:.3g})")


class DatasetFormatError(ValueError):
    pass


@dataclass
class MarginalDataset:
    """Unpaired sample populations per time node."""

    grid: TimeGrid
    samples: list
    mu: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) != self.grid.num_nodes:
            raise ValueError("one sample matrix per time node required")
        sams = []
        d = None
        for j, S in enumerate(self.samples):
            S = np.asarray(S, dtype=np.float64)
            if S.ndim == 1:
                S = S[:, None]
            if S.shape[0] < 1:
                raise ValueError(f"marginal {j} is empty")
            if not np.all(np.isfinite(S)):
                raise ValueError(f"marginal {j} contains non-finite entries")
            if d is None:
                d = S.shape[1]
            elif S.shape[1] != d:
                raise ValueError("inconsistent spatial dimension across nodes")
            sams.append(S)
        self.samples = sams
        if self.mu is not None:
            self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))

    @property
    def d(self) -> int:
        return self.samples[0].shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.array([S.shape[0] for S in self.samples])


@dataclass
class AnalyticOracle:
    """Ground truth attached to a generated dataset: marginal sampler, the
    true tangent field, and (where available) exact moments."""

    sample: Callable  # (t, n, rng) -> (n, d)
    field: Callable   # (t, X) -> (N, d), the minimal-energy gradient field
    moment: Optional[Callable] = None  # (exponents, t) -> exact E[prod x^e]
    describe: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TimeCurve:
    """Serializable scalar curve with an analytic derivative.

    kinds: const(a); linear(a, b): a + b t; sine(a, w, phi): a sin(w t + phi);
    affine exposure via params keeps configs writable by hand.
    """

    kind: str
    params: tuple

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "const":
            (a,) = self.params
            return np.broadcast_to(np.float64(a), t.shape).copy() if t.ndim else np.float64(a)
        if self.kind == "linear":
            a, b = self.params
            return a + b * t
        if self.kind == "sine":
            a, w, phi = self.params
            return a * np.sin(w * t + phi)
        raise ValueError(f"unknown curve kind {self.kind!r}")

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "const":
            return np.zeros_like(t) if t.ndim else np.float64(0.0)
        if self.kind == "linear":
            _, b = self.params
            return np.broadcast_to(np.float64(b), t.shape).copy() if t.ndim else np.float64(b)
        if self.kind == "sine":
            a, w, phi = self.params
            return a * w * np.cos(w * t + phi)
        raise ValueError(f"unknown curve kind {self.kind!r}")

    def config(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @staticmethod
    def from_config(cfg) -> "TimeCurve":
        return TimeCurve(cfg["kind"], tuple(cfg["params"]))


def _node_rng(seed: int, node: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _DATA_STREAM,
                                                          int(node)]))


def _erase_pairing(states: Sequence[np.ndarray], seed: int) -> list:
    out = []
    for j, S in enumerate(states):
        rng = _node_rng(seed ^ 0x5348, j)
        out.append(S[rng.permutation(S.shape[0])].copy())
    return out


def gaussian_moment_1d(mean: float, sigma: float, n: int) -> float:
    """E[x^n] for x ~ N(mean, sigma^2) via the standard recurrence."""
    m_prev, m_cur = 1.0, mean
    if n == 0:
        return 1.0
    for k in range(2, n + 1):
        m_prev, m_cur = m_cur, mean * m_cur + (k - 1) * sigma**2 * m_prev
    return m_cur


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_stationary_gaussian(K: int = 512, N: int = 10_000, dt: float = 2.0**-8,
                            variance: float = 1e-2, seed: int = 0) -> MarginalDataset:
    """Scalar stationary process: fresh N(0, variance) draws at every node."""
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    grid = TimeGrid(np.arange(K + 1) * dt)
    std = np.sqrt(variance)
    samples = [_node_rng(seed, j).normal(0.0, std, size=(N, 1))
               for j in range(K + 1)]
    prov = {"generator": "stationary_gaussian",
            "params": {"K": K, "N": N, "dt": dt, "variance": variance},
            "seed": seed}
    return MarginalDataset(grid, samples, provenance=prov)


def known_potential_grad(t, X) -> np.ndarray:
    """Gradient of V(t, x) = sin^2(pi t / 2) V1(x) + cos^2(pi t / 2) V0(x) with
    V0 = sum_i sin x_i + cos x_i + x_i^2 + x_i and
    V1 = sum_i x_i^4 - 16 x_i^2 + 5 x_i."""
    X = np.asarray(X, dtype=np.float64)
    a = np.sin(np.pi * t / 2.0) ** 2
    b = np.cos(np.pi * t / 2.0) ** 2
    g0 = np.cos(X) - np.sin(X) + 2.0 * X + 1.0
    g1 = 4.0 * X**3 - 32.0 * X + 5.0
    return a * g1 + b * g0


def _check_blowup(X, t, limit=1e6):
    m = float(np.max(np.abs(X)))
    if not np.isfinite(m) or m > limit:
        raise TrajectoryBlowupError(t, m)


def gen_known_potential(N0: int = 2048, K: int = 512, dt: float = 1.0 / 512,
                        d: int = 2, seed: int = 0, sign: float = -1.0,
                        rotation: float = 0.0, keep_pairing: bool = False):
    """Particles following the time-dependent potential: explicit Euler under
    xdot = sign * grad V(t, x) (+ an optional divergence-free rotation in the
    first two coordinates), marginals extracted with pairing discarded.

    The default is gradient descent (sign = -1), which settles into the
    double-well minima; ascent (+1) drives tail particles out of the quartic
    basin and blows up before t = 0.2 under the default draw x0 ~ N(0, I).
    The oracle field is the true tangent field sign * grad V; the rotational
    component carries no potential and is excluded from it. Returns
    (dataset, oracle) plus the paired trajectory array when keep_pairing is
    set (test-only side channel).
    """
    rng = _node_rng(seed, 0)
    X = rng.normal(size=(N0, d))
    grid = TimeGrid(np.arange(K + 1) * dt)
    states = [X.copy()]
    for j in range(K):
        t = grid.nodes[j]
        drift = sign * known_potential_grad(t, X)
        if rotation and d >= 2:
            rot = np.zeros_like(X)
            rot[:, 0] = -X[:, 1]
            rot[:, 1] = X[:, 0]
            drift = drift + rotation * rot
        X = X + dt * drift
        _check_blowup(X, grid.nodes[j + 1])
        states.append(X.copy())
    samples = _erase_pairing(states, seed)
    prov = {"generator": "known_potential",
            "params": {"N0": N0, "K": K, "dt": dt, "d": d, "sign": sign,
                       "rotation": rotation, "integrator": "explicit_euler"},
            "seed": seed}
    dataset = MarginalDataset(grid, samples, provenance=prov)

    oracle = AnalyticOracle(
        sample=lambda t, n, r: None,
        field=lambda t, Xq: sign * known_potential_grad(t, Xq),
        describe={"kind": "known_potential", "sign": sign})
    if keep_pairing:
        return dataset, oracle, np.stack(states, axis=1)
    return dataset, oracle


def gen_gaussian_analytic(m_curves, sigma_curve, grid: TimeGrid, N: int,
                          seed: int = 0):
    """Gaussian marginals x = m(t) + sigma(t) z with fresh z per node.

    m_curves is one TimeCurve per coordinate (or a single curve for d = 1);
    sigma_curve is a scalar TimeCurve with sigma(t) > 0. The oracle field is
    grad s*(t, x) = m'(t) + (sigma'(t)/sigma(t)) (x - m(t)), and exact moments
    of the marginals are available in closed form.
    """
    if isinstance(m_curves, TimeCurve):
        m_curves = [m_curves]
    d = len(m_curves)

    def mean_vec(t):
        return np.array([c(t) for c in m_curves], dtype=np.float64)

    def dmean_vec(t):
        return np.array([c.derivative(t) for c in m_curves], dtype=np.float64)

    for t in grid.nodes:
        if sigma_curve(t) <= 0:
            raise ValueError("sigma(t) must be positive on the grid")

    samples = []
    for j, t in enumerate(grid.nodes):
        z = _node_rng(seed, j).normal(size=(N, d))
        samples.append(mean_vec(t)[None, :] + float(sigma_curve(t)) * z)

    def field(t, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = float(sigma_curve(t))
        ds = float(sigma_curve.derivative(t))
        return dmean_vec(t)[None, :] + (ds / s) * (X - mean_vec(t)[None, :])

    def sample(t, n, rng_):
        return mean_vec(t)[None, :] + float(sigma_curve(t)) * rng_.normal(size=(n, d))

    def moment(exponents, t):
        m = mean_vec(t)
        s = float(sigma_curve(t))
        out = 1.0
        for i, e in enumerate(exponents):
            out *= gaussian_moment_1d(float(m[i]), s, int(e))
        return out

    prov = {"generator": "gaussian_analytic",
            "params": {"m": [c.config() for c in m_curves],
                       "sigma": sigma_curve.config(), "N": N},
            "seed": seed}
    dataset = MarginalDataset(grid, samples, provenance=prov)
    oracle = AnalyticOracle(sample=sample, field=field, moment=moment,
                            describe={"kind": "gaussian_analytic"})
    return dataset, oracle


def gen_brownian(eps: float, grid: TimeGrid, N: int, seed: int = 0,
                 sigma0: float = 1.0, d: int = 1) -> MarginalDataset:
    """Marginals of x0 + eps W_t with x0 ~ N(0, sigma0^2 I): independent
    redraws per node from N(0, (sigma0^2 + eps^2 (t - t_0)) I)."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    samples = []
    for j, t in enumerate(grid.nodes):
        var = sigma0**2 + eps**2 * (t - grid.t0)
        samples.append(_node_rng(seed, j).normal(0.0, np.sqrt(var), size=(N, d)))
    prov = {"generator": "brownian",
            "params": {"eps": eps, "sigma0": sigma0, "N": N, "d": d},
            "seed": seed}
    return MarginalDataset(grid, samples, provenance=prov)


def _lorenz63_rhs(X, params):
    s, r, b = params["sigma"], params["rho"], params["beta"]
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    return np.stack([s * (y - x), r * x - y - x * z, x * y - b * z], axis=1)


# chaotic systems registry: name -> (rhs(X, params) vectorized, dim, defaults);
# a transcription of another ODE system plugs in via register_system
_SYSTEMS = {
    "lorenz63": (_lorenz63_rhs, 3, {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}),
}


def register_system(name: str, rhs: Callable, dim: int, defaults: dict) -> None:
    _SYSTEMS[name] = (rhs, dim, dict(defaults))


def gen_chaotic_ode(system: str, grid: TimeGrid, N: int, init_std: float,
                    seed: int = 0, step: float = 1e-2,
                    params: Optional[dict] = None) -> MarginalDataset:
    """Ensemble of chaotic ODE solutions: N initial conditions from
    N(0, init_std^2 I) integrated with explicit Euler at micro-step ~``step``,
    marginals recorded at the grid nodes with pairing discarded."""
    if system not in _SYSTEMS:
        raise ValueError(f"unknown system {system!r}; known: {sorted(_SYSTEMS)}")
    if N < 1:
        raise ValueError("N must be >= 1")
    rhs, dim, defaults = _SYSTEMS[system]
    p = {**defaults, **(params or {})}
    X = _node_rng(seed, 0).normal(0.0, init_std, size=(N, dim))
    states = [X.copy()]
    for j in range(grid.last_index):
        span = grid.nodes[j + 1] - grid.nodes[j]
        n_sub = max(1, int(round(span / step)))
        h = span / n_sub
        for _ in range(n_sub):
            X = X + h * rhs(X, p)
        _check_blowup(X, grid.nodes[j + 1])
        states.append(X.copy())
    samples = _erase_pairing(states, seed)
    prov = {"generator": "chaotic_ode",
            "params": {"system": system, "N": N, "init_std": init_std,
                       "step": step, "system_params": p,
                       "integrator": "explicit_euler"},
            "seed": seed}
    return MarginalDataset(grid, samples, provenance=prov)


# ---------------------------------------------------------------------------
# Persistence: meta.json + one raw little-endian float64 file per node
# ---------------------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_dataset(dataset: MarginalDataset, path, pairing: bool = False) -> None:
    os.makedirs(path, exist_ok=True)
    checksums = {}
    for j, S in enumerate(dataset.samples):
        payload = np.ascontiguousarray(S, dtype="<f8").tobytes()
        name = f"marginal_{j}.f64"
        with open(os.path.join(path, name), "wb") as fh:
            fh.write(payload)
        checksums[name] = _sha256(payload)
    meta = {
        "magic": _META_MAGIC,
        "format_version": _FORMAT_VERSION,
        "d": dataset.d,
        "K": dataset.grid.last_index,
        "times": dataset.grid.nodes.tolist(),
        "counts": dataset.counts.tolist(),
        "mu": None if dataset.mu is None else dataset.mu.tolist(),
        "generator": dataset.provenance,
        "seed": dataset.provenance.get("seed"),
        "pairing": pairing,
        "checksums": checksums,
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def read_dataset(path, expect_pairing: Optional[bool] = None) -> MarginalDataset:
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"no meta.json under {path}")
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed meta.json: {exc}") from exc
    if meta.get("magic") != _META_MAGIC:
        raise DatasetFormatError("bad magic bytes in meta.json")
    if meta.get("format_version", 0) > _FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported format version {meta['format_version']}")
    if expect_pairing is not None and bool(meta.get("pairing")) != expect_pairing:
        raise DatasetFormatError("pairing flag mismatch")
    d = meta["d"]
    K = meta["K"]
    grid = TimeGrid(np.array(meta["times"]))
    samples = []
    for j in range(K + 1):
        name = f"marginal_{j}.f64"
        try:
            with open(os.path.join(path, name), "rb") as fh:
                payload = fh.read()
        except FileNotFoundError:
            raise DatasetFormatError(f"missing {name}")
        n = meta["counts"][j]
        if len(payload) != n * d * 8:
            raise DatasetFormatError(f"truncated payload in {name}")
        if meta["checksums"].get(name) != _sha256(payload):
            raise DatasetFormatError(f"checksum mismatch in {name}")
        samples.append(np.frombuffer(payload, dtype="<f8").reshape(n, d).copy())
    mu = None if meta["mu"] is None else np.array(meta["mu"])
    ds = MarginalDataset(grid, samples, mu=mu,
                         provenance=meta.get("generator") or {})
    ds.provenance.setdefault("pairing", bool(meta.get("pairing")))
    return ds


def read_dataset_csv(path) -> MarginalDataset:
    """Import a hand-made fixture: columns node, time, then d value columns."""
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [c.strip() for c in header]
        if "node" not in cols or "time" not in cols:
            raise DatasetFormatError("CSV needs 'node' and 'time' columns")
        i_node = cols.index("node")
        i_time = cols.index("time")
        value_cols = [i for i in range(len(cols)) if i not in (i_node, i_time)]
        if not value_cols:
            raise DatasetFormatError("CSV has no value columns")
        rows = []
        for row in reader:
            if not row:
                continue
            rows.append((int(row[i_node]), float(row[i_time]),
                         [float(row[i]) for i in value_cols]))
    if not rows:
        raise DatasetFormatError("CSV contains no samples")
    nodes = sorted({r[0] for r in rows})
    if nodes != list(range(len(nodes))):
        raise DatasetFormatError("node indices must be 0..K without gaps")
    times = {}
    buckets = {j: [] for j in nodes}
    for j, t, vals in rows:
        if j in times and times[j] != t:
            raise DatasetFormatError(f"inconsistent time for node {j}")
        times[j] = t
        buckets[j].append(vals)
    grid = TimeGrid(np.array([times[j] for j in nodes]))
    samples = [np.array(buckets[j], dtype=np.float64) for j in nodes]
    return MarginalDataset(grid, samples,
                           provenance={"generator": "csv_import", "path": str(path)})
