"""Smooth feature maps for linear potential models: tensor polynomials and
random Fourier features with frozen frequencies.

All evaluation routines take an ``xp`` array module so the same code runs on
numpy arrays (solver, metrics) and under jax tracing (training, exact
parameter gradients).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "FeatureMap",
    "polynomial_features",
    "random_fourier_features",
    "fourier_features",
]


class PolynomialBlock:
    """All monomials of total degree 1..degree (the constant lives in FeatureMap)."""

    kind = "poly"

    def __init__(self, d: int, degree: int):
        if degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        self.d = d
        self.degree = degree
        exps = []
        for p in range(1, degree + 1):
            for combo in itertools.combinations_with_replacement(range(d), p):
                e = [0] * d
                for i in combo:
                    e[i] += 1
                exps.append(e)
        self.exponents = np.array(exps, dtype=np.int64)  # (m, d)

    @property
    def size(self) -> int:
        return self.exponents.shape[0]

    def value(self, Z, xp=np):
        # prod_i z_i^{e_i}; Z is (N, d) -> (N, m)
        return xp.prod(Z[:, None, :] ** self.exponents[None, :, :], axis=2)

    def jac(self, Z, xp=np):
        # (N, m, d): d/dz_i of each monomial
        N = Z.shape[0]
        cols = []
        for i in range(self.d):
            e = self.exponents.copy()
            coef = e[:, i].astype(np.float64)
            e_down = e.copy()
            e_down[:, i] = np.maximum(e[:, i] - 1, 0)
            mono = xp.prod(Z[:, None, :] ** e_down[None, :, :], axis=2)
            cols.append(coef[None, :] * mono)
        return xp.stack(cols, axis=2)

    def lap(self, Z, weights, xp=np):
        # sum_i weights_i * d^2/dz_i^2, weights is (d,)
        out = None
        for i in range(self.d):
            e = self.exponents
            coef = (e[:, i] * (e[:, i] - 1)).astype(np.float64)
            if not np.any(coef):
                continue
            e_down = e.copy()
            e_down[:, i] = np.maximum(e[:, i] - 2, 0)
            mono = xp.prod(Z[:, None, :] ** e_down[None, :, :], axis=2)
            term = float(weights[i]) * coef[None, :] * mono
            out = term if out is None else out + term
        if out is None:
            return xp.zeros((Z.shape[0], self.size))
        return out

    def config(self) -> dict:
        return {"kind": "poly", "degree": self.degree}


class FourierBlock:
    """cos(z . omega_k + b_k) with frozen frequencies omega_k and phases b_k."""

    kind = "fourier"

    def __init__(self, freqs: np.ndarray, phases: np.ndarray,
                 sigma_f: Optional[float] = None, seed: Optional[int] = None):
        self.freqs = np.asarray(freqs, dtype=np.float64)  # (m, d)
        self.phases = np.asarray(phases, dtype=np.float64)  # (m,)
        if self.freqs.ndim != 2 or self.phases.shape != (self.freqs.shape[0],):
            raise ValueError("freqs must be (m, d) and phases (m,)")
        self.d = self.freqs.shape[1]
        self.sigma_f = sigma_f
        self.seed = seed

    @property
    def size(self) -> int:
        return self.freqs.shape[0]

    def value(self, Z, xp=np):
        return xp.cos(Z @ self.freqs.T + self.phases[None, :])

    def jac(self, Z, xp=np):
        s = xp.sin(Z @ self.freqs.T + self.phases[None, :])  # (N, m)
        return -s[:, :, None] * self.freqs[None, :, :]

    def lap(self, Z, weights, xp=np):
        c = self.value(Z, xp=xp)
        w2 = np.sum(np.asarray(weights)[None, :] * self.freqs**2, axis=1)  # (m,)
        return -c * w2[None, :]

    def config(self) -> dict:
        cfg = {"kind": "fourier", "sigma_f": self.sigma_f, "seed": self.seed}
        if self.sigma_f is None or self.seed is None:
            cfg["freqs"] = self.freqs.tolist()
            cfg["phases"] = self.phases.tolist()
        else:
            cfg["m"] = self.size
        return cfg


@dataclass
class FeatureMap:
    """Concatenation of a constant feature (index 0, always present) and blocks."""

    d: int
    blocks: Sequence

    def __post_init__(self):
        for b in self.blocks:
            if b.d != self.d:
                raise ValueError("feature block dimension mismatch")

    @property
    def size(self) -> int:
        return 1 + sum(b.size for b in self.blocks)

    def value(self, Z, xp=np):
        Z = xp.asarray(Z)
        parts = [xp.ones((Z.shape[0], 1))]
        parts += [b.value(Z, xp=xp) for b in self.blocks]
        return xp.concatenate(parts, axis=1)

    def jac(self, Z, xp=np):
        Z = xp.asarray(Z)
        parts = [xp.zeros((Z.shape[0], 1, self.d))]
        parts += [b.jac(Z, xp=xp) for b in self.blocks]
        return xp.concatenate(parts, axis=1)

    def lap(self, Z, weights=None, xp=np):
        Z = xp.asarray(Z)
        if weights is None:
            weights = np.ones(self.d)
        parts = [xp.zeros((Z.shape[0], 1))]
        parts += [b.lap(Z, weights, xp=xp) for b in self.blocks]
        return xp.concatenate(parts, axis=1)

    def config(self) -> dict:
        return {"d": self.d, "blocks": [b.config() for b in self.blocks]}

    @staticmethod
    def from_config(cfg: dict) -> "FeatureMap":
        d = cfg["d"]
        blocks = []
        for bc in cfg["blocks"]:
            if bc["kind"] == "poly":
                blocks.append(PolynomialBlock(d, bc["degree"]))
            elif bc["kind"] == "fourier":
                if "freqs" in bc:
                    blocks.append(FourierBlock(np.array(bc["freqs"]),
                                               np.array(bc["phases"])))
                else:
                    blocks.append(_random_fourier_block(d, bc["m"], bc["sigma_f"],
                                                        bc["seed"]))
            else:
                raise ValueError(f"unknown feature block kind {bc['kind']!r}")
        return FeatureMap(d, blocks)


def polynomial_features(d: int, degree: int) -> FeatureMap:
    return FeatureMap(d, [PolynomialBlock(d, degree)])


def _random_fourier_block(d: int, m: int, sigma_f: float, seed: int) -> FourierBlock:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x52464621]))
    freqs = rng.normal(scale=sigma_f, size=(m, d))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    return FourierBlock(freqs, phases, sigma_f=sigma_f, seed=seed)


def random_fourier_features(d: int, m: int, sigma_f: float = 1.0,
                            seed: int = 0) -> FeatureMap:
    """Frequencies drawn once from N(0, sigma_f^2 I) and frozen."""
    return FeatureMap(d, [_random_fourier_block(d, m, sigma_f, seed)])


def fourier_features(d: int, freqs, phases) -> FeatureMap:
    """Fourier features with explicitly supplied frozen frequencies/phases."""
    return FeatureMap(d, [FourierBlock(np.asarray(freqs), np.asarray(phases))])
