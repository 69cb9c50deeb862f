"""Time discretization shared by every loss: observation nodes, the ghost-node
boundary convention, central finite-difference weights and quadrature rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TimeGrid", "central_weight", "quadrature_weights"]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times t_0 < t_1 < ... < t_K.

    The boundary convention t_{-1} = t_0 and t_{K+1} = t_K is applied inside
    the weight computations; ghost nodes are never materialized.
    """

    nodes: np.ndarray = field()

    def __init__(self, nodes) -> None:
        t = np.asarray(nodes, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two nodes (K >= 1)")
        if not np.all(np.isfinite(t)):
            raise ValueError("time nodes must be finite")
        if not np.all(np.diff(t) > 0):
            raise ValueError("time nodes must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @property
    def num_nodes(self) -> int:
        return self.nodes.size

    @property
    def last_index(self) -> int:
        """K, the index of the final node."""
        return self.nodes.size - 1

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def horizon(self) -> float:
        """Total span t_K - t_0."""
        return self.t_end - self.t0

    @property
    def dt_max(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def spacings(self) -> np.ndarray:
        """Interval lengths t_j - t_{j-1} for j = 1..K."""
        return np.diff(self.nodes)

    def central_weights(self) -> np.ndarray:
        """(t_{j+1} - t_{j-1})/2 for all j under the ghost convention."""
        t = self.nodes
        left = np.concatenate(([t[0]], t[:-1]))
        right = np.concatenate((t[1:], [t[-1]]))
        return (right - left) / 2.0

    def pair_weights(self) -> np.ndarray:
        """(t_j - t_{j-1})/2 for j = 1..K, the weights of consecutive-pair sums."""
        return self.spacings() / 2.0

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        dt = self.spacings()
        return bool(np.all(np.abs(dt - dt[0]) <= rtol * dt[0]))

    def __len__(self) -> int:
        return self.nodes.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)


def central_weight(grid: TimeGrid, j: int) -> float:
    """Central finite-difference weight (t_{j+1} - t_{j-1})/2 with ghost nodes."""
    if not 0 <= j <= grid.last_index:
        raise IndexError(f"node index {j} out of range 0..{grid.last_index}")
    return float(grid.central_weights()[j])


def quadrature_weights(grid: TimeGrid, rule: str = "trapezoid") -> np.ndarray:
    """Weights w_j with sum_j w_j g(t_j) approximating the integral of g over
    [t_0, t_K].

    Trapezoid works on any grid and coincides with the central weights under
    the ghost convention. Simpson requires equidistant nodes and even K.
    """
    if rule == "trapezoid":
        return grid.central_weights()
    if rule == "simpson":
        K = grid.last_index
        if K % 2 != 0:
            raise ValueError("Simpson quadrature needs an even number of intervals")
        if not grid.is_uniform():
            raise ValueError("Simpson quadrature needs equidistant nodes")
        h = grid.horizon / K
        w = np.full(K + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (h / 3.0)
    raise ValueError(f"unknown quadrature rule {rule!r}")
