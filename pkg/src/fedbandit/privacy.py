"""Tree-based Gaussian mechanism for running sums of episode messages.

Each agent has one :class:`NoiseTree` at the controller. The noisy prefix
sum through episode k adds the noise stored at the dyadic intervals that
decompose [1, k]; every node's noise is drawn once and reused by all
prefixes that touch it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def tree_depth(K: int) -> int:
    """Number of levels of the binary tree over K episodes, 1 + ceil(log2 K)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return 1 + math.ceil(math.log2(K))


def prefix_nodes(k: int, K: int | None = None) -> list[tuple[int, int]]:
    """Disjoint dyadic intervals whose union is [1, k], largest first.

    >>> prefix_nodes(7)
    [(1, 4), (5, 6), (7, 7)]
    """
    if k < 0 or (K is not None and k > K):
        raise ValueError(f"need 0 <= k <= K, got k={k}, K={K}")
    nodes = []
    start = 1
    for bit in reversed(range(k.bit_length())):
        size = 1 << bit
        if k & size:
            nodes.append((start, start + size - 1))
            start += size
    return nodes


def calibrate(mu: float, nu: float, L: float, K: int, d: int | None = None) -> float:
    """Per-node noise standard deviation.

    Each node gets a (mu/m, nu/m) share of the budget (m tree levels) and
    runs the Gaussian mechanism with sensitivity 2L: replacing one episode
    message, bounded by L in norm, moves a node sum by at most 2L.
    ``mu = inf`` disables the mechanism and returns 0. ``d`` does not enter
    the calibration; it is accepted for call-site symmetry.
    """
    if math.isinf(mu):
        return 0.0
    if mu <= 0 or not 0 < nu < 1:
        raise ValueError("need mu > 0 and 0 < nu < 1")
    if L < 1 or K < 1:
        raise ValueError("need L >= 1 and K >= 1")
    m = tree_depth(K)
    return (2.0 * L * m / mu) * math.sqrt(2.0 * math.log(1.25 * m / nu))


def noise_budget(mu: float, nu: float, iota: float, d: int) -> float:
    """High-probability noise-norm budget B; noise norms stay below B * L."""
    return 48.0 * iota * math.log(4.0 / nu) * (math.sqrt(d) + iota) / mu


@dataclass(frozen=True)
class PrivacyBudget:
    mu: float
    nu: float
    L: float
    iota: float
    d: int
    B_override: float | None = None

    @property
    def B(self) -> float:
        if self.B_override is not None:
            return self.B_override
        return noise_budget(self.mu, self.nu, self.iota, self.d)

    @property
    def bound(self) -> float:
        return self.B * self.L


class NoiseTree:
    """Lazily drawn per-node Gaussian noise for one agent.

    Node noise depends only on ``(seed, node)``, so results do not depend
    on the order in which prefixes are queried.
    """

    def __init__(self, K: int, d: int, sigma: float, seed):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.K = K
        self.d = d
        self.sigma = float(sigma)
        self.depth = tree_depth(K)
        self._seed = _seed_words(seed)
        self.nodes: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def node_noise(self, node: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        if node not in self.nodes:
            rng = np.random.default_rng(self._seed + [node[0], node[1]])
            d = self.d
            upper = rng.normal(0.0, self.sigma, size=(d, d))
            H = np.triu(upper) + np.triu(upper, 1).T
            h = rng.normal(0.0, self.sigma, size=d)
            self.nodes[node] = (H, h)
        return self.nodes[node]

    def accumulated(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Total noise covering episodes 1..k."""
        H = np.zeros((self.d, self.d))
        h = np.zeros(self.d)
        if self.sigma == 0.0:
            return H, h
        for node in prefix_nodes(k, self.K):
            Hn, hn = self.node_noise(node)
            H = H + Hn
            h = h + hn
        return H, h

    def reseeded(self, extra: int) -> "NoiseTree":
        return NoiseTree(self.K, self.d, self.sigma, self._seed + [extra])


def _seed_words(seed) -> list[int]:
    if isinstance(seed, np.random.SeedSequence):
        return [int(w) for w in seed.generate_state(4)]
    if isinstance(seed, (list, tuple)):
        return [int(w) for w in seed]
    return [int(seed)]


def privatize(tree: NoiseTree, V, v, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Noisy images of the running sums ``V, v`` through episode k-1.

    With zero noise the inputs are returned unchanged (as copies).
    """
    V = np.asarray(V, dtype=float)
    v = np.asarray(v, dtype=float)
    if tree.sigma == 0.0 or k <= 1:
        return V.copy(), v.copy()
    H, h = tree.accumulated(k - 1)
    return V + H, v + h


def noise_norm_check(tree: NoiseTree, budget: PrivacyBudget, trials: int) -> float:
    """Fraction of (trial, k) pairs whose accumulated noise exceeds B * L.

    Each trial uses an independently reseeded copy of ``tree``; the matrix
    noise is measured in spectral norm and the vector noise in l2 norm.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    bound = budget.bound
    exceed = 0
    total = 0
    for trial in range(trials):
        t = tree.reseeded(trial)
        for k in range(1, tree.K + 1):
            H, h = t.accumulated(k)
            big = max(np.linalg.norm(H, 2), np.linalg.norm(h))
            exceed += big > bound
            total += 1
    return exceed / total
