"""Tree-based private release of running statistic totals.

A privatizer serves one local cluster.  It hands out a queue of
perturbations (H, h), one per upload event, such that the i-th
perturbation is the noise of the partial sum of the first i uploads under
the classic binary-tree (dyadic) decomposition: every partial sum touches
at most nu tree nodes, so consecutive differences stay O(nu) nodes wide no
matter how many uploads happen.

Node noise is lazy and memoized, keyed on (seed, level, block), so a
privatizer never materializes the whole tree and two privatizers with the
same seed release identical noise.
"""

import math
from dataclasses import dataclass

import numpy as np


class PrivatizerExhausted(RuntimeError):
    """More uploads than the tree covers; signals a protocol bug upstream."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    uploads: int  # maximum number of upload events the tree must cover

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.uploads < 1:
            raise ValueError("uploads must be at least 1")


def tree_depth(uploads):
    """Depth nu of a tree whose leaves cover `uploads` release events."""
    return math.ceil(math.log2(uploads + 1)) + 1


def noise_variance(budget):
    """Per-entry Gaussian variance needed for (epsilon, delta) release."""
    nu = tree_depth(budget.uploads)
    return 64.0 * nu * math.log(2.0 / budget.delta) ** 2 / budget.epsilon**2


def operator_norm_bound(epsilon, delta, nu, d, m, L, alpha):
    """High-probability bound rho on the operator norm of a released perturbation."""
    if alpha <= 0 or alpha >= 1:
        raise ValueError("alpha must lie in (0, 1)")
    return (
        8.0
        * math.sqrt(2.0)
        * nu
        * math.log(4.0 / delta)
        * (4.0 * math.sqrt(d) + 2.0 * math.log(2.0 * m * L / alpha))
        / epsilon
    )


class Perturbation:
    """One released (gram noise, moment noise) pair."""

    __slots__ = ("H", "h")

    def __init__(self, H, h):
        self.H = H
        self.h = h

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, dim)), np.zeros(dim))


def dyadic_cover(i):
    """Tree blocks whose disjoint union is [1, i]; at most one per level.

    Blocks are (level, index) with block (j, q) covering
    [q * 2^j + 1, (q + 1) * 2^j].
    """
    cover = []
    start = 0  # covered prefix length
    remaining = i
    while remaining:
        level = remaining.bit_length() - 1
        cover.append((level, start >> level))
        start += 1 << level
        remaining -= 1 << level
    return cover


class TreePrivatizer:
    """Queue of partial-sum perturbations for one cluster's uploads."""

    def __init__(self, budget, dim, seed, scale=1.0):
        self.budget = budget
        self.dim = dim
        self.seed = int(seed)
        self.nu = tree_depth(budget.uploads)
        self.sigma = math.sqrt(noise_variance(budget)) * scale
        self.pops = 0
        self._nodes = {}

    def _node_noise(self, level, index):
        key = (level, index)
        found = self._nodes.get(key)
        if found is not None:
            return found
        rng = np.random.default_rng([self.seed, level, index])
        raw = rng.normal(0.0, self.sigma, (self.dim + 1, self.dim + 1))
        sym = (raw + raw.T) / math.sqrt(2.0)
        noise = (sym[: self.dim, : self.dim], sym[: self.dim, self.dim])
        self._nodes[key] = noise
        return noise

    def cover(self, i):
        """Node keys whose noises make up the i-th queue entry."""
        if i == 0:
            # The pre-upload release is protected by one dedicated node a
            # level above the tree, so differences against it stay shallow.
            return [(self.nu, 0)]
        return dyadic_cover(i)

    def next_perturbation(self):
        if self.pops > self.budget.uploads:
            raise PrivatizerExhausted(
                f"privatizer drained after {self.pops} releases (tree covers {self.budget.uploads})"
            )
        keys = self.cover(self.pops)
        self.pops += 1
        H = np.zeros((self.dim, self.dim))
        h = np.zeros(self.dim)
        for level, index in keys:
            nh, nv = self._node_noise(level, index)
            H += nh
            h += nv
        return Perturbation(H, h)


class ZeroPerturbationSource:
    """Stand-in for non-private runs: releases exact statistics forever."""

    __slots__ = ("dim", "pops")

    def __init__(self, dim):
        self.dim = dim
        self.pops = 0

    def next_perturbation(self):
        self.pops += 1
        return Perturbation.zero(self.dim)
