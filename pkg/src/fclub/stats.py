"""Sufficient statistics and confidence primitives shared by all policies.

Everything here is a pure function of small dense arrays.  Grams are d x d
symmetric matrices, moments are d vectors, counts are stored as floats but
stay integral under the update rules.
"""

import math
from dataclasses import dataclass

import numpy as np


class SufficientStatistics:
    """Running (gram, moment, count) triple for ridge regression."""

    __slots__ = ("gram", "moment", "count")

    def __init__(self, gram, moment, count=0.0):
        self.gram = np.asarray(gram, dtype=float)
        self.moment = np.asarray(moment, dtype=float)
        self.count = float(count)
        if self.gram.shape != (self.moment.size, self.moment.size):
            raise ValueError(
                f"gram shape {self.gram.shape} does not match moment size {self.moment.size}"
            )

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, dim)), np.zeros(dim), 0.0)

    @property
    def dim(self):
        return self.moment.size

    def copy(self):
        return SufficientStatistics(self.gram.copy(), self.moment.copy(), self.count)

    def add_observation(self, x, y):
        """Fold one (feature, reward) pair into the triple."""
        self.gram += np.outer(x, x)
        self.moment += y * x
        self.count += 1.0

    def add(self, other):
        self.gram += other.gram
        self.moment += other.moment
        self.count += other.count

    def subtract(self, other):
        self.gram -= other.gram
        self.moment -= other.moment
        self.count -= other.count

    def reset(self):
        self.gram[:] = 0.0
        self.moment[:] = 0.0
        self.count = 0.0


@dataclass
class SpectralBounds:
    """High-probability spectral envelope of the perturbations in play.

    rho is the operator-norm bound on a single released perturbation;
    rho_min / rho_max bound the total regularization any synced gram can
    carry over a run, and kappa tracks the scaled norm of the currently
    active moment perturbation.
    """

    rho: float
    rho_min: float
    rho_max: float
    kappa: float = 0.0

    @classmethod
    def for_release(cls, rho, d, horizon, up, down):
        """Envelope for a private run: offsets stack 3*rho per upload."""
        if min(up, down) <= 1.0:
            raise ValueError("thresholds must exceed 1 to bound upload counts")
        uploads = d * math.log(horizon) / math.log(min(up, down))
        return cls(rho=rho, rho_min=rho, rho_max=3.0 * rho + 3.0 * rho * uploads)

    @classmethod
    def without_privacy(cls, regularizer=1.0):
        """Non-private runs carry no perturbation; fall back on the ridge scale."""
        return cls(rho=0.0, rho_min=regularizer, rho_max=regularizer, kappa=0.0)


def ridge_estimate(stats, regularizer):
    """Solve (regularizer * I + gram) theta = moment.

    Callers that already folded a PSD offset into the gram pass
    regularizer = 0; in that case the gram itself must be invertible.
    """
    if regularizer < 0:
        raise ValueError("regularizer must be nonnegative")
    gram = stats.gram
    if regularizer > 0:
        gram = gram + regularizer * np.eye(stats.dim)
    try:
        return np.linalg.solve(gram, stats.moment)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            "singular gram with zero regularizer; add a floor before solving"
        ) from err


def confidence_decay(x):
    """sqrt((1 + ln(1 + x)) / (1 + x)): scales similarity thresholds by sample count."""
    if x < 0:
        raise ValueError("sample count must be nonnegative")
    return math.sqrt((1.0 + math.log(1.0 + x)) / (1.0 + x))


def confidence_width(count, num_sharing, bounds, sigma0, alpha, m, L, d):
    """Exploration width for a cluster aggregating num_sharing local servers.

    Grows like sqrt(log count) and degrades gracefully to the classic
    ridge width when the spectral envelope is the bare regularizer.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if num_sharing < 1:
        raise ValueError("num_sharing must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    log_term = 2.0 * math.log(m * L / alpha) + d * math.log(
        bounds.rho_max / bounds.rho_min + count / (d * num_sharing * bounds.rho_min)
    )
    if log_term < 0:
        raise ValueError("confidence width undefined: failure probability too large")
    return (
        sigma0 * math.sqrt(log_term)
        + math.sqrt(num_sharing * bounds.rho_max)
        + math.sqrt(num_sharing) * bounds.kappa
    )


def det_ratio(numerator, denominator):
    """det(numerator) / det(denominator) via log-determinants.

    The denominator must be positive definite; synced grams always are once
    they carry their regularization offset (or the caller's floor).
    """
    sign_den, logdet_den = np.linalg.slogdet(denominator)
    if sign_den <= 0:
        raise np.linalg.LinAlgError("denominator gram is not positive definite")
    sign_num, logdet_num = np.linalg.slogdet(numerator)
    if sign_num <= 0:
        raise np.linalg.LinAlgError("numerator gram is not positive definite")
    return math.exp(logdet_num - logdet_den)


def ucb_score(x, stats, beta):
    """Optimistic index x' theta_hat + beta * ||x||_{gram^{-1}}.

    The gram inside stats must already be positive definite.
    """
    sol = np.linalg.solve(stats.gram, np.column_stack([stats.moment, x]))
    quad = float(x @ sol[:, 1])
    if quad < 0:
        quad = 0.0
    return float(x @ sol[:, 0]) + beta * math.sqrt(quad)


def score_items(items, inv_gram, theta, beta):
    """Vectorized ucb_score over the rows of items given a cached inverse."""
    quad = np.einsum("ij,ij->i", items @ inv_gram, items)
    np.maximum(quad, 0.0, out=quad)
    return items @ theta + beta * np.sqrt(quad)
