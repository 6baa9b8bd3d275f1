"""World generation, arrivals, items, rewards, and the regret oracle.

A World is immutable after construction.  Sampling takes explicit RNG
handles owned by the caller so that runs with common random numbers can
share arrival/item/noise streams across policies.
"""

import math
from dataclasses import dataclass, field

import numpy as np

ROOT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class World:
    preferences: np.ndarray  # n x d, each row norm <= 1
    membership: np.ndarray  # user -> true cluster id
    assignment: np.ndarray  # user -> server id
    gap: float
    item_dim: int
    noise_sigma: float
    item_pool: np.ndarray | None = field(default=None)  # optional empirical items

    @property
    def num_users(self):
        return self.preferences.shape[0]

    @property
    def num_clusters(self):
        return int(self.membership.max()) + 1

    @property
    def num_servers(self):
        return int(self.assignment.max()) + 1

    def server_rosters(self):
        return [
            np.flatnonzero(self.assignment == server)
            for server in range(self.num_servers)
        ]

    def true_user_partition(self):
        """Ground-truth grouping of users, as a set of frozensets."""
        groups = {}
        for user, cluster in enumerate(self.membership):
            groups.setdefault(int(cluster), set()).add(user)
        return {frozenset(users) for users in groups.values()}


@dataclass(frozen=True)
class Round:
    t: int
    user: int
    items: np.ndarray  # K x d


def _assign_servers(n, L, rng):
    """Uniform server assignment, with the first L shuffled users pinned to
    distinct servers so no server ends up empty."""
    assignment = rng.integers(0, L, size=n)
    pinned = rng.permutation(n)[:L]
    assignment[pinned] = np.arange(L)
    return assignment


def generate_world(n, m, L, d, gamma=ROOT2, sigma0=0.1, seed=0):
    """Synthetic world: m orthonormal preferences, round-robin memberships."""
    if m > n or L > n:
        raise ValueError(f"need n >= m and n >= L, got n={n}, m={m}, L={L}")
    if m > d:
        raise ValueError(f"orthogonal preferences need d >= m, got d={d}, m={m}")
    if not 0 < gamma <= ROOT2 + 1e-9:
        raise ValueError("gamma must lie in (0, sqrt(2)] for unit orthonormal vectors")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, m)))
    centers = basis.T  # m orthonormal rows
    membership = np.arange(n) % m
    preferences = centers[membership]
    assignment = _assign_servers(n, L, rng)
    return World(
        preferences=preferences,
        membership=membership,
        assignment=assignment,
        gap=float(gamma),
        item_dim=d,
        noise_sigma=float(sigma0),
    )


def sample_items(world, K, rng):
    if world.item_pool is not None:
        picks = rng.integers(0, world.item_pool.shape[0], size=K)
        return world.item_pool[picks]
    items = rng.standard_normal((K, world.item_dim))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    return items


def sample_round(world, t, K, rng, item_rng=None):
    """Uniform arrival plus K i.i.d. items; item_rng keeps the streams in
    separate lanes when the caller wants common random numbers."""
    if K < 1:
        raise ValueError("K must be at least 1")
    user = int(rng.integers(0, world.num_users))
    items = sample_items(world, K, rng if item_rng is None else item_rng)
    return Round(t=t, user=user, items=items)


def sample_reward(world, user, x, rng, clamp=False):
    y = float(world.preferences[user] @ x) + world.noise_sigma * float(
        rng.standard_normal()
    )
    if clamp:
        y = min(1.0, max(0.0, y))
    return y


def instant_regret(world, user, items, chosen):
    """Gap between the best offered item and the chosen one (by index)."""
    if not 0 <= chosen < len(items):
        raise IndexError(f"chosen index {chosen} outside the {len(items)}-item set")
    values = items @ world.preferences[user]
    return float(values.max() - values[chosen])


def _detect_delimiter(line):
    for delim in ("::", "\t", ","):
        if delim in line:
            return delim
    return None


def load_ratings_dataset(path, d, n_select, seed=0, L=1, sigma0=0.1):
    """Build a World from a (user_id, item_id, rating) file.

    Preference and item vectors come from a rank-d truncated SVD of the
    zero-imputed, mean-centered dense ratings matrix; user vectors are
    scaled into the unit ball and item vectors to unit norm.
    """
    users, items, ratings = [], [], []
    with open(path, encoding="utf-8") as fh:
        delim = None
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if delim is None:
                delim = _detect_delimiter(line)
                if delim is None:
                    raise ValueError(f"{path}:{lineno}: cannot detect delimiter")
            parts = line.split(delim)
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3+ columns, got {len(parts)}")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as err:
                if lineno == 1:
                    continue  # header line
                raise ValueError(f"{path}:{lineno}: {err}") from None
    if not users:
        raise ValueError(f"{path}: no rating records found")

    user_ids = sorted(set(users))
    item_ids = sorted(set(items))
    if len(user_ids) < n_select:
        raise ValueError(
            f"{path}: only {len(user_ids)} users with ratings, need {n_select}"
        )
    u_index = {u: i for i, u in enumerate(user_ids)}
    i_index = {j: i for i, j in enumerate(item_ids)}
    dense = np.zeros((len(user_ids), len(item_ids)))
    for u, j, r in zip(users, items, ratings):
        dense[u_index[u], i_index[j]] = r
    dense -= dense.mean()

    rank = min(d, min(dense.shape))
    left, sing, right = np.linalg.svd(dense, full_matrices=False)
    factors = np.sqrt(sing[:rank])
    user_vecs = np.zeros((len(user_ids), d))
    item_vecs = np.zeros((len(item_ids), d))
    user_vecs[:, :rank] = left[:, :rank] * factors
    item_vecs[:, :rank] = right[:rank].T * factors

    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.permutation(len(user_ids))[:n_select])
    prefs = user_vecs[chosen]
    max_norm = np.linalg.norm(prefs, axis=1).max()
    if max_norm > 0:
        prefs = prefs / max_norm
    norms = np.linalg.norm(item_vecs, axis=1)
    norms[norms == 0] = 1.0
    item_pool = item_vecs / norms[:, None]

    # No ground-truth clusters in real data: each user is its own cluster and
    # the gap is the smallest distance between distinct preference vectors.
    diffs = prefs[:, None, :] - prefs[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    off_diag = dists[~np.eye(n_select, dtype=bool)]
    positive = off_diag[off_diag > 1e-12]
    gap = float(positive.min()) if positive.size else 1.0
    return World(
        preferences=prefs,
        membership=np.arange(n_select),
        assignment=_assign_servers(n_select, L, rng),
        gap=gap,
        item_dim=d,
        noise_sigma=float(sigma0),
        item_pool=item_pool,
    )
