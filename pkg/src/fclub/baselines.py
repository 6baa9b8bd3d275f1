"""Reference policies and the baseline dispatch.

linucb and club are standalone single-server policies; the homo / fclub
families are configurations of the federation pipeline.  All of them run
under the common-random-number loop in federation.simulate, so on the same
seed every policy faces the identical arrival/item/noise stream.
"""

import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .federation import DET_FLOOR, FederationPolicy, merge_global, simulate
from .stats import (
    SpectralBounds,
    SufficientStatistics,
    confidence_decay,
    confidence_width,
    score_items,
)

BASELINE_NAMES = ("linucb", "club", "homo", "homo_dc", "fclub", "fclub_dc", "fclub_cdp")
RESERVED_NAMES = ("sclub",)


@dataclass
class BaselineSpec:
    """A named baseline plus parameter overrides applied on top of the config."""

    name: str
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name in RESERVED_NAMES:
            raise NotImplementedError(
                f"{self.name} is reserved for comparison tables but not implemented"
            )
        if self.name not in BASELINE_NAMES:
            raise ValueError(
                f"unknown baseline {self.name!r}; expected one of {BASELINE_NAMES}"
            )


class LinUCBPolicy:
    """Independent optimistic ridge regression per user; no sharing at all."""

    comm_count = 0

    def __init__(self, world, horizon, regularizer=1.0, sigma0=0.1, failure=None,
                 exploration_scale=1.0):
        self.world = world
        self.regularizer = regularizer
        self.sigma0 = sigma0
        self.exploration_scale = exploration_scale
        self.failure = failure if failure is not None else 1.0 / (8.0 * horizon)
        d = world.item_dim
        self.dim = d
        self._m = world.num_clusters
        self._L = world.num_servers
        self.bounds = SpectralBounds.without_privacy(regularizer)
        self.stats = {i: SufficientStatistics.zero(d) for i in range(world.num_users)}
        self._inv = {}
        self._theta = {}
        self.partition_correct = world.num_clusters == world.num_users
        self.num_clusters = world.num_users

    def begin_round(self, t):
        pass

    def _cached(self, user):
        if user not in self._inv:
            stats = self.stats[user]
            gram = stats.gram + self.regularizer * np.eye(self.dim)
            inv = np.linalg.inv(gram)
            self._inv[user] = inv
            self._theta[user] = inv @ stats.moment
        return self._inv[user], self._theta[user]

    def choose(self, user, items):
        inv, theta = self._cached(user)
        beta = self.exploration_scale * confidence_width(
            self.stats[user].count, 1, self.bounds, self.sigma0,
            self.failure, self._m, self._L, self.dim,
        )
        return int(np.argmax(score_items(items, inv, theta, beta)))

    def feedback(self, user, x, y):
        self.stats[user].add_observation(x, y)
        self._inv.pop(user, None)
        self._theta.pop(user, None)


class _ClubServer:
    """Per-server state for the classic per-round edge-deletion algorithm."""

    def __init__(self, users, dim):
        self.users = sorted(users)
        self.dim = dim
        self.graph = nx.Graph()
        self.graph.add_nodes_from(self.users)
        self.graph.add_edges_from(itertools.combinations(self.users, 2))
        self.component_of = {}
        self.aggregates = []
        self._inv = {}
        self._theta = {}
        self.rebuild()

    def rebuild(self):
        self.aggregates = []
        self.component_of = {}
        self._inv.clear()
        self._theta.clear()
        for comp in nx.connected_components(self.graph):
            cid = len(self.aggregates)
            self.aggregates.append(sorted(comp))
            for u in comp:
                self.component_of[u] = cid


class CLUBPolicy:
    """Graph-based clustering of users within each server, no cross-server sharing.

    Edges incident to the arriving user are re-checked every round, which is
    the classic schedule; recommendations use the arriving user's connected
    component aggregated with the ridge prior.
    """

    comm_count = 0

    def __init__(self, world, horizon, alpha1=1.0, regularizer=1.0, sigma0=0.1,
                 failure=None, exploration_scale=1.0):
        self.world = world
        self.alpha1 = alpha1
        self.regularizer = regularizer
        self.sigma0 = sigma0
        self.exploration_scale = exploration_scale
        self.failure = failure if failure is not None else 1.0 / (8.0 * horizon)
        d = world.item_dim
        self.dim = d
        self._m = world.num_clusters
        self._L = world.num_servers
        self.bounds = SpectralBounds.without_privacy(regularizer)
        self.stats = {i: SufficientStatistics.zero(d) for i in range(world.num_users)}
        self.servers = [
            _ClubServer([int(u) for u in roster], d) for roster in world.server_rosters()
        ]
        self._server_of = {i: int(world.assignment[i]) for i in range(world.num_users)}
        self._true_partition = world.true_user_partition()

    def begin_round(self, t):
        pass

    def _component_scores(self, server, cid):
        cached = server._inv.get(cid)
        if cached is None:
            total = SufficientStatistics.zero(self.dim)
            for u in server.aggregates[cid]:
                total.add(self.stats[u])
            gram = total.gram + self.regularizer * np.eye(self.dim)
            inv = np.linalg.inv(gram)
            server._inv[cid] = inv
            server._theta[cid] = inv @ total.moment
            cached = inv
        return cached, server._theta[cid]

    def _component_count(self, server, cid):
        return sum(self.stats[u].count for u in server.aggregates[cid])

    def choose(self, user, items):
        server = self.servers[self._server_of[user]]
        cid = server.component_of[user]
        inv, theta = self._component_scores(server, cid)
        beta = self.exploration_scale * confidence_width(
            self._component_count(server, cid), 1, self.bounds, self.sigma0,
            self.failure, self._m, self._L, self.dim,
        )
        return int(np.argmax(score_items(items, inv, theta, beta)))

    def _estimate(self, user):
        stats = self.stats[user]
        gram = stats.gram + self.regularizer * np.eye(self.dim)
        return np.linalg.solve(gram, stats.moment)

    def feedback(self, user, x, y):
        self.stats[user].add_observation(x, y)
        server = self.servers[self._server_of[user]]
        server._inv.pop(server.component_of[user], None)
        theta_u = self._estimate(user)
        width_u = confidence_decay(self.stats[user].count)
        doomed = []
        for v in server.graph.neighbors(user):
            gap = np.linalg.norm(theta_u - self._estimate(v))
            if gap > self.alpha1 * (width_u + confidence_decay(self.stats[v].count)):
                doomed.append((user, v))
        if doomed:
            server.graph.remove_edges_from(doomed)
            server.rebuild()

    def user_partition(self):
        return {
            frozenset(comp)
            for server in self.servers
            for comp in (set(a) for a in server.aggregates)
        }

    @property
    def num_clusters(self):
        return sum(len(server.aggregates) for server in self.servers)

    @property
    def partition_correct(self):
        return self.user_partition() == self._true_partition


class FullSyncOracle:
    """Reference policy with instantaneous, plumbing-free sharing.

    Re-derives the phase-based partition with the same edge-deletion and
    merge rules as the federation pipeline, but recommends straight from the
    pooled per-group statistics recomputed from raw user histories, with no
    buffers, uploads, or downloads.  Used to validate the buffered protocol.
    """

    comm_count = 0

    def __init__(self, world, horizon, *, alpha1=1.0, alpha2=1.0, regularizer=1.0,
                 sigma0=0.1, failure=None, exploration_scale=1.0):
        self.world = world
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.regularizer = regularizer
        self.sigma0 = sigma0
        self.exploration_scale = exploration_scale
        self.failure = failure if failure is not None else 1.0 / (8.0 * horizon)
        d = world.item_dim
        self.dim = d
        self._m = world.num_clusters
        self._L = world.num_servers
        self.bounds = SpectralBounds.without_privacy(regularizer)
        self.stats = {i: SufficientStatistics.zero(d) for i in range(world.num_users)}
        self.graphs = []
        for roster in world.server_rosters():
            g = nx.Graph()
            users = [int(u) for u in roster]
            g.add_nodes_from(users)
            g.add_edges_from(itertools.combinations(users, 2))
            self.graphs.append(g)
        self._server_of = {i: int(world.assignment[i]) for i in range(world.num_users)}
        self._true_partition = world.true_user_partition()
        self.groups = []
        self._group_of_user = {}
        self._phase = 0
        self._next_boundary = 1

    def begin_round(self, t):
        if t == self._next_boundary:
            self._phase += 1
            self._detect()
            self._next_boundary = 2 ** (self._phase + 1) - 1

    def _detect(self):
        eye = np.eye(self.dim)
        for g in self.graphs:
            theta = {}
            width = {}
            for u in g.nodes:
                stats = self.stats[u]
                theta[u] = np.linalg.solve(stats.gram + self.regularizer * eye, stats.moment)
                width[u] = confidence_decay(stats.count)
            doomed = [
                (a, b) for a, b in g.edges
                if np.linalg.norm(theta[a] - theta[b]) > self.alpha1 * (width[a] + width[b])
            ]
            g.remove_edges_from(doomed)
        uploads = {}
        rosters = {}
        for sid, g in enumerate(self.graphs):
            pkgs = {}
            for cid, comp in enumerate(sorted(nx.connected_components(g), key=min)):
                total = SufficientStatistics.zero(self.dim)
                for u in comp:
                    total.add(self.stats[u])
                pkgs[cid] = total
                rosters[sid, cid] = comp
            uploads[sid] = pkgs
        groups = merge_global(uploads, self.alpha2, floor=DET_FLOOR)
        self.groups = [
            frozenset(u for pair in group for u in rosters[pair]) for group in groups
        ]
        self._group_of_user = {
            u: gid for gid, members in enumerate(self.groups) for u in members
        }

    def _pooled(self, gid):
        total = SufficientStatistics.zero(self.dim)
        for u in self.groups[gid]:
            total.add(self.stats[u])
        return total

    def choose(self, user, items):
        gid = self._group_of_user[user]
        pooled = self._pooled(gid)
        inv = np.linalg.inv(pooled.gram + DET_FLOOR * np.eye(self.dim))
        theta = inv @ pooled.moment
        share = sum(
            1
            for sid, g in enumerate(self.graphs)
            for comp in nx.connected_components(g)
            if next(iter(comp)) in self.groups[gid]
        )
        beta = self.exploration_scale * confidence_width(
            pooled.count, share, self.bounds, self.sigma0,
            self.failure, self._m, self._L, self.dim,
        )
        return int(np.argmax(score_items(items, inv, theta, beta)))

    def feedback(self, user, x, y):
        self.stats[user].add_observation(x, y)

    def pooled_gram(self, user):
        """Fully synchronized gram of the user's group, with no floor."""
        return self._pooled(self._group_of_user[user]).gram

    @property
    def num_clusters(self):
        return len(self.groups)

    @property
    def partition_correct(self):
        return set(self.groups) == self._true_partition


def _policy_seed(seed):
    return int(np.random.SeedSequence(seed).spawn(4)[3].generate_state(1)[0])


def make_policy(name, world, horizon, *, up=1.01, down=1.01, alpha1=1.0, alpha2=1.0,
                regularizer=1.0, sigma0=0.1, failure=None, epsilon=1.0, delta=0.1,
                noise_scale=1.0, exploration_scale=1.0, seed=0):
    """Build the policy object for a named baseline."""
    BaselineSpec(name)  # validates the name
    common = dict(regularizer=regularizer, sigma0=sigma0, failure=failure,
                  exploration_scale=exploration_scale)
    if name == "linucb":
        return LinUCBPolicy(world, horizon, **common)
    if name == "club":
        return CLUBPolicy(world, horizon, alpha1=alpha1, **common)
    fed = dict(
        up=up, down=down, alpha1=alpha1, alpha2=alpha2, epsilon=epsilon,
        delta=delta, seed=_policy_seed(seed), **common,
    )
    if name == "homo":
        return FederationPolicy(world, horizon, clustering=False, instant=True, **fed)
    if name == "homo_dc":
        return FederationPolicy(world, horizon, clustering=False, instant=False, **fed)
    if name == "fclub":
        return FederationPolicy(world, horizon, clustering=True, instant=True, **fed)
    if name == "fclub_dc":
        return FederationPolicy(world, horizon, clustering=True, instant=False, **fed)
    return FederationPolicy(
        world, horizon, clustering=True, instant=False, private=True,
        noise_scale=noise_scale, **fed,
    )


def run_baseline(name, world, horizon, seed=0, *, num_items=10, clamp_rewards=False,
                 probe=None, **params):
    """Run one named baseline for `horizon` rounds and return its series."""
    policy = make_policy(name, world, horizon, seed=seed, **params)
    return simulate(
        world, policy, horizon, seed,
        num_items=num_items, clamp_rewards=clamp_rewards, probe=probe,
    )
