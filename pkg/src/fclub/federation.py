"""Phase-based federated clustering of linear bandits.

Local servers hold per-user ridge statistics and a similarity graph whose
connected components are the local clusters.  A global server merges local
clusters across servers into groups, and group members synchronize through
buffered uploads/downloads gated by determinant-ratio tests.  In private
mode every statistic leaving a local server is released through a tree-based
perturbation mechanism, with identity offsets large enough to keep the
shared grams positive definite.

The main loop proceeds in phases of doubling length: at the start of phase
s (round t = 2^s - 1) every server re-clusters its users by deleting edges,
packages per-cluster statistics, and the global server re-merges and, if the
partition changed, rebuilds all shared state from scratch.
"""

import itertools
import math
import time
from dataclasses import replace

import networkx as nx
import numpy as np

from .environment import instant_regret, sample_reward, sample_round
from .privacy import (
    Perturbation,
    PrivacyBudget,
    TreePrivatizer,
    ZeroPerturbationSource,
    operator_norm_bound,
    tree_depth,
)
from .stats import (
    SpectralBounds,
    SufficientStatistics,
    confidence_decay,
    confidence_width,
    score_items,
)

# Regularization floor used only inside determinant tests and inversions in
# non-private mode, where synced grams start singular.  It is never folded
# into stored state.
DET_FLOOR = 1e-6


def upload_budget(dim, horizon, up, down):
    """Cap on determinant-gated uploads one cluster can fire over a run."""
    if min(up, down) <= 1.0:
        raise ValueError("thresholds must exceed 1")
    if horizon < 2:
        return 1
    return math.ceil(dim * math.log(horizon) / math.log(min(up, down))) + 1


class ClusterState:
    """Sharing state of one local cluster on one server.

    synced mirrors the global cluster's statistics up to buffered deltas;
    buffer accumulates what has not been uploaded yet.  pert_next is the
    perturbation pending inside the buffer, pert_hist the reference it will
    be rotated against.  Inverse/log-determinant/estimate caches are
    invalidated whenever synced changes.
    """

    __slots__ = (
        "users",
        "synced",
        "buffer",
        "pert_hist",
        "pert_next",
        "privatizer",
        "_inv",
        "_logdet",
        "_theta",
    )

    def __init__(self, users, dim, privatizer):
        self.users = frozenset(users)
        self.synced = SufficientStatistics.zero(dim)
        self.buffer = SufficientStatistics.zero(dim)
        self.pert_hist = Perturbation.zero(dim)
        self.pert_next = Perturbation.zero(dim)
        self.privatizer = privatizer
        self.invalidate()

    def invalidate(self):
        self._inv = None
        self._logdet = None
        self._theta = None

    def _floored_gram(self, floor):
        if floor:
            return self.synced.gram + floor * np.eye(self.synced.dim)
        return self.synced.gram

    def inv_gram(self, floor):
        if self._inv is None:
            self._inv = np.linalg.inv(self._floored_gram(floor))
        return self._inv

    def estimate(self, floor):
        if self._theta is None:
            self._theta = self.inv_gram(floor) @ self.synced.moment
        return self._theta

    def logdet(self, floor):
        if self._logdet is None:
            sign, value = np.linalg.slogdet(self._floored_gram(floor))
            if sign <= 0:
                raise np.linalg.LinAlgError("synced gram is not positive definite")
            self._logdet = value
        return self._logdet


class LocalServer:
    """One server: per-user statistics plus the user similarity graph."""

    def __init__(self, server_id, users, dim, privatizer_factory):
        self.id = server_id
        self.users = sorted(users)
        self.dim = dim
        self.user_stats = {i: SufficientStatistics.zero(dim) for i in self.users}
        self.graph = nx.Graph()
        self.graph.add_nodes_from(self.users)
        self.graph.add_edges_from(itertools.combinations(self.users, 2))
        self._privatizer_factory = privatizer_factory
        self._next_cid = 0
        self.clusters = {}
        self.local_clusters = {}
        self._rebuild_clusters()

    def _rebuild_clusters(self):
        """Relabel connected components, keeping ids whose roster is unchanged."""
        by_roster = {state.users: cid for cid, state in self.clusters.items()}
        rebuilt = {}
        for component in nx.connected_components(self.graph):
            roster = frozenset(component)
            cid = by_roster.get(roster)
            if cid is None:
                cid = self._next_cid
                self._next_cid += 1
                rebuilt[cid] = ClusterState(
                    roster, self.dim, self._privatizer_factory(self.id, cid)
                )
            else:
                rebuilt[cid] = self.clusters[cid]
        self.clusters = rebuilt
        self.local_clusters = {
            u: cid for cid, state in rebuilt.items() for u in state.users
        }

    def delete_edges(self, alpha1, regularizer):
        """Drop edges between users whose ridge estimates drifted apart."""
        if self.graph.number_of_edges():
            theta = {}
            width = {}
            for u in self.users:
                stats = self.user_stats[u]
                gram = stats.gram + regularizer * np.eye(self.dim)
                theta[u] = np.linalg.solve(gram, stats.moment)
                width[u] = confidence_decay(stats.count)
            doomed = [
                (a, b)
                for a, b in self.graph.edges
                if np.linalg.norm(theta[a] - theta[b])
                > alpha1 * (width[a] + width[b])
            ]
            self.graph.remove_edges_from(doomed)
        self._rebuild_clusters()

    def build_phase_upload(self, rho):
        """Package (gram, moment, count) per local cluster for the global merge.

        Pops a fresh perturbation per cluster, folds its 2*rho*I + H offset
        into the gram, and records it as the new historical reference.
        Counts are exact in every mode.
        """
        packages = {}
        eye = np.eye(self.dim)
        for cid, state in self.clusters.items():
            pert = state.privatizer.next_perturbation()
            gram = 2.0 * rho * eye + pert.H
            moment = pert.h.copy()
            count = 0.0
            for u in state.users:
                stats = self.user_stats[u]
                gram = gram + stats.gram
                moment = moment + stats.moment
                count += stats.count
            state.pert_hist = pert
            packages[cid] = SufficientStatistics(gram, moment, count)
        return packages


class Partition:
    """Disjoint grouping of (server id, local cluster id) pairs."""

    def __init__(self, groups, version):
        self.groups = [frozenset(g) for g in groups]
        self.version = version
        self.group_of = {
            pair: gid for gid, group in enumerate(self.groups) for pair in group
        }
        overlap = sum(len(g) for g in self.groups) - len(self.group_of)
        if overlap:
            raise ValueError("partition groups overlap")


def merge_global(uploads, alpha2, floor=0.0):
    """Group local clusters whose released estimates sit close together.

    Only clusters on different servers are compared; same-server clusters
    can still end up in one group through a chain of cross-server links.
    Returns the groups as frozensets of (server id, cluster id) pairs.
    """
    meta = nx.Graph()
    nodes = [(sid, cid) for sid, pkgs in uploads.items() for cid in pkgs]
    meta.add_nodes_from(nodes)
    theta = {}
    width = {}
    for sid, pkgs in uploads.items():
        for cid, stats in pkgs.items():
            gram = stats.gram
            if floor:
                gram = gram + floor * np.eye(stats.dim)
            theta[sid, cid] = np.linalg.solve(gram, stats.moment)
            width[sid, cid] = confidence_decay(stats.count)
    for idx, a in enumerate(nodes):
        for b in nodes[idx + 1 :]:
            if a[0] == b[0]:
                continue
            if np.linalg.norm(theta[a] - theta[b]) < alpha2 * (width[a] + width[b]):
                meta.add_edge(a, b)
    return [frozenset(c) for c in nx.connected_components(meta)]


class GlobalServer:
    """Global statistics per group plus per-member download buffers."""

    def __init__(self, dim):
        self.dim = dim
        self.partition = Partition([], 0)
        self.global_stats = {}
        self.download_buffers = {}
        self._logdets = {}

    def invalidate(self, gid):
        self._logdets.pop(gid, None)

    def logdet(self, gid, floor):
        value = self._logdets.get(gid)
        if value is None:
            gram = self.global_stats[gid].gram
            if floor:
                gram = gram + floor * np.eye(self.dim)
            sign, value = np.linalg.slogdet(gram)
            if sign <= 0:
                raise np.linalg.LinAlgError("global gram is not positive definite")
            self._logdets[gid] = value
        return value


class FederationPolicy:
    """Federated clustered UCB with buffered, optionally private, sync.

    Flags select the ablations: clustering=False pools every user into one
    group, instant=True fires every upload/download check unconditionally
    (the fully synchronized variant), private=True routes all shared
    statistics through the tree-based release mechanism.

    exploration_scale multiplies the confidence width used by choose; 1.0 is
    the analysis width, smaller values give the tuned widths customary in
    bandit experiments.
    """

    def __init__(
        self,
        world,
        horizon,
        *,
        up=1.01,
        down=1.01,
        alpha1=1.0,
        alpha2=1.0,
        regularizer=1.0,
        sigma0=0.1,
        failure=None,
        epsilon=1.0,
        delta=0.1,
        private=False,
        clustering=True,
        instant=False,
        noise_scale=1.0,
        exploration_scale=1.0,
        charge_phase_uploads=None,
        seed=0,
    ):
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if exploration_scale <= 0:
            raise ValueError("exploration_scale must be positive")
        self.world = world
        self.horizon = horizon
        self.up = up
        self.down = down
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.regularizer = regularizer
        self.sigma0 = sigma0
        self.exploration_scale = exploration_scale
        self.failure = failure if failure is not None else 1.0 / (8.0 * horizon)
        self.private = private
        self.clustering = clustering
        self.instant = instant
        if charge_phase_uploads is None:
            charge_phase_uploads = clustering
        self.charge_phase_uploads = charge_phase_uploads

        d = world.item_dim
        self.dim = d
        self._m = world.num_clusters
        self._L = world.num_servers
        self._floor = 0.0 if private else DET_FLOOR
        self._log_up = math.log(up)
        self._log_down = math.log(down)

        if private:
            budget_pops = upload_budget(d, horizon, up, down)
            nu = tree_depth(budget_pops)
            self.rho = noise_scale * operator_norm_bound(
                epsilon, delta, nu, d, self._m, self._L, self.failure
            )
            budget = PrivacyBudget(epsilon, delta, budget_pops)
            self.bounds = SpectralBounds.for_release(self.rho, d, horizon, up, down)

            def factory(sid, cid):
                mixed = int(np.random.SeedSequence([seed, sid, cid]).generate_state(1)[0])
                return TreePrivatizer(budget, d, seed=mixed, scale=noise_scale)

        else:
            self.rho = 0.0
            self.bounds = SpectralBounds.without_privacy(regularizer)

            def factory(sid, cid):
                return ZeroPerturbationSource(d)

        self.servers = {
            sid: LocalServer(sid, [int(u) for u in roster], d, factory)
            for sid, roster in enumerate(world.server_rosters())
        }
        self.hub = GlobalServer(d)
        self._server_of = {i: int(world.assignment[i]) for i in range(world.num_users)}
        self._true_partition = world.true_user_partition()
        self._partition_correct = False
        self._phase = 0
        self._next_boundary = 1
        self.comm_count = 0

    # -- phase machinery ---------------------------------------------------

    def begin_round(self, t):
        if t == self._next_boundary:
            self._phase += 1
            self._run_detection()
            self._next_boundary = 2 ** (self._phase + 1) - 1

    def _run_detection(self):
        if self.clustering:
            for server in self.servers.values():
                server.delete_edges(self.alpha1, self.regularizer)
        uploads = {
            sid: server.build_phase_upload(self.rho)
            for sid, server in self.servers.items()
        }
        if self.charge_phase_uploads:
            self.comm_count += sum(len(pkgs) for pkgs in uploads.values())
        if self.clustering:
            groups = merge_global(uploads, self.alpha2, floor=self._floor)
        else:
            groups = [
                frozenset(
                    (sid, cid) for sid, pkgs in uploads.items() for cid in pkgs
                )
            ]
        changed = set(groups) != set(self.hub.partition.groups)
        if changed:
            self.hub.partition = Partition(groups, self._phase)
            self._renew(uploads)
        self._partition_correct = self.user_partition() == self._true_partition

    def _renew(self, uploads):
        """Rebuild all shared state from the current phase uploads."""
        hub = self.hub
        hub.global_stats = {}
        hub.download_buffers = {}
        hub._logdets = {}
        eye = np.eye(self.dim)
        for gid, group in enumerate(hub.partition.groups):
            total = SufficientStatistics.zero(self.dim)
            for sid, cid in group:
                total.add(uploads[sid][cid])
            hub.global_stats[gid] = total
            for sid, cid in group:
                state = self.servers[sid].clusters[cid]
                state.synced = total.copy()
                state.invalidate()
                fresh = state.privatizer.next_perturbation()
                state.buffer = SufficientStatistics(
                    3.0 * self.rho * eye + fresh.H - state.pert_hist.H,
                    fresh.h - state.pert_hist.h,
                    0.0,
                )
                state.pert_hist = fresh
                state.pert_next = fresh
                hub.download_buffers[sid, cid] = SufficientStatistics.zero(self.dim)

    # -- per-round operations ----------------------------------------------

    def _locate(self, user):
        sid = self._server_of[user]
        server = self.servers[sid]
        cid = server.local_clusters[user]
        return sid, server, cid

    def choose(self, user, items):
        sid, server, cid = self._locate(user)
        state = server.clusters[cid]
        gid = self.hub.partition.group_of[sid, cid]
        share = len(self.hub.partition.groups[gid])
        bounds = self.bounds
        if self.private:
            kappa = float(np.linalg.norm(state.pert_hist.h)) / math.sqrt(self.rho)
            bounds = replace(bounds, kappa=kappa)
        beta = self.exploration_scale * confidence_width(
            state.synced.count,
            share,
            bounds,
            self.sigma0,
            self.failure,
            self._m,
            self._L,
            self.dim,
        )
        scores = score_items(
            items, state.inv_gram(self._floor), state.estimate(self._floor), beta
        )
        return int(np.argmax(scores))

    def feedback(self, user, x, y):
        sid, server, cid = self._locate(user)
        server.user_stats[user].add_observation(x, y)
        server.clusters[cid].buffer.add_observation(x, y)
        self._check_upload(sid, cid)

    def _check_upload(self, sid, cid):
        state = self.servers[sid].clusters[cid]
        if self.instant:
            fire = state.buffer.count > 0
        else:
            trial = state.synced.gram + state.buffer.gram
            if self._floor:
                trial = trial + self._floor * np.eye(self.dim)
            sign, trial_logdet = np.linalg.slogdet(trial)
            fire = sign > 0 and trial_logdet - state.logdet(self._floor) >= self._log_up
        if not fire:
            return
        hub = self.hub
        gid = hub.partition.group_of[sid, cid]
        delta = state.buffer
        hub.global_stats[gid].add(delta)
        hub.invalidate(gid)
        for pair in hub.partition.groups[gid]:
            if pair != (sid, cid):
                hub.download_buffers[pair].add(delta)
        state.synced.add(delta)
        state.invalidate()
        state.pert_hist = state.pert_next
        fresh = state.privatizer.next_perturbation()
        state.pert_next = fresh
        state.buffer = SufficientStatistics(
            3.0 * self.rho * np.eye(self.dim) + fresh.H - state.pert_hist.H,
            fresh.h - state.pert_hist.h,
            0.0,
        )
        self.comm_count += 1
        self._check_downloads(gid)

    def _check_downloads(self, gid):
        hub = self.hub
        for sid, cid in hub.partition.groups[gid]:
            pending = hub.download_buffers[sid, cid]
            state = self.servers[sid].clusters[cid]
            if self.instant:
                fire = pending.count > 0
            else:
                fire = (
                    hub.logdet(gid, self._floor) - state.logdet(self._floor)
                    >= self._log_down
                )
            if not fire:
                continue
            state.synced.add(pending)
            state.invalidate()
            pending.reset()
            self.comm_count += 1

    # -- reporting -----------------------------------------------------------

    def user_partition(self):
        """Current grouping of users implied by the global partition."""
        return {
            frozenset(
                u
                for sid, cid in group
                for u in self.servers[sid].clusters[cid].users
            )
            for group in self.hub.partition.groups
        }

    @property
    def num_clusters(self):
        return len(self.hub.partition.groups)

    @property
    def partition_correct(self):
        return self._partition_correct


class RunResult:
    """Per-round series collected from one simulation run."""

    def __init__(self, instant_regret, comm, num_clusters, partition_correct,
                 picks, seconds):
        self.instant_regret = instant_regret
        self.comm = comm
        self.num_clusters = num_clusters
        self.partition_correct = partition_correct
        self.picks = picks
        self.seconds = seconds

    @property
    def rounds(self):
        return len(self.instant_regret)

    @property
    def cumulative_regret(self):
        return np.cumsum(self.instant_regret)


def simulate(world, policy, horizon, seed, num_items=10, clamp_rewards=False, probe=None):
    """Drive a policy for `horizon` rounds under common random numbers.

    Streams 0/1/2 spawned from the seed feed arrivals, item sets, and reward
    noise respectively, so different policies on the same seed face the
    identical environment; policy-internal randomness must come from
    elsewhere.  `probe`, if given, is called as probe(policy, t) at the end
    of every round.
    """
    lanes = np.random.SeedSequence(seed).spawn(3)
    arrival_rng = np.random.default_rng(lanes[0])
    item_rng = np.random.default_rng(lanes[1])
    noise_rng = np.random.default_rng(lanes[2])

    regret = np.zeros(horizon)
    comm = np.zeros(horizon, dtype=np.int64)
    clusters = np.zeros(horizon, dtype=np.int64)
    correct = np.zeros(horizon, dtype=bool)
    picks = np.zeros(horizon, dtype=np.int64)

    start = time.perf_counter()
    for t in range(1, horizon + 1):
        policy.begin_round(t)
        rnd = sample_round(world, t, num_items, arrival_rng, item_rng)
        pick = policy.choose(rnd.user, rnd.items)
        x = rnd.items[pick]
        y = sample_reward(world, rnd.user, x, noise_rng, clamp=clamp_rewards)
        policy.feedback(rnd.user, x, y)
        idx = t - 1
        regret[idx] = instant_regret(world, rnd.user, rnd.items, pick)
        comm[idx] = policy.comm_count
        clusters[idx] = policy.num_clusters
        correct[idx] = policy.partition_correct
        picks[idx] = pick
        if probe is not None:
            probe(policy, t)
    seconds = time.perf_counter() - start
    return RunResult(regret, comm, clusters, correct, picks, seconds)


def run_fclub_cdp(world, horizon, seed=0, num_items=10, probe=None, **params):
    """Run the full private federated policy and return its round series."""
    policy = FederationPolicy(
        world, horizon, private=True, clustering=True, instant=False,
        seed=seed, **params,
    )
    return simulate(world, policy, horizon, seed, num_items=num_items, probe=probe)
