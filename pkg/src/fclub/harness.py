"""Experiment configuration, orchestration, and trace/CSV plumbing.

A config file is INI-style with [world], [algorithm], and [run] sections;
the CLI can override any field.  Each (baseline, seed) pair produces one
trace CSV with rows at logarithmically spaced checkpoint rounds, and a
summary CSV aggregates mean/std of cumulative regret and communication
across seeds per baseline.
"""

import configparser
import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .baselines import BaselineSpec, run_baseline
from .environment import generate_world, load_ratings_dataset
from .federation import upload_budget
from .privacy import operator_norm_bound, tree_depth
from .stats import SpectralBounds


class ConfigError(ValueError):
    """Invalid experiment configuration; the CLI maps this to exit code 2."""


@dataclass
class ExperimentConfig:
    # world
    n: int = 40
    m: int = 4
    L: int = 5
    d: int = 10
    gamma: float = math.sqrt(2.0)
    sigma0: float = 0.1
    ratings: str = ""
    # algorithm
    T: int = 100_000
    K: int = 10
    U: float = 1.01
    D: float = 1.01
    alpha1: float = 1.0
    alpha2: float = 1.0
    regularizer: float = 1.0
    epsilon: float = 1.0
    delta: float = 0.1
    alpha: float = 0.0  # 0 means the default 1/(8T)
    lambda_x: float = 0.0  # 0 means the sphere default 1/d
    noise_scale: float = 1.0
    exploration_scale: float = 1.0
    clamp_rewards: bool = False
    # run
    seeds: tuple = (0,)
    baselines: tuple = ("fclub_cdp",)
    out: str = "results"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.U <= 1 or self.D <= 1:
            raise ConfigError("U and D must exceed 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if min(self.n, self.m, self.L, self.d) < 1:
            raise ConfigError("world sizes must be positive")
        if self.alpha < 0 or self.lambda_x < 0:
            raise ConfigError("alpha and lambda_x must be nonnegative")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be positive")
        if self.exploration_scale <= 0:
            raise ConfigError("exploration_scale must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for name in self.baselines:
            try:
                BaselineSpec(name)  # NotImplementedError for reserved names
            except ValueError as err:
                raise ConfigError(str(err)) from err

    @property
    def failure(self):
        """Failure probability, defaulting to 1/(8T)."""
        return self.alpha if self.alpha > 0 else 1.0 / (8.0 * self.T)

    @property
    def item_floor(self):
        """Smallest-eigenvalue estimate of the item second moment."""
        return self.lambda_x if self.lambda_x > 0 else 1.0 / self.d


_SECTIONS = {
    "world": ("n", "m", "L", "d", "gamma", "sigma0", "ratings"),
    "algorithm": (
        "T", "K", "U", "D", "alpha1", "alpha2", "regularizer", "epsilon",
        "delta", "alpha", "lambda_x", "noise_scale", "exploration_scale",
        "clamp_rewards",
    ),
    "run": ("seeds", "baselines", "out"),
}


def parse_seeds(text):
    """Parse '0..9' or a comma/space separated list of ints."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo, hi = int(lo), int(hi)
        except ValueError as err:
            raise ConfigError(f"bad seed range {text!r}") from err
        if hi < lo:
            raise ConfigError(f"empty seed range {text!r}")
        return tuple(range(lo, hi + 1))
    parts = text.replace(",", " ").split()
    try:
        return tuple(int(p) for p in parts)
    except ValueError as err:
        raise ConfigError(f"bad seed list {text!r}") from err


def _coerce(name, raw):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    kind = getattr(kind, "__name__", kind)
    raw = raw.strip()
    try:
        if name == "seeds":
            return parse_seeds(raw)
        if name == "baselines":
            return tuple(raw.replace(",", " ").split())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"bad value for {name}: {raw!r}") from err


def load_config(path, overrides=None):
    """Read an INI config file and apply CLI overrides on top."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys like L and T are case-sensitive
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in parser[section]:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _coerce(key, parser[section][key])
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    try:
        return ExperimentConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from err


def build_world(config, seed):
    """World for one run; the same seed gives every baseline the same world."""
    if config.ratings:
        return load_ratings_dataset(
            config.ratings, d=config.d, n_select=config.n, seed=seed,
            L=config.L, sigma0=config.sigma0,
        )
    return generate_world(
        n=config.n, m=config.m, L=config.L, d=config.d,
        gamma=config.gamma, sigma0=config.sigma0, seed=seed,
    )


def policy_params(config):
    """Keyword arguments for run_baseline derived from the config."""
    return dict(
        up=config.U, down=config.D, alpha1=config.alpha1, alpha2=config.alpha2,
        regularizer=config.regularizer, sigma0=config.sigma0,
        failure=config.failure, epsilon=config.epsilon, delta=config.delta,
        noise_scale=config.noise_scale,
        exploration_scale=config.exploration_scale,
    )


# -- traces --------------------------------------------------------------------


@dataclass
class TraceRow:
    t: int
    policy: str
    seed: int
    instant_regret: float
    cumulative_regret: float
    comm_count_cumulative: int
    num_global_clusters: int
    partition_correct: bool


TRACE_HEADER = [f.name for f in fields(TraceRow)]


def trace_checkpoints(horizon, dense=False):
    """Round indices to record: 200 log-spaced plus the final round."""
    if dense:
        return np.arange(1, horizon + 1)
    grid = np.unique(np.geomspace(1, horizon, 200).round().astype(int))
    return np.union1d(grid, [horizon])


def make_trace(result, policy, seed, checkpoints):
    cumulative = result.cumulative_regret
    rows = []
    for t in checkpoints:
        idx = int(t) - 1
        rows.append(
            TraceRow(
                t=int(t),
                policy=policy,
                seed=int(seed),
                instant_regret=float(result.instant_regret[idx]),
                cumulative_regret=float(cumulative[idx]),
                comm_count_cumulative=int(result.comm[idx]),
                num_global_clusters=int(result.num_clusters[idx]),
                partition_correct=bool(result.partition_correct[idx]),
            )
        )
    return rows


def emit_csv(trace, path):
    """Write trace rows with round-trip-safe floats, UTF-8, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow(
                [
                    row.t,
                    row.policy,
                    row.seed,
                    repr(row.instant_regret),
                    repr(row.cumulative_regret),
                    row.comm_count_cumulative,
                    row.num_global_clusters,
                    int(row.partition_correct),
                ]
            )


def parse_trace(path):
    """Inverse of emit_csv."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header in {path}: {header}")
        for rec in reader:
            rows.append(
                TraceRow(
                    t=int(rec[0]),
                    policy=rec[1],
                    seed=int(rec[2]),
                    instant_regret=float(rec[3]),
                    cumulative_regret=float(rec[4]),
                    comm_count_cumulative=int(rec[5]),
                    num_global_clusters=int(rec[6]),
                    partition_correct=bool(int(rec[7])),
                )
            )
    return rows


# -- experiment driver -----------------------------------------------------------


SUMMARY_HEADER = [
    "policy", "t", "regret_mean", "regret_std", "comm_mean", "comm_std",
    "ms_per_round",
]


def run_experiment(config, dense=False, log=None):
    """Run every (baseline, seed) pair, write traces and the summary CSV.

    Returns the list of summary records.  Standard deviations are population
    (ddof=0) across seeds; means are exact arithmetic means.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoints = trace_checkpoints(config.T, dense)
    idx = checkpoints.astype(int) - 1
    params = policy_params(config)
    say = log if log is not None else (lambda msg: None)
    summary = []
    for name in config.baselines:
        regrets = []
        comms = []
        ms = []
        for seed in config.seeds:
            world = build_world(config, seed)
            result = run_baseline(
                name, world, config.T, seed,
                num_items=config.K, clamp_rewards=config.clamp_rewards, **params,
            )
            trace = make_trace(result, name, seed, checkpoints)
            emit_csv(trace, out / f"{name}_seed{seed}.csv")
            regrets.append(result.cumulative_regret[idx])
            comms.append(result.comm[idx])
            ms.append(1000.0 * result.seconds / config.T)
            correct = result.partition_correct
            first = int(np.argmax(correct)) + 1 if correct.any() else None
            say(
                f"{name} seed {seed}: regret {result.cumulative_regret[-1]:.1f} "
                f"comm {int(result.comm[-1])} "
                f"first correct partition at t={first} "
                f"({1000.0 * result.seconds / config.T:.3f} ms/round)"
            )
        regrets = np.array(regrets)
        comms = np.array(comms)
        avg_ms = float(np.mean(ms))
        for j, t in enumerate(checkpoints):
            summary.append(
                {
                    "policy": name,
                    "t": int(t),
                    "regret_mean": float(regrets[:, j].mean()),
                    "regret_std": float(regrets[:, j].std()),
                    "comm_mean": float(comms[:, j].mean()),
                    "comm_std": float(comms[:, j].std()),
                    "ms_per_round": avg_ms,
                }
            )
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for rec in summary:
            writer.writerow(
                [
                    rec["policy"],
                    rec["t"],
                    repr(rec["regret_mean"]),
                    repr(rec["regret_std"]),
                    repr(rec["comm_mean"]),
                    repr(rec["comm_std"]),
                    repr(rec["ms_per_round"]),
                ]
            )
    return summary


# -- closed-form diagnostics ------------------------------------------------------


def detection_horizon(config):
    """Closed-form round count after which clusters are correct w.h.p.

    Returns a dict with each term of the max, the per-user threshold, the
    total T0, and the final bound 2*T0.
    """
    lam_x = config.item_floor
    gamma2 = config.gamma**2
    alpha = config.failure
    nu = tree_depth(upload_budget(config.d, config.T, config.U, config.D))
    sig = (96.0 * config.sigma0) ** 2
    a = sig * math.log(2.0 / alpha) / (lam_x * gamma2)
    b = sig * config.d / (lam_x * gamma2) * math.log(
        4608.0 * config.sigma0**2 / (lam_x * gamma2)
    )
    c = (
        192.0**2 * 6.0 * math.sqrt(2.0) * nu * math.log(4.0 / config.delta)
        * math.sqrt(config.d) / (config.epsilon * lam_x * gamma2)
    )
    dd = (
        192.0**2 * 3.0 * math.sqrt(2.0) * nu * math.log(4.0 / config.delta)
        * math.log(2.0 * config.m * config.L / alpha)
        / (config.epsilon * lam_x * gamma2)
    )
    e = 1024.0 / lam_x**2 * math.log(512.0 * config.n * config.d / (lam_x**2 * alpha))
    per_user = max(a, b, c, dd, e)
    t0 = 16.0 * config.n * math.log(config.T / alpha) + 4.0 * config.n * per_user
    return {
        "A": a, "B": b, "C": c, "D": dd, "E": e,
        "nu": nu, "per_user": per_user, "T0": t0, "rounds": 2.0 * t0,
    }


def communication_bound(config):
    """Closed-form cap on total communication events for the private policy.

    Counts one event per phase per (server, cluster) plus determinant-gated
    transfers whose number is bounded through the spectral envelope; the
    detection horizon 2*T0 bounds the phases during which partitions still
    churn.
    """
    nu = tree_depth(upload_budget(config.d, config.T, config.U, config.D))
    rho = config.noise_scale * operator_norm_bound(
        config.epsilon, config.delta, nu, config.d, config.m, config.L,
        config.failure,
    )
    bounds = SpectralBounds.for_release(rho, config.d, config.T, config.U, config.D)
    log_gate = math.log(min(config.U, config.D))
    ratio = bounds.rho_max / bounds.rho_min
    t0 = detection_horizon(config)["rounds"]
    steady = config.d * math.log(ratio + config.T / (config.d * bounds.rho_min)) / log_gate
    churn = (
        config.d * math.log(ratio + t0 / (config.d * bounds.rho_min))
        * math.log2(max(t0, 2.0)) / log_gate
    )
    return config.m * config.L * (math.log2(config.T) + steady + churn)
