import math

import numpy as np
import pytest

from fclub.cli import main
from fclub.harness import (
    ConfigError,
    ExperimentConfig,
    TraceRow,
    communication_bound,
    detection_horizon,
    emit_csv,
    load_config,
    parse_seeds,
    parse_trace,
    run_experiment,
    trace_checkpoints,
)

SMALL_CFG = """\
[world]
n = 4
m = 2
L = 2
d = 3
gamma = 1.0
sigma0 = 0.1

[algorithm]
T = 64
K = 4
U = 1.05
D = 1.05
alpha1 = 0.5
alpha2 = 0.5

[run]
seeds = 0..1
baselines = linucb fclub_dc
out = results
"""


def write_cfg(tmp_path, text=SMALL_CFG):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


def test_parse_seeds():
    assert parse_seeds("0..3") == (0, 1, 2, 3)
    assert parse_seeds("7..7") == (7,)
    assert parse_seeds("3, 5 11") == (3, 5, 11)
    with pytest.raises(ConfigError):
        parse_seeds("5..2")
    with pytest.raises(ConfigError):
        parse_seeds("a..b")
    with pytest.raises(ConfigError):
        parse_seeds("1 two 3")


def test_failure_and_item_floor_defaults():
    config = ExperimentConfig(T=1000)
    assert config.failure == pytest.approx(1.0 / 8000.0)
    assert config.item_floor == pytest.approx(1.0 / config.d)
    pinned = ExperimentConfig(alpha=0.05, lambda_x=0.2)
    assert pinned.failure == 0.05
    assert pinned.item_floor == 0.2


@pytest.mark.parametrize(
    "bad",
    [
        dict(T=0),
        dict(K=0),
        dict(U=1.0),
        dict(D=0.5),
        dict(delta=0.0),
        dict(delta=1.0),
        dict(epsilon=0.0),
        dict(n=0),
        dict(L=0),
        dict(alpha=-0.1),
        dict(lambda_x=-1.0),
        dict(noise_scale=0.0),
        dict(exploration_scale=0.0),
        dict(seeds=()),
        dict(baselines=("bogus",)),
    ],
)
def test_validation_rejects_bad_fields(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_load_config_parses_types(tmp_path):
    config = load_config(write_cfg(tmp_path))
    assert config.n == 4 and isinstance(config.n, int)
    assert config.gamma == 1.0 and isinstance(config.gamma, float)
    assert config.U == 1.05
    assert config.seeds == (0, 1)
    assert config.baselines == ("linucb", "fclub_dc")
    assert config.out == "results"


def test_load_config_is_case_sensitive(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("[world]\nl = 2\n")
    with pytest.raises(ConfigError, match="unknown key 'l'"):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_overrides_win_over_file(tmp_path):
    path = write_cfg(tmp_path)
    config = load_config(
        path,
        {"T": "32", "seeds": "5", "baselines": ("linucb",), "clamp_rewards": "yes"},
    )
    assert config.T == 32
    assert config.seeds == (5,)
    assert config.baselines == ("linucb",)
    assert config.clamp_rewards is True
    # None overrides are skipped, not applied
    assert load_config(path, {"T": None}).T == 64


def test_bad_override_value(tmp_path):
    with pytest.raises(ConfigError, match="bad value for T"):
        load_config(write_cfg(tmp_path), {"T": "ten"})
    with pytest.raises(ConfigError, match="bad value for clamp_rewards"):
        load_config(write_cfg(tmp_path), {"clamp_rewards": "maybe"})


def test_trace_checkpoints():
    dense = trace_checkpoints(10, dense=True)
    np.testing.assert_array_equal(dense, np.arange(1, 11))

    sparse = trace_checkpoints(100_000)
    assert sparse[0] == 1
    assert sparse[-1] == 100_000
    assert len(sparse) <= 201
    assert np.all(np.diff(sparse) > 0)

    tiny = trace_checkpoints(8)
    assert tiny[0] == 1 and tiny[-1] == 8


def test_csv_roundtrip(tmp_path):
    rows = [
        TraceRow(1, "fclub_cdp", 0, 0.1 + 0.2, 1e-17, 0, 1, False),
        TraceRow(97, "fclub_cdp", 3, math.pi, 12345.6789, 42, 3, True),
    ]
    path = tmp_path / "trace.csv"
    emit_csv(rows, path)
    assert parse_trace(path) == rows  # bit-exact floats via repr


def test_parse_trace_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("round,who\n1,x\n")
    with pytest.raises(ValueError, match="unexpected trace header"):
        parse_trace(path)


def small_config(tmp_path, **kw):
    base = dict(
        n=4, m=2, L=2, d=3, gamma=1.0, sigma0=0.1,
        T=64, K=4, U=1.05, D=1.05, alpha1=0.5, alpha2=0.5,
        seeds=(0, 1), baselines=("linucb", "fclub_dc"),
        out=str(tmp_path / "results"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_writes_traces_and_summary(tmp_path):
    config = small_config(tmp_path)
    summary = run_experiment(config)
    out = tmp_path / "results"

    checkpoints = trace_checkpoints(config.T)
    assert len(summary) == len(config.baselines) * len(checkpoints)
    assert (out / "summary.csv").exists()

    finals = {}
    for name in config.baselines:
        per_seed = []
        for seed in config.seeds:
            trace = parse_trace(out / f"{name}_seed{seed}.csv")
            assert [row.t for row in trace] == list(checkpoints)
            cum = [row.cumulative_regret for row in trace]
            assert all(b >= a - 1e-12 for a, b in zip(cum, cum[1:]))
            comm = [row.comm_count_cumulative for row in trace]
            assert all(b >= a for a, b in zip(comm, comm[1:]))
            per_seed.append(cum[-1])
        finals[name] = np.mean(per_seed)

    for rec in summary:
        if rec["t"] == config.T:
            assert rec["regret_mean"] == pytest.approx(finals[rec["policy"]], rel=1e-12)


def test_run_experiment_outputs_are_deterministic(tmp_path):
    a = small_config(tmp_path, out=str(tmp_path / "a"), baselines=("fclub_dc",))
    b = small_config(tmp_path, out=str(tmp_path / "b"), baselines=("fclub_dc",))
    sum_a = run_experiment(a)
    sum_b = run_experiment(b)
    for seed in a.seeds:
        name = f"fclub_dc_seed{seed}.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # summaries agree except for the wall-clock column
    for ra, rb in zip(sum_a, sum_b):
        for key in ("policy", "t", "regret_mean", "regret_std", "comm_mean", "comm_std"):
            assert ra[key] == rb[key]


def test_detection_horizon_scalings():
    base = ExperimentConfig()
    wide = detection_horizon(base)
    sharp = detection_horizon(ExperimentConfig(gamma=2 * base.gamma))
    # the first four terms carry 1/gamma^2; the sampling term does not
    for key in ("A", "C", "D"):
        assert wide[key] / sharp[key] == pytest.approx(4.0)
    assert wide["B"] / sharp["B"] >= 4.0
    assert wide["E"] == sharp["E"]

    private = detection_horizon(ExperimentConfig(epsilon=2.0))
    for key in ("C", "D"):
        assert wide[key] / private[key] == pytest.approx(2.0)
    for key in ("A", "B", "E"):
        assert wide[key] == private[key]

    assert wide["rounds"] == pytest.approx(
        2 * (16 * base.n * math.log(base.T / base.failure) + 4 * base.n * wide["per_user"])
    )


def test_communication_bound_properties():
    short = communication_bound(ExperimentConfig(T=10_000))
    long = communication_bound(ExperimentConfig(T=100_000))
    assert 0 < short < long
    # wider determinant gates mean fewer uploads
    loose = communication_bound(ExperimentConfig(U=1.1, D=1.1))
    assert loose < long


def test_cli_missing_config_exits_2(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.cfg")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_bad_baseline_exits_2(tmp_path, capsys):
    rc = main(
        ["simulate", "--config", str(write_cfg(tmp_path)), "--baseline", "bogus"]
    )
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_simulate_smoke(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(
        [
            "simulate", "--config", str(write_cfg(tmp_path)),
            "--baseline", "linucb", "--seeds", "0", "--T", "48",
            "--out", str(out),
        ]
    )
    assert rc == 0
    assert (out / "summary.csv").exists()
    assert (out / "linucb_seed0.csv").exists()
    captured = capsys.readouterr().out
    assert "wrote traces and summary.csv" in captured


def test_cli_horizon_smoke(tmp_path, capsys):
    rc = main(["horizon", "--config", str(write_cfg(tmp_path))])
    assert rc == 0
    captured = capsys.readouterr().out
    assert "detection horizon (2*T0):" in captured
    assert "communication bound:" in captured
    assert "tree depth nu:" in captured
