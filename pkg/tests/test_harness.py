"""Experiment harness: configs, CSV and checkpoint formats, runs, CLI.

Reruns of the same config must produce byte-identical outputs, so several
tests compare whole files, and checkpoint loading is asserted bit-exact.
"""

import json

import numpy as np
import pytest

from asnet import cli, harness
from asnet.environments import Env, GhostRunConfig, MazeConfig
from asnet.errors import CheckpointError, ConfigError, InvariantError
from asnet.harness import (
    EvalSummary,
    ExperimentConfig,
    MetricsRow,
    aggregate_and_emit,
    evaluate_checkpoint,
    fmt_float,
    load_checkpoint,
    load_run_rows,
    read_metrics_csv,
    run_experiment,
    save_checkpoint,
    summarize,
    svg_test_boxes,
    svg_train_curves,
    write_metrics_csv,
)
from asnet.training import Team

TINY_DICT = {
    "task": "ghostrun",
    "hypothesis": "h1",
    "episodes": 2,
    "eval_episodes": 2,
    "seeds": [0, 1],
    "env": {"grid_h": 7, "grid_w": 7, "n_agents": 2, "n_ghosts": 1, "n_trees": 1,
            "n_obstacles": 1, "view_radius": 2, "max_steps": 6},
    "agent": {"d_k": 4, "d_v": 4, "hidden_dim": 3, "mlp_width": 6, "mask_hidden": 4},
    "ppo": {"epochs_per_update": 1},
}


def tiny_config(**over):
    d = {**{k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_DICT.items()}}
    d.update(over)
    return ExperimentConfig.from_dict(d)


def tiny_team(arch="h1", seed=0, share=True):
    from asnet.agents import AgentConfig
    env = Env(GhostRunConfig(**TINY_DICT["env"]))
    cfg = AgentConfig(d_k=4, d_v=4, hidden_dim=3, mlp_width=6, mask_hidden=4,
                      share_parameters=share)
    return env, Team(arch, env.view_shape, cfg, seed, env.n_agents)


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = ExperimentConfig.from_dict({"task": "mazecleaners", "hypothesis": "h5_1"})
    assert cfg.episodes == 1000
    assert cfg.eval_episodes == 100
    assert cfg.seeds == (0,)
    assert not cfg.continual
    assert isinstance(cfg.env, MazeConfig)
    assert cfg.ppo.gamma == 0.99


def test_config_env_overrides():
    cfg = tiny_config()
    assert isinstance(cfg.env, GhostRunConfig)
    assert cfg.env.grid_h == 7
    assert cfg.env.max_steps == 6
    assert cfg.agent.d_v == 4


@pytest.mark.parametrize("broken", [
    {"hypothesis": "h1"},
    {"task": "ghostrun"},
    {"task": "chess", "hypothesis": "h1"},
    {"task": "ghostrun", "hypothesis": "h9"},
    {"task": "ghostrun", "hypothesis": "h1", "frobnicate": 1},
    {"task": "ghostrun", "hypothesis": "h1", "env": {"grid_x": 5}},
    {"task": "ghostrun", "hypothesis": "h1", "agent": {"depth": 3}},
    {"task": "ghostrun", "hypothesis": "h1", "ppo": {"gamma": 1.5}},
    {"task": "ghostrun", "hypothesis": "h1", "seeds": []},
    {"task": "ghostrun", "hypothesis": "h1", "seeds": [1, 1]},
    {"task": "ghostrun", "hypothesis": "h1", "episodes": 0},
    {"task": "mazecleaners", "hypothesis": "h1", "continual": True},
    {"task": "ghostrun", "hypothesis": "h1", "env": {"view_radius": 0}},
])
def test_config_rejects(broken):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(broken)


def test_config_from_json(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(TINY_DICT), encoding="utf-8")
    cfg = ExperimentConfig.from_json(path)
    assert cfg.task == "ghostrun"
    assert cfg.seeds == (0, 1)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(bad)


# ---------------------------------------------------------------------------
# metrics CSV


def test_fmt_float():
    assert fmt_float(None) == ""
    assert fmt_float(1.0) == "1"
    assert float(fmt_float(1 / 3)) == 1 / 3
    assert float(fmt_float(-1e-17)) == -1e-17


def test_metrics_csv_round_trip(tmp_path):
    rows = [
        MetricsRow(0, "h1", "ghostrun", "train", 0, -12.5, -0.031, 4.25,
                   1.3862943611198906, 0.0, 3),
        MetricsRow(0, "h1", "ghostrun", "iid_test", 0, -1 / 3, None, None,
                   None, None, 3),
        MetricsRow(1, "h5_4", "mazecleaners", "ood_test", 7, 41.0, None, None,
                   None, None, None),
    ]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert read_metrics_csv(path) == rows
    text = path.read_text(encoding="utf-8")
    assert "\r" not in text
    assert text.splitlines()[0] == ",".join(harness.METRICS_COLUMNS)


def test_metrics_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_metrics_csv(path)


def test_metrics_csv_rejects_short_row(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(",".join(harness.METRICS_COLUMNS) + "\n1,h1,ghostrun\n",
                    encoding="utf-8")
    with pytest.raises(ConfigError):
        read_metrics_csv(path)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    env, team = tiny_team("h5_4", seed=3)
    # make values adversarial for any text round trip
    team.net_for(0).attention.w_query.data[0, 0] = np.nextafter(1.0, 2.0)
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    loaded = load_checkpoint(stem)
    assert loaded.task == "ghostrun"
    assert loaded.env_config == env.config
    assert loaded.team.arch.value == "h5_4"
    for (na, a), (nb, b) in zip(team.parameters(), loaded.team.parameters()):
        assert na == nb
        assert np.array_equal(a.data, b.data)


def test_checkpoint_unshared_team(tmp_path):
    env, team = tiny_team("h1", share=False)
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    loaded = load_checkpoint(stem)
    assert len(loaded.team.distinct_nets()) == env.n_agents
    for (na, a), (nb, b) in zip(team.parameters(), loaded.team.parameters()):
        assert na == nb and np.array_equal(a.data, b.data)


def test_checkpoint_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "nope")


def test_checkpoint_bad_manifest(tmp_path):
    env, team = tiny_team()
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    manifest = json.loads((stem.with_suffix(".json")).read_text(encoding="utf-8"))
    manifest["format"] = "something-else"
    stem.with_suffix(".json").write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(stem)


def test_checkpoint_truncated_blob(tmp_path):
    env, team = tiny_team()
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    blob = stem.with_suffix(".bin").read_bytes()
    stem.with_suffix(".bin").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(stem)


def test_checkpoint_manifest_is_json_with_sorted_keys(tmp_path):
    env, team = tiny_team()
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    manifest = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    assert manifest["hypothesis"] == "h1"
    assert manifest["n_agents"] == 2
    assert [t["name"] for t in manifest["tensors"]] == [n for n, _ in team.parameters()]


# ---------------------------------------------------------------------------
# aggregation


def test_summarize_cross_seed_mean_and_population_std():
    rows = [MetricsRow(0, "h1", "ghostrun", "iid_test", i, -10.0) for i in range(3)]
    rows += [MetricsRow(1, "h1", "ghostrun", "iid_test", i, -20.0) for i in range(3)]
    (s,) = summarize(rows)
    assert s.n_seeds == 2
    assert s.mean_reward == pytest.approx(-15.0)
    assert s.std_reward == pytest.approx(5.0)


def test_summarize_groups_and_sorts():
    rows = [
        MetricsRow(0, "h4", "ghostrun", "train", 0, -5.0),
        MetricsRow(0, "h1", "ghostrun", "train", 0, -7.0),
        MetricsRow(0, "h1", "ghostrun", "iid_test", 0, -6.0),
    ]
    out = summarize(rows)
    assert [(s.hypothesis, s.phase) for s in out] == [
        ("h1", "iid_test"), ("h1", "train"), ("h4", "train")]


def test_svg_plots_are_deterministic_strings():
    rows = [MetricsRow(s, h, "ghostrun", "train", e, -10.0 - s - e)
            for s in (0, 1) for e in range(4) for h in ("h1", "h5_4")]
    rows += [MetricsRow(s, h, "ghostrun", p, e, -12.0 + e)
             for s in (0, 1) for e in range(3) for h in ("h1", "h5_4")
             for p in ("iid_test", "ood_test")]
    a, b = svg_train_curves(rows), svg_train_curves(rows)
    assert a == b
    assert a.startswith("<svg ") and a.rstrip().endswith("</svg>")
    assert "polyline" in a
    boxes = svg_test_boxes(rows)
    assert boxes == svg_test_boxes(rows)
    assert "rect" in boxes and "h5_4 ood" in boxes
    with pytest.raises(ConfigError):
        svg_train_curves([rows[-1]])
    with pytest.raises(ConfigError):
        svg_test_boxes([rows[0]])


# ---------------------------------------------------------------------------
# experiment runs


def test_run_experiment_outputs(tmp_path):
    cfg = tiny_config()
    result = run_experiment(cfg, out_dir=tmp_path / "run")
    out = tmp_path / "run"
    for name in ("metrics_seed0.csv", "metrics_seed1.csv", "comparison.csv",
                 "train_rewards.svg", "test_rewards.svg",
                 "checkpoint_seed0.json", "checkpoint_seed0.bin",
                 "checkpoint_seed1.json", "checkpoint_seed1.bin"):
        assert (out / name).exists(), name

    rows = read_metrics_csv(out / "metrics_seed0.csv")
    by_phase = {}
    for r in rows:
        by_phase.setdefault(r.phase, []).append(r)
    assert len(by_phase["train"]) == cfg.episodes
    assert len(by_phase["iid_test"]) == cfg.eval_episodes
    assert len(by_phase["ood_test"]) == cfg.eval_episodes
    for r in by_phase["train"]:
        assert r.policy_loss is not None and r.n_ghosts == 1
    for r in by_phase["iid_test"]:
        assert r.policy_loss is None and r.n_ghosts == 1
    for r in by_phase["ood_test"]:
        assert r.n_ghosts == 3  # shifted variant adds two ghosts

    summaries = {(s.phase): s for s in result.summaries}
    assert set(summaries) == {"train", "iid_test", "ood_test"}
    assert all(s.n_seeds == 2 for s in result.summaries)


def _run_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_run_experiment_reruns_byte_identical(tmp_path):
    cfg = tiny_config()
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    a, b = _run_bytes(tmp_path / "a"), _run_bytes(tmp_path / "b")
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


def test_run_experiment_worker_count_does_not_change_bytes(tmp_path):
    cfg = tiny_config(episodes=1, eval_episodes=1)
    run_experiment(cfg, out_dir=tmp_path / "serial", threads=1)
    run_experiment(cfg, out_dir=tmp_path / "pooled", threads=2)
    a, b = _run_bytes(tmp_path / "serial"), _run_bytes(tmp_path / "pooled")
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


def test_run_experiment_requires_out_dir():
    with pytest.raises(ConfigError):
        run_experiment(tiny_config())


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("ASNET_THREADS", raising=False)
    assert harness.resolve_threads() == 1
    monkeypatch.setenv("ASNET_THREADS", "3")
    assert harness.resolve_threads() == 3
    assert harness.resolve_threads(2) == 2
    monkeypatch.setenv("ASNET_THREADS", "zero")
    with pytest.raises(ConfigError):
        harness.resolve_threads()
    with pytest.raises(ConfigError):
        harness.resolve_threads(0)


def test_evaluate_checkpoint_matches_run_rows(tmp_path):
    cfg = tiny_config(seeds=[0])
    run_experiment(cfg, out_dir=tmp_path / "run")
    rows = read_metrics_csv(tmp_path / "run" / "metrics_seed0.csv")
    for mode, phase in (("iid", "iid_test"), ("ood", "ood_test")):
        summary = evaluate_checkpoint(tmp_path / "run" / "checkpoint_seed0",
                                      mode=mode, episodes=cfg.eval_episodes, seed=0)
        logged = [r.episode_reward for r in rows if r.phase == phase]
        assert list(summary.rewards) == logged


def test_evaluate_checkpoint_rejects_bad_mode(tmp_path):
    with pytest.raises(ConfigError):
        evaluate_checkpoint(tmp_path / "x", mode="transfer")


def test_load_run_rows_requires_metrics(tmp_path):
    with pytest.raises(ConfigError):
        load_run_rows(tmp_path)


# ---------------------------------------------------------------------------
# CLI


def write_config(tmp_path, **over):
    d = {**{k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_DICT.items()}}
    d.update(over)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(d), encoding="utf-8")
    return path


def test_cli_train_eval_compare(tmp_path, capsys):
    config_path = write_config(tmp_path)
    run_dir = tmp_path / "run"
    code = cli.main(["train", "--config", str(config_path), "--out", str(run_dir),
                     "--seeds", "0", "--episodes", "1"])
    assert code == 0
    assert (run_dir / "metrics_seed0.csv").exists()
    out = capsys.readouterr().out
    assert "iid_test" in out and str(run_dir) in out

    rewards_csv = tmp_path / "rewards.csv"
    code = cli.main(["eval", "--checkpoint", str(run_dir / "checkpoint_seed0"),
                     "--mode", "ood", "--episodes", "2", "--seed", "1",
                     "--out", str(rewards_csv)])
    assert code == 0
    assert rewards_csv.read_text(encoding="utf-8").startswith("episode,episode_reward\n")

    cmp_dir = tmp_path / "cmp"
    code = cli.main(["compare", str(run_dir), "--out", str(cmp_dir)])
    assert code == 0
    assert (cmp_dir / "comparison.csv").exists()
    assert (cmp_dir / "train_rewards.svg").exists()


def test_cli_gradcheck_smoke(capsys):
    assert cli.main(["gradcheck", "--instances", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_cli_config_error_exits_2(tmp_path, capsys):
    path = write_config(tmp_path, task="chess")
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_bad_seed_list_exits_2(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o"),
                     "--seeds", "0,zebra"]) == 2


def test_cli_missing_checkpoint_exits_3(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing")]) == 3


def test_cli_invariant_error_exits_4(monkeypatch):
    def boom(*args, **kwargs):
        raise InvariantError("synthetic")
    monkeypatch.setattr(cli.harness, "evaluate_checkpoint", boom)
    assert cli.main(["eval", "--checkpoint", "whatever"]) == 4


def test_cli_rejects_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_train_continual_flag(tmp_path, capsys):
    config_path = write_config(tmp_path)
    run_dir = tmp_path / "run"
    code = cli.main(["train", "--config", str(config_path), "--out", str(run_dir),
                     "--seeds", "0", "--continual"])
    assert code == 0
    capsys.readouterr()
    rows = harness.read_metrics_csv(run_dir / "metrics_seed0.csv")
    train_rows = [r for r in rows if r.phase == "train"]
    assert all(r.n_ghosts == 1 for r in train_rows)

    maze_path = write_config(tmp_path, task="mazecleaners", env={})
    code = cli.main(["train", "--config", str(maze_path), "--out",
                     str(tmp_path / "m"), "--continual"])
    assert code == 2
    assert "continual" in capsys.readouterr().err


def test_cli_compare_emit_selects_outputs(tmp_path, capsys):
    config_path = write_config(tmp_path)
    run_dir = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_path), "--out", str(run_dir),
                     "--seeds", "0", "--episodes", "1"]) == 0

    csv_only = tmp_path / "csv_only"
    assert cli.main(["compare", str(run_dir), "--emit", "csv",
                     "--out", str(csv_only)]) == 0
    assert (csv_only / "comparison.csv").exists()
    assert not (csv_only / "train_rewards.svg").exists()

    svg_only = tmp_path / "svg_only"
    assert cli.main(["compare", str(run_dir), "--emit", "svg",
                     "--out", str(svg_only)]) == 0
    assert not (svg_only / "comparison.csv").exists()
    assert (svg_only / "train_rewards.svg").exists()
    assert (svg_only / "test_rewards.svg").exists()

    capsys.readouterr()
    assert cli.main(["compare", str(run_dir), "--emit", "pdf",
                     "--out", str(tmp_path / "bad")]) == 2
    assert "--emit" in capsys.readouterr().err


def test_eval_summary_fields(tmp_path):
    env, team = tiny_team()
    stem = tmp_path / "ck"
    save_checkpoint(stem, team, "ghostrun", env.config)
    summary = evaluate_checkpoint(stem, episodes=2, seed=3)
    assert isinstance(summary, EvalSummary)
    assert summary.rewards.shape == (2,)
    assert summary.mean_reward == pytest.approx(float(summary.rewards.mean()))
