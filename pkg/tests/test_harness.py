import json
import math
import os

import numpy as np
import pytest

from safemaze.errors import ConfigurationError
from safemaze.harness import (
    ExperimentConfig,
    RunMetrics,
    build_env,
    export_metrics,
    load_experiment_config,
    run_collect,
    run_eval,
    run_pretrain,
    run_risk_probe,
    run_train,
)
from safemaze.env import EpisodeOutcome
from safemaze.nn import load_checkpoint
from safemaze.reports import column, read_csv


def tiny_config(**overrides):
    base = dict(
        episodes=6,
        horizon=60,
        hidden=(16, 16),
        batch_size=32,
        n_offline=400,
        pretrain_updates=150,
        start_steps=40,
        buffer_capacity=20_000,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig.desk(**base)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end pipeline shared by the harness tests."""
    root = tmp_path_factory.mktemp("pipe")
    cfg = tiny_config()
    dataset = run_collect(cfg, root / "data")
    pretrain = run_pretrain(cfg, dataset, root / "pre")
    metrics = run_train(
        tiny_config(log_trajectories=True), root / "train", pretrain_path=pretrain
    )
    return root, cfg, dataset, pretrain, metrics


class TestConfig:
    def test_defaults_follow_protocol(self):
        cfg = ExperimentConfig()
        assert cfg.episodes == 1500
        assert cfg.horizon == 500
        assert cfg.updates_per_step == 10
        assert cfg.batch_size == 256
        assert cfg.pretrain_updates == 10000
        assert cfg.gamma == 0.9
        assert cfg.gamma_risk == 0.65
        assert cfg.epsilon_risk == 0.7
        assert cfg.hidden == (256, 256)

    def test_desk_preset_keeps_protocol_constants(self):
        cfg = ExperimentConfig.desk()
        assert cfg.episodes == 500
        assert cfg.horizon == 500
        assert cfg.updates_per_step == 10
        assert (cfg.gamma, cfg.gamma_risk, cfg.epsilon_risk) == (0.9, 0.65, 0.7)

    def test_hash_is_stable_and_sensitive(self):
        a = ExperimentConfig.desk(seed=1)
        b = ExperimentConfig.desk(seed=1)
        c = ExperimentConfig.desk(seed=2)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    def test_validation_rejects_bad_values(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(method="bogus").validate()
        with pytest.raises(ConfigurationError):
            ExperimentConfig(gamma=1.5).validate()
        with pytest.raises(ConfigurationError):
            ExperimentConfig(force_threshold=-1).validate()

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"method": "SRL-K300", "episodes": 7, "hidden": [8, 8]}))
        overrides = load_experiment_config(path)
        cfg = ExperimentConfig(**overrides)
        assert cfg.method == "SRL-K300" and cfg.episodes == 7 and cfg.hidden == (8, 8)

    def test_config_file_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ConfigurationError):
            load_experiment_config(path)


class TestMetricsAccounting:
    def test_outcomes_partition_episodes(self, pipeline):
        _, _, _, _, metrics = pipeline
        n = len(metrics.episodes)
        assert (
            metrics.successes + metrics.violations + metrics.entrance_exits + metrics.timeouts
            == n
        )

    def test_cumulative_counters_non_decreasing(self, pipeline):
        _, _, _, _, metrics = pipeline
        for key in ("cum_successes", "cum_violations"):
            series = [e[key] for e in metrics.episodes]
            assert all(b >= a for a, b in zip(series, series[1:]))

    def test_ratio_guard_with_zero_violations(self):
        m = RunMetrics()
        m.record(0, 10, 1000.0, EpisodeOutcome.SUCCESS, 5.0)
        assert m.ratio == 1.0  # denominator guarded at 1


class TestPretrain:
    def test_zero_updates_equals_initialization(self, tmp_path, pipeline):
        root, cfg, dataset, _, _ = pipeline
        from safemaze.harness import build_agent

        out = run_pretrain(tiny_config(pretrain_updates=0), dataset, tmp_path / "p0")
        nets, _, _ = load_checkpoint(out)
        fresh = build_agent(tiny_config(pretrain_updates=0))
        assert np.array_equal(nets["safety"].params, fresh.safety.net.params)
        assert np.array_equal(nets["recovery"].params, fresh.recovery.net.params)

    def test_same_seed_gives_identical_checkpoints(self, tmp_path, pipeline):
        _, cfg, dataset, _, _ = pipeline
        a = run_pretrain(cfg, dataset, tmp_path / "a")
        b = run_pretrain(cfg, dataset, tmp_path / "b")
        na, sa, _ = load_checkpoint(a)
        nb, sb, _ = load_checkpoint(b)
        for key in na:
            assert np.array_equal(na[key].params, nb[key].params)

    def test_all_safe_dataset_collapses_critic(self, tmp_path):
        # synthetic dataset without any violations
        from safemaze.offline import OfflineDataset

        rng = np.random.default_rng(0)
        n = 512
        ds = OfflineDataset(
            states=np.zeros((n, 6)),
            actions=rng.uniform(-1, 1, (n, 4)),
            costs=np.zeros(n),
            next_states=rng.normal(0, 3, (n, 6)),
            dones=np.zeros(n),
        )
        path = tmp_path / "safe.smrs"
        ds.save(path)
        cfg = tiny_config(pretrain_updates=1200)
        ckpt = run_pretrain(cfg, path, tmp_path / "out")
        nets, _, _ = load_checkpoint(ckpt)
        x = np.concatenate([np.zeros((128, 6)), rng.uniform(-1, 1, (128, 4))], axis=1)
        q = nets["safety"](x)
        assert float(q.max()) < 0.1

    def test_missing_dataset_is_config_error(self, tmp_path):
        with pytest.raises(ConfigurationError):
            run_pretrain(tiny_config(), tmp_path / "nope.smrs", tmp_path / "o")

    def test_ungated_method_cannot_pretrain(self, tmp_path, pipeline):
        _, _, dataset, _, _ = pipeline
        with pytest.raises(ConfigurationError):
            run_pretrain(tiny_config(method="Std_RL-VIC"), dataset, tmp_path / "o")


class TestTrain:
    def test_srl_requires_pretrained_checkpoint(self, tmp_path):
        with pytest.raises(ConfigurationError):
            run_train(tiny_config(), tmp_path / "t")

    def test_std_rl_runs_without_pretraining_and_never_recovers(self, tmp_path):
        cfg = tiny_config(method="Std_RL-VIC", episodes=4)
        run_train(cfg, tmp_path / "t")
        header, rows, _ = read_csv(tmp_path / "t" / "decisions.csv")
        sources = {r[header.index("source")] for r in rows}
        assert sources == {"task"}

    def test_constant_k_logs_pinned_projection(self, pipeline, tmp_path):
        root, _, _, pretrain, _ = pipeline
        cfg = tiny_config(method="SRL-K1000", episodes=3, log_trajectories=True)
        run_train(cfg, tmp_path / "t", pretrain_path=pretrain)
        header, rows, _ = read_csv(tmp_path / "t" / "trajectory.csv")
        kx = column(header, rows, "Kx_star")
        ky = column(header, rows, "Ky_star")
        # projections of equal gains sum to 2k for axis moves, vary in between
        assert np.all(kx >= 1000.0 - 1e-6) and np.all(kx <= 2000.0 / math.sqrt(2) + 1e-6)
        assert np.allclose(kx, ky, atol=1e-6)

    def test_gate_ledger_consistency(self, pipeline):
        root, cfg, _, _, _ = pipeline
        header, rows, _ = read_csv(root / "train" / "decisions.csv")
        eps = cfg.epsilon_risk
        for row in rows:
            risk = float(row[header.index("risk")])
            source = row[header.index("source")]
            assert source == ("recovery" if risk > eps else "task")

    def test_training_outputs_are_bitwise_reproducible(self, pipeline, tmp_path):
        root, _, _, pretrain, _ = pipeline
        cfg = tiny_config(episodes=3, log_trajectories=True)
        run_train(cfg, tmp_path / "r1", pretrain_path=pretrain)
        run_train(cfg, tmp_path / "r2", pretrain_path=pretrain)
        for name in ("episodes.csv", "decisions.csv", "trajectory.csv", "summary.json",
                     "checkpoint.npz", "maze.json"):
            b1 = (tmp_path / "r1" / name).read_bytes()
            b2 = (tmp_path / "r2" / name).read_bytes()
            assert b1 == b2, f"{name} differs between identical runs"

    def test_csvs_carry_config_hash(self, pipeline):
        root, cfg, _, _, _ = pipeline
        _, _, h = read_csv(root / "train" / "episodes.csv")
        assert h == tiny_config(log_trajectories=True).config_hash()


class TestEvalAndProbe:
    def test_eval_zero_episodes_gives_empty_report(self, pipeline, tmp_path):
        root, cfg, _, _, _ = pipeline
        report = run_eval(cfg, root / "train" / "checkpoint.npz", tmp_path / "e", n_episodes=0)
        assert report.n_episodes == 0
        assert report.success_rate == 0.0
        assert os.path.exists(tmp_path / "e" / "eval.csv")

    def test_eval_is_deterministic(self, pipeline, tmp_path):
        root, cfg, _, _, _ = pipeline
        ckpt = root / "train" / "checkpoint.npz"
        run_eval(cfg, ckpt, tmp_path / "e1", n_episodes=4)
        run_eval(cfg, ckpt, tmp_path / "e2", n_episodes=4)
        assert (tmp_path / "e1" / "eval.csv").read_bytes() == (
            tmp_path / "e2" / "eval.csv"
        ).read_bytes()

    def test_eval_rejects_method_mismatch(self, pipeline, tmp_path):
        root, cfg, _, _, _ = pipeline
        bad = tiny_config(method="SRL-K300")
        with pytest.raises(ConfigurationError):
            run_eval(bad, root / "train" / "checkpoint.npz", tmp_path / "e")

    def test_probe_is_deterministic_and_hash_stamped(self, pipeline, tmp_path):
        root, cfg, _, pretrain, _ = pipeline
        run_risk_probe(cfg, pretrain, tmp_path / "p1", n_probes=40)
        run_risk_probe(cfg, pretrain, tmp_path / "p2", n_probes=40)
        assert (tmp_path / "p1" / "probe.csv").read_bytes() == (
            tmp_path / "p2" / "probe.csv"
        ).read_bytes()
        header, rows, h = read_csv(tmp_path / "p1" / "probe.csv")
        assert h == cfg.config_hash()
        assert len(rows) == 40
        assert header == ["probe", "dp_norm", "k_norm", "force", "risk"]

    def test_probe_requires_gated_method(self, pipeline, tmp_path):
        root, _, _, pretrain, _ = pipeline
        with pytest.raises(ConfigurationError):
            run_risk_probe(tiny_config(method="Std_RL-VIC"), pretrain, tmp_path / "p")


class TestExport:
    def test_export_produces_csv_and_figures(self, pipeline, tmp_path):
        root, _, _, _, _ = pipeline
        produced = export_metrics([str(root / "train")], tmp_path / "x")
        names = {os.path.basename(p) for p in produced}
        assert "learning_curves.csv" in names
        assert "learning_curves.png" in names
        assert any(n.startswith("trajectory_") and n.endswith(".png") for n in names)

    def test_export_empty_dir_is_config_error(self, tmp_path):
        os.makedirs(tmp_path / "empty", exist_ok=True)
        with pytest.raises(ConfigurationError):
            export_metrics([str(tmp_path / "empty")], tmp_path / "x")

    def test_curve_rows_match_episode_count(self, pipeline, tmp_path):
        root, cfg, _, _, metrics = pipeline
        export_metrics([str(root / "train")], tmp_path / "x")
        header, rows, _ = read_csv(tmp_path / "x" / "learning_curves.csv")
        assert len(rows) == len(metrics.episodes)
