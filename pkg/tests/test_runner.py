import json
from dataclasses import replace

import pytest

from metaed.data import CorpusSpec, EpisodeSpec
from metaed.errors import ConfigurationError
from metaed.matching import METRIC_KEYS
from metaed.meta import MetaConfig
from metaed.runner import (
    RunConfig,
    config_from_dict,
    derive_seed,
    evaluate_checkpoint,
    export_features,
    prepare_data,
    run_ablation,
    run_sweep,
    run_train,
)

MICRO_CORPUS = CorpusSpec(
    num_event_types=8,
    triggers_per_type=1,
    background_vocab=20,
    context_len_range=(5, 8),
    examples_per_type=12,
    trigger_noise=0.0,
    seed=1,
)


def micro_config(tmp_path, **overrides):
    base = dict(
        mode="few_shot",
        corpus=MICRO_CORPUS,
        episode=EpisodeSpec(n_way=2, k_shot=2, query_per_class=2),
        meta=MetaConfig(
            inner_steps=2,
            tasks_per_meta_batch=1,
            meta_lr=1e-3,
            total_iterations=4,
            validate_every=2,
            inner_lr=1e-2,
        ),
        seed=5,
        num_seeds=1,
        output_dir=str(tmp_path / "run"),
        split_counts=(4, 2, 2),
        val_episodes=2,
        test_episodes=2,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestRunConfig:
    def test_zero_shot_forces_k_zero(self):
        cfg = RunConfig(mode="zero_shot", episode=EpisodeSpec(n_way=3, k_shot=5))
        assert cfg.episode.k_shot == 0

    def test_invalid_mode(self):
        with pytest.raises(ConfigurationError):
            RunConfig(mode="one_shot")

    def test_dict_round_trip(self, tmp_path):
        cfg = micro_config(tmp_path)
        again = config_from_dict(cfg.to_dict())
        assert again == cfg

    def test_partial_dict_uses_defaults(self):
        cfg = config_from_dict({"seed": 9, "meta": {"inner_steps": 7}})
        assert cfg.seed == 9
        assert cfg.meta.inner_steps == 7
        assert cfg.meta.meta_lr == MetaConfig().meta_lr

    def test_bad_key_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"bogus_field": 1})


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(1, "train", 5) == derive_seed(1, "train", 5)
        assert derive_seed(1, "train", 5) != derive_seed(1, "train", 6)
        assert derive_seed(1, "train", 5) != derive_seed(2, "train", 5)
        assert derive_seed(1, "val", 5) != derive_seed(1, "test", 5)


class TestPrepareData:
    def test_split_counts(self, tmp_path):
        data = prepare_data(micro_config(tmp_path))
        assert (len(data.train), len(data.valid), len(data.test)) == (4, 2, 2)
        labels = set(data.train) | set(data.valid) | set(data.test)
        assert len(labels) == 8

    def test_zero_shot_needs_twice_n(self, tmp_path):
        cfg = micro_config(
            tmp_path,
            mode="zero_shot",
            episode=EpisodeSpec(n_way=3, k_shot=0, query_per_class=2),
        )
        with pytest.raises(ConfigurationError, match="disjoint"):
            prepare_data(cfg)


class TestRunTrain:
    def test_report_structure(self, tmp_path):
        report = run_train(micro_config(tmp_path))
        assert set(report.test_mean) == set(METRIC_KEYS)
        seed_result = report.per_seed[0]
        assert seed_result["loss_curve"]
        assert seed_result["best_iteration"] >= 1
        out = tmp_path / "run"
        assert (out / "report.json").exists()
        assert (out / "report.txt").exists()
        metric_lines = (out / "metrics_seed5.jsonl").read_text().strip().splitlines()
        assert len(metric_lines) == 2
        for line in metric_lines:
            assert tuple(json.loads(line)) == METRIC_KEYS

    def test_deterministic_repeat(self, tmp_path):
        a = run_train(micro_config(tmp_path, output_dir=str(tmp_path / "a")))
        b = run_train(micro_config(tmp_path, output_dir=str(tmp_path / "b")))
        assert a.test_mean == b.test_mean
        assert a.per_seed[0]["test_episodes"] == b.per_seed[0]["test_episodes"]
        assert a.per_seed[0]["loss_curve"] == b.per_seed[0]["loss_curve"]

    def test_checkpoint_eval_round_trip(self, tmp_path):
        report = run_train(micro_config(tmp_path))
        result = evaluate_checkpoint(report.per_seed[0]["checkpoint"])
        assert result["test"] == report.per_seed[0]["test"]
        assert result["episodes"] == report.per_seed[0]["test_episodes"]

    def test_resume_matches_straight_run(self, tmp_path):
        # run the first half, then resume with the full horizon
        half = micro_config(tmp_path, output_dir=str(tmp_path / "resumed"))
        run_train(half)
        full_cfg = replace(
            half, meta=replace(half.meta, total_iterations=8), output_dir=str(tmp_path / "resumed")
        )
        resumed = run_train(full_cfg, resume=True)
        straight = run_train(
            replace(full_cfg, output_dir=str(tmp_path / "straight")), resume=False
        )
        assert resumed.test_mean == straight.test_mean
        assert resumed.per_seed[0]["loss_curve"] == straight.per_seed[0]["loss_curve"]

    def test_zero_shot_run(self, tmp_path):
        cfg = micro_config(
            tmp_path,
            mode="zero_shot",
            corpus=replace(MICRO_CORPUS, num_event_types=10),
            episode=EpisodeSpec(n_way=2, k_shot=0, query_per_class=3),
            split_counts=(6, 2, 2),
            meta=MetaConfig(
                inner_steps=2, tasks_per_meta_batch=1, meta_lr=1e-3, total_iterations=4,
                validate_every=2, inner_lr=1e-2, zero_shot_support_shots=2,
            ),
        )
        report = run_train(cfg)
        assert set(report.test_mean) == set(METRIC_KEYS)

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("METAED_OUTPUT_ROOT", str(tmp_path / "root"))
        report = run_train(micro_config(tmp_path, output_dir="rel_run"))
        assert report.output_dir == str(tmp_path / "root" / "rel_run")


class TestSweep:
    def test_empty_values_warns(self, tmp_path):
        with pytest.warns(UserWarning, match="no values"):
            result = run_sweep(micro_config(tmp_path), "lambda_c", [])
        assert result["rows"] == []

    def test_unknown_parameter(self, tmp_path):
        with pytest.raises(ConfigurationError):
            run_sweep(micro_config(tmp_path), "meta_lr", [1e-3])

    def test_lambda_sweep_shares_task_stream(self, tmp_path):
        cfg = micro_config(tmp_path, output_dir=str(tmp_path / "sweep"))
        result = run_sweep(cfg, "lambda_c", [0.0, 1.0])
        assert [row["value"] for row in result["rows"]] == [0.0, 1.0]
        assert len(result["reports"]) == 2
        ids = []
        for value in ("0.0", "1.0"):
            log = tmp_path / "sweep" / f"lambda_c_{value}" / "runlog_seed5.jsonl"
            ids.append([json.loads(l)["task_ids"] for l in log.read_text().splitlines()])
        assert ids[0] == ids[1]
        assert (tmp_path / "sweep" / "sweep_summary.json").exists()
        assert (tmp_path / "sweep" / "sweep_plot.csv").exists()

    def test_k_shot_sweep_rejected_for_zero_shot(self, tmp_path):
        cfg = micro_config(
            tmp_path,
            mode="zero_shot",
            corpus=replace(MICRO_CORPUS, num_event_types=10),
            episode=EpisodeSpec(n_way=2, k_shot=0, query_per_class=2),
            split_counts=(6, 2, 2),
        )
        with pytest.raises(ConfigurationError):
            run_sweep(cfg, "k_shot", [1, 5])


class TestAblation:
    def test_full_set_yields_four_rows(self, tmp_path):
        result = run_ablation(micro_config(tmp_path, output_dir=str(tmp_path / "abl")))
        assert [row["variant"] for row in result["rows"]] == [
            "full",
            "no_trigger",
            "no_verbalizer",
            "no_meta_learner",
        ]
        assert (tmp_path / "abl" / "ablation.json").exists()

    def test_unknown_component(self, tmp_path):
        with pytest.raises(ConfigurationError, match="unknown ablation"):
            run_ablation(micro_config(tmp_path), ["dropout"])

    def test_no_trigger_uses_slot_features_only(self, tmp_path):
        from metaed.encoder import feature_dim
        from metaed.runner import encoder_config

        cfg = micro_config(tmp_path, feature_mode="v_only")
        data = prepare_data(cfg)
        enc = encoder_config(cfg, data)
        assert feature_dim(enc, "v_only") == enc.vocab_size


class TestExportFeatures:
    def test_rows_and_cluster_agreement(self, tmp_path):
        cfg = micro_config(tmp_path)
        report = run_train(cfg)
        ckpt = report.per_seed[0]["checkpoint"]
        out = tmp_path / "features.csv"
        result = export_features(ckpt, out)
        lines = out.read_text().strip().splitlines()
        header, rows = lines[0], lines[1:]
        assert header == "episode,x,y,gold,cluster"
        expected_rows = cfg.test_episodes * cfg.episode.n_way * cfg.episode.query_per_class
        assert result["rows"] == expected_rows == len(rows)
        # cluster ids in the file must come from the same clustering the
        # metrics used: re-derive them through the evaluation path
        from metaed import matching
        from metaed.checkpoint import build_model, load_checkpoint
        from metaed.meta import MetaLearner
        from metaed.runner import _eval_episodes, derive_seed

        loaded = load_checkpoint(ckpt)
        model = build_model(loaded)
        learner = MetaLearner(model, cfg.meta, cfg.loss, cfg.mmd, template=loaded.template,
                              feature_mode=loaded.feature_mode)
        episodes = _eval_episodes(cfg, prepare_data(cfg).test, "test", cfg.test_episodes)
        file_clusters = [int(r.split(",")[4]) for r in rows]
        offset = 0
        for i, task in enumerate(episodes):
            feats = learner.features(task.query)
            res = matching.kmeans(feats, task.n_way, seed=derive_seed(cfg.seed, "test", "km", i))
            got = file_clusters[offset : offset + len(task.query)]
            assert got == res.cluster_ids.tolist()
            offset += len(task.query)
