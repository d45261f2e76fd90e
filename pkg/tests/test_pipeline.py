"""Stage training, pseudo-labeling, transfer, checkpoints, determinism."""

import numpy as np
import pytest
from dataclasses import replace

from sevreg.config import ModelConfig, RegressionStageConfig, RunConfig, Stage2Config
from sevreg.data import Corpus, Utterance, label_histogram
from sevreg.errors import (
    FeatureFormatError,
    ParameterError,
    TrainingDivergedError,
    TransferError,
)
from sevreg.pipeline import (
    build_stage2_corpus,
    checkpoint_from_net,
    dump_embeddings,
    evaluate,
    load_checkpoint,
    net_from_checkpoint,
    predict,
    pseudo_label,
    save_checkpoint,
    train_regression,
    train_stage2,
    train_stage3,
)
from sevreg.evaluation import read_embeddings
from sevreg.experiments import split_labeled
from sevreg.nn import forward_batch
from sevreg.synthetic import WorldConfig, build_world

SMALL_WORLD = WorldConfig(
    feat_dim=8,
    signal_dims=4,
    nuisance_dims=3,
    n_labeled=400,
    n_unlabeled=160,
    n_typical=120,
    n_shifted_test=100,
    labeled_speakers=20,
    unlabeled_speakers=10,
    typical_speakers=6,
    shifted_speakers=8,
    t_range=(6, 12),
)

# the tiny corpus sees few optimizer steps, so it needs a hotter lr than the
# full-scale defaults to leave the clamped-prediction regime
MODEL = ModelConfig(hidden_dim=32, embed_dim=16)
STAGE = RegressionStageConfig(lr=2e-3, epochs=8)
STAGE2 = Stage2Config(batch_size=32)


@pytest.fixture(scope="module")
def world():
    return build_world(SMALL_WORLD)


@pytest.fixture(scope="module")
def splits(world):
    return split_labeled(world["labeled"], SMALL_WORLD)


@pytest.fixture(scope="module")
def stage1(splits):
    train, val, _ = splits
    return train_regression(train, val, MODEL, STAGE, seed=0)


def small_cfg(**kw):
    cfg = RunConfig(model=MODEL, stage1=STAGE, stage3=STAGE, stage2=STAGE2)
    cfg.data.world = SMALL_WORLD
    return replace(cfg, **kw) if kw else cfg


class TestStage1:
    def test_learns_synthetic_signal(self, stage1, splits):
        _, _, test = splits
        report = evaluate(stage1.net, test, level="utterance")
        assert report.srcc > 0.7  # small corpus, few epochs; full bar is in acceptance

    def test_zero_epochs_returns_init(self, splits):
        train, val, _ = splits
        result = train_regression(train, val, MODEL, replace(STAGE, epochs=0), seed=1)
        assert result.history == []
        fresh = train_regression(train, val, MODEL, replace(STAGE, epochs=0), seed=1)
        for k, v in result.net.param_arrays().items():
            assert np.array_equal(v, fresh.net.param_arrays()[k])

    def test_same_seed_identical_weights(self, splits):
        train, val, _ = splits
        cfg = replace(STAGE, epochs=2)
        a = train_regression(train, val, MODEL, cfg, seed=3)
        b = train_regression(train, val, MODEL, cfg, seed=3)
        for k, v in a.net.param_arrays().items():
            assert np.array_equal(v, b.net.param_arrays()[k])

    def test_different_seed_differs(self, splits):
        train, val, _ = splits
        cfg = replace(STAGE, epochs=1)
        a = train_regression(train, val, MODEL, cfg, seed=4)
        b = train_regression(train, val, MODEL, cfg, seed=5)
        assert any(
            not np.array_equal(v, b.net.param_arrays()[k])
            for k, v in a.net.param_arrays().items()
        )

    def test_nan_features_abort(self, splits):
        train, val, _ = splits
        bad = Corpus(
            [
                Utterance(
                    id=u.id, speaker_id=u.speaker_id,
                    features=np.full_like(u.features, np.nan), label=u.label,
                )
                for u in train
            ],
            name="bad",
        )
        with pytest.raises(TrainingDivergedError):
            train_regression(bad, val, MODEL, replace(STAGE, epochs=1), seed=0)

    def test_history_records_epochs(self, stage1):
        assert [h["epoch"] for h in stage1.history] == list(range(STAGE.epochs))
        assert all("train_loss" in h and "val_srcc" in h for h in stage1.history)

    def test_train_stage1_wrapper_matches_direct_call(self, splits):
        from sevreg.pipeline import train_stage1

        train, val, _ = splits
        cfg = small_cfg(stage1=replace(STAGE, epochs=1), seed=6)
        a = train_stage1(train, val, cfg)
        b = train_regression(train, val, MODEL, replace(STAGE, epochs=1), seed=6)
        for k, v in a.net.param_arrays().items():
            assert np.array_equal(v, b.net.param_arrays()[k])


class TestPredict:
    def test_repeated_calls_identical(self, stage1, splits):
        _, _, test = splits
        assert np.array_equal(predict(stage1.net, test), predict(stage1.net, test))

    def test_outputs_clamped(self, stage1, world):
        scores = predict(stage1.net, world["shifted_test"])
        assert scores.min() >= 1.0 and scores.max() <= 7.0

    def test_srcc_consistent_with_evaluate(self, stage1, splits):
        _, _, test = splits
        from sevreg.evaluation import srcc

        scores = predict(stage1.net, test)
        report = evaluate(stage1.net, test, level="utterance")
        assert report.srcc == pytest.approx(srcc(scores, test.labels()), abs=1e-15)


class TestPseudoLabel:
    def test_provenance_and_range(self, stage1, world):
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        assert all(u.provenance == "pseudo" for u in pseudo)
        labels = pseudo.labels()
        assert labels.min() >= 1.0 and labels.max() <= 7.0

    def test_source_untouched_and_idempotent(self, stage1, world):
        a = pseudo_label(stage1.net, world["unlabeled"])
        assert all(u.label is None for u in world["unlabeled"])
        b = pseudo_label(stage1.net, world["unlabeled"])
        assert np.array_equal(a.labels(), b.labels())

    def test_rejects_labeled_corpus(self, stage1, splits):
        train, _, _ = splits
        with pytest.raises(ParameterError):
            pseudo_label(stage1.net, train)

    def test_histogram_skewed_toward_training_mode(self, stage1, world, splits):
        train, _, _ = splits
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        train_hist = label_histogram(train)
        pseudo_hist = label_histogram(pseudo)
        train_mode = max(train_hist, key=train_hist.get)
        pseudo_mode = max(pseudo_hist, key=pseudo_hist.get)
        assert abs(pseudo_mode - train_mode) <= 1


class TestStage2Corpus:
    def test_counts(self, stage1, world, splits):
        train, _, _ = splits
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        merged = build_stage2_corpus(train, pseudo, world["typical"])
        counts = merged.counts()
        assert counts["labeled"] == len(train)
        assert counts["pseudo"] == len(pseudo)
        assert counts["typical"] == len(world["typical"])
        assert len(merged) == sum(counts.values())

    def test_omitting_pools(self, world, splits):
        train, _, _ = splits
        wo_typical = build_stage2_corpus(train, None, None)
        assert wo_typical.counts()["typical"] == 0
        wo_pseudo = build_stage2_corpus(train, None, world["typical"])
        assert wo_pseudo.counts()["pseudo"] == 0

    def test_duplicate_ids_rejected(self, splits):
        train, _, _ = splits
        from sevreg.errors import MergeError

        with pytest.raises(MergeError):
            build_stage2_corpus(train, Corpus(list(train.utterances), "dup"), None)

    def test_typical_label_enforced(self, splits):
        train, val, _ = splits
        with pytest.raises(ParameterError):
            build_stage2_corpus(train, None, val)


@pytest.fixture(scope="module")
def stage2_ckpt(stage1, world, splits):
    train, _, _ = splits
    pseudo = pseudo_label(stage1.net, world["unlabeled"])
    mixed = build_stage2_corpus(train, pseudo, world["typical"])
    result = train_stage2(mixed, MODEL, STAGE2, seed=0, strategy="coarse")
    return checkpoint_from_net(result.net, "stage2", {"small": True}), mixed


class TestStage2:
    def test_runs_exact_epochs(self, stage2_ckpt):
        pass  # construction succeeding is the check; epochs asserted below

    def test_history_length(self, stage1, world, splits):
        train, _, _ = splits
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        mixed = build_stage2_corpus(train, pseudo, None)
        result = train_stage2(mixed, MODEL, replace(STAGE2, epochs=1), 0, "dis")
        assert len(result.history) == 1

    def test_deterministic(self, stage1, world, splits):
        train, _, _ = splits
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        mixed = build_stage2_corpus(train, pseudo, world["typical"])
        a = train_stage2(mixed, MODEL, replace(STAGE2, epochs=1), 7, "coarse")
        b = train_stage2(mixed, MODEL, replace(STAGE2, epochs=1), 7, "coarse")
        for k, v in a.net.param_arrays().items():
            assert np.array_equal(v, b.net.param_arrays()[k])

    def test_simclr_runs_without_labels(self, world, splits):
        train, _, _ = splits
        mixed = build_stage2_corpus(train, world["unlabeled"], world["typical"])
        result = train_stage2(mixed, MODEL, replace(STAGE2, epochs=1), 0, "simclr")
        assert len(result.history) == 1

    def test_labeled_required_for_weak_supervision(self, world, splits):
        train, _, _ = splits
        mixed = build_stage2_corpus(train, world["unlabeled"], None)
        with pytest.raises(ParameterError):
            train_stage2(mixed, MODEL, STAGE2, 0, "coarse")

    def test_variance_reg_spreads_embeddings(self, stage2_ckpt, world):
        # paired same-seed comparison against a var_weight=0 run; thresholds
        # frozen from an oracle run (reg'd/unreg'd std means 0.067 vs 0.044
        # at d=16, 0.032 vs 0.009 at d=128)
        ckpt, mixed = stage2_ckpt
        reg_net = net_from_checkpoint(ckpt)
        unreg = train_stage2(
            mixed, MODEL, replace(STAGE2, var_weight=0.0), seed=0, strategy="coarse"
        )
        from sevreg.data import normalize_frames

        held_out = [
            normalize_frames(u.features)
            for u in world["shifted_test"].utterances[:64]
        ]
        reg_stds = forward_batch(reg_net, held_out).out.std(axis=0)
        unreg_stds = forward_batch(unreg.net, held_out).out.std(axis=0)
        assert reg_stds.mean() >= 1.1 * unreg_stds.mean()
        assert reg_stds.min() >= unreg_stds.min()
        assert reg_stds.min() > 0.01  # no collapsed dimension

    def test_typical_fraction_quota(self, stage1, world, splits):
        train, _, _ = splits
        pseudo = pseudo_label(stage1.net, world["unlabeled"])
        mixed = build_stage2_corpus(train, pseudo, world["typical"])
        cfg = replace(STAGE2, epochs=1, typical_fraction=0.25)
        result = train_stage2(mixed, MODEL, cfg, 0, "coarse")
        assert len(result.history) == 1


class TestStage3:
    def test_transfer_then_zero_epochs_keeps_trunk(self, stage2_ckpt, splits):
        ckpt, _ = stage2_ckpt
        train, val, _ = splits
        cfg = small_cfg(stage3=replace(STAGE, epochs=0))
        result = train_stage3(train, val, cfg, ckpt, seed=0)
        arrays = result.net.param_arrays()
        for key in ("adaptor1.weight", "adaptor1.bias", "adaptor2.weight", "adaptor2.bias"):
            assert np.array_equal(arrays[key], ckpt.params[key])
        # the fresh head comes from the stage-1 seed stream, not the checkpoint
        fresh = train_regression(train, val, MODEL, replace(STAGE, epochs=0), seed=0)
        assert np.array_equal(arrays["head.weight"], fresh.net.param_arrays()["head.weight"])

    def test_no_checkpoint_equals_stage1_bit_for_bit(self, splits):
        train, val, _ = splits
        cfg = small_cfg()
        a = train_stage3(train, val, cfg, None, seed=2)
        b = train_regression(train, val, MODEL, STAGE, seed=2)
        for k, v in a.net.param_arrays().items():
            assert np.array_equal(v, b.net.param_arrays()[k])

    def test_untrained_stage2_checkpoint_degenerates_to_stage1(self, splits):
        # transferring from a projector that never trained is just another
        # random trunk init; training must proceed normally
        from sevreg.nn import build_net

        train, val, _ = splits
        untrained = build_net(
            feat_dim=SMALL_WORLD.feat_dim, seed_or_rng=99,
            hidden_dim=MODEL.hidden_dim, out_dim=MODEL.embed_dim,
            normalize_output=True,
        )
        ckpt = checkpoint_from_net(untrained, "stage2", {})
        result = train_stage3(train, val, small_cfg(), ckpt, seed=0)
        assert len(result.history) == STAGE.epochs
        report = evaluate(result.net, val, level="utterance")
        assert not report.flagged

    def test_wrong_feature_dim_fails(self, stage2_ckpt):
        ckpt, _ = stage2_ckpt
        wrong = WorldConfig(
            feat_dim=6, signal_dims=3, nuisance_dims=2, n_labeled=40,
            n_unlabeled=10, n_typical=10, n_shifted_test=10,
            labeled_speakers=6, unlabeled_speakers=2, typical_speakers=2,
            shifted_speakers=2, t_range=(4, 6),
        )
        w = build_world(wrong)
        train, val, _ = split_labeled(w["labeled"], wrong)
        cfg = small_cfg()
        cfg.data.world = wrong
        with pytest.raises(TransferError) as err:
            train_stage3(train, val, cfg, ckpt, seed=0)
        assert "adaptor1.weight" in err.value.layers


class TestCheckpointIO:
    def test_round_trip_bit_exact(self, stage1, tmp_path):
        ckpt = checkpoint_from_net(stage1.net, "stage1", {"lr": 1e-4}, {"srcc": 0.9})
        path = tmp_path / "m.dsqc"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert loaded.meta == ckpt.meta
        for k, v in ckpt.params.items():
            assert np.array_equal(v, loaded.params[k])

    def test_rewrite_identical_bytes(self, stage1, tmp_path):
        ckpt = checkpoint_from_net(stage1.net, "stage1", {})
        p1, p2 = tmp_path / "a.dsqc", tmp_path / "b.dsqc"
        save_checkpoint(p1, ckpt)
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dsqc"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(FeatureFormatError):
            load_checkpoint(path)

    def test_config_snapshot_preserved(self, stage1, tmp_path):
        snapshot = {"stage1": {"lr": 1e-4, "epochs": 4}, "strategy": "baseline"}
        ckpt = checkpoint_from_net(stage1.net, "stage1", snapshot)
        path = tmp_path / "c.dsqc"
        save_checkpoint(path, ckpt)
        assert load_checkpoint(path).meta["config"] == snapshot

    def test_net_round_trip_predicts_identically(self, stage1, splits, tmp_path):
        _, _, test = splits
        path = tmp_path / "m.dsqc"
        save_checkpoint(path, checkpoint_from_net(stage1.net, "stage1", {}))
        net = net_from_checkpoint(load_checkpoint(path))
        assert np.array_equal(predict(net, test), predict(stage1.net, test))


class TestStrategySelectors:
    @pytest.mark.parametrize("strategy", ["baseline", "simclr", "dis", "con", "coarse"])
    def test_every_strategy_runs_end_to_end(self, world, strategy):
        from sevreg.experiments import run_single

        cfg = small_cfg(
            strategy=strategy,
            stage1=replace(STAGE, epochs=2),
            stage3=replace(STAGE, epochs=2),
            stage2=replace(STAGE2, epochs=1),
        )
        result = run_single(cfg, world, seed=0)
        assert {(r["dataset"], r["level"]) for r in result["rows"]} == {
            ("test", "utterance"),
            ("shifted_test", "speaker"),
        }
        assert all(r["strategy"] == strategy for r in result["rows"])


class TestDumpEmbeddings:
    def test_dump_shape_and_determinism(self, stage1, splits, tmp_path):
        _, _, test = splits
        p1, p2 = tmp_path / "a.dsqe", tmp_path / "b.dsqe"
        dump_embeddings(stage1.net, test, p1)
        dump_embeddings(stage1.net, test, p2)
        vecs, labels, provs = read_embeddings(p1)
        assert vecs.shape == (len(test), 2 * MODEL.hidden_dim)
        assert len(provs) == len(test)
        assert p1.read_bytes() == p2.read_bytes()
