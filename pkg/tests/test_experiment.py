import math

import numpy as np
import pytest

from rotgate.config import BenchConfig
from rotgate.data import ToyBackbone, generate_dataset, mirror_observation, split_identities
from rotgate.errors import InvalidConfigError
from rotgate.experiment import (
    _feature_pairs,
    evaluate_split,
    parse_arm,
    run_experiment,
    verification_scores,
)
from rotgate.gating import GateKind
from rotgate.metrics import compute_eer
from rotgate.residual import TrainConfig, train_subnet


def small_cfg(**data_overrides):
    cfg = BenchConfig()
    cfg.data.n_identities = 30
    cfg.data.obs_per_identity = 5
    cfg.backbone.dim = 24
    cfg.train.epochs = 40
    cfg.train.lr_schedule = [[30, 10.0]]
    for key, value in data_overrides.items():
        setattr(cfg.data, key, value)
    return cfg


class TestParseArm:
    def test_forms(self):
        assert parse_arm("backbone") == ("backbone", None)
        assert parse_arm("residual") == ("residual", GateKind.ABS_SIN)
        assert parse_arm("residual:linear") == ("residual", GateKind.LINEAR)
        assert parse_arm("end_to_end:identity") == ("end_to_end", GateKind.IDENTITY)

    def test_rejects_unknown(self):
        with pytest.raises(InvalidConfigError):
            parse_arm("warp_drive")
        with pytest.raises(InvalidConfigError):
            parse_arm("residual:cosh")


class TestEvaluateSplit:
    def test_report_shape(self):
        ds = generate_dataset(12, 4, math.pi / 2, 0.02, seed=91, identity_scale=0.25)
        bb = ToyBackbone.create(dim=24, n_landmarks=32, seed=92)
        train_ids, test_ids = split_identities(ds, 0.8)
        report = evaluate_split(ds.observations, test_ids, bb, None)
        assert 0.0 <= report.eer <= 1.0
        assert set(report.tar_at_far) == {0.01, 0.001}
        assert set(report.rank_k) == {1, 5}
        for value in report.tar_at_far.values():
            assert 0.0 <= value <= 1.0
        for value in report.rank_k.values():
            assert 0.0 <= value <= 1.0
        assert report.n_genuine > 0
        assert report.n_impostor > 0
        # Each test identity contributes obs_per_identity - 1 posed probes; every
        # probe scores against the whole frontal gallery.
        n_test = len(test_ids)
        assert report.n_genuine == n_test * 3
        assert report.n_impostor == n_test * 3 * (n_test - 1)
        assert report.verification_accuracy == 1.0 - report.eer

    def test_insufficient_impostors_flagged_for_tight_target(self):
        ds = generate_dataset(6, 3, math.pi / 2, 0.02, seed=93)
        bb = ToyBackbone.create(dim=16, n_landmarks=32, seed=94)
        _, test_ids = split_identities(ds, 0.5)
        report = evaluate_split(
            ds.observations, test_ids, bb, None, far_targets=(0.001,)
        )
        assert 0.001 in report.insufficient_far_targets


class TestGateDegeneracy:
    def test_tiny_pose_range_collapses_to_backbone(self):
        ds = generate_dataset(
            20, 5, pose_range=1e-4, noise_sigma=0.02, seed=95, identity_scale=0.25
        )
        bb = ToyBackbone.create(dim=24, n_landmarks=32, seed=96)
        train_ids, test_ids = split_identities(ds, 0.8)
        pairs = _feature_pairs(ds, bb, train_ids)
        model = train_subnet(
            pairs, TrainConfig(epochs=40, lr_schedule=((30, 10.0),), seed=9), GateKind.ABS_SIN
        )
        g_raw, i_raw, _, _ = verification_scores(ds.observations, test_ids, bb, None)
        g_cor, i_cor, _, _ = verification_scores(ds.observations, test_ids, bb, model)
        assert np.max(np.abs(g_raw - g_cor)) <= 1e-6
        assert np.max(np.abs(i_raw - i_cor)) <= 1e-6
        eer_raw = compute_eer(g_raw, i_raw)
        eer_cor = compute_eer(g_cor, i_cor)
        assert abs(eer_raw - eer_cor) <= 1.0 / min(len(g_raw), 1)


class TestFlipInvariance:
    def test_mirrored_test_set_keeps_abs_sin_eer(self):
        ds = generate_dataset(
            24,
            4,
            math.pi / 2,
            0.02,
            seed=97,
            identity_scale=0.25,
            flip_augment=True,
        )
        bb = ToyBackbone.create(dim=24, n_landmarks=32, seed=98)
        train_ids, test_ids = split_identities(ds, 0.8)
        pairs = _feature_pairs(ds, bb, train_ids)
        model = train_subnet(
            pairs, TrainConfig(epochs=30, lr_schedule=(), seed=11), GateKind.ABS_SIN
        )

        by_id = {ident.id: ident for ident in ds.identities}
        mirrored = tuple(
            mirror_observation(o, by_id[o.identity_id]) for o in ds.observations
        )
        g_a, i_a, _, _ = verification_scores(ds.observations, test_ids, bb, model)
        g_b, i_b, _, _ = verification_scores(mirrored, test_ids, bb, model)
        eer_a = compute_eer(g_a, i_a)
        eer_b = compute_eer(g_b, i_b)
        one_step = max(1.0 / len(g_a), 1.0 / len(i_a))
        assert abs(eer_a - eer_b) <= one_step
        # With flip-augmented data, mirroring permutes the observation multiset,
        # so the score multisets agree exactly.
        assert np.array_equal(np.sort(g_a), np.sort(g_b))
        assert np.array_equal(np.sort(i_a), np.sort(i_b))


class TestRunExperiment:
    def test_smoke_and_pairing(self):
        cfg = small_cfg()
        cfg.experiment.arms = ["backbone", "residual:abs_sin"]
        result = run_experiment(cfg, seeds=range(2))
        assert len(result.rows) == 4
        summary = result.summary()
        assert {entry["arm"] for entry in summary} == {"backbone", "residual"}
        for row in result.rows:
            assert 0.0 <= row.report.eer <= 1.0
        backbone_rows = result.rows_for("backbone")
        residual_rows = result.rows_for("residual", GateKind.ABS_SIN)
        assert len(backbone_rows) == len(residual_rows) == 2
        for bb_row, res_row in zip(backbone_rows, residual_rows):
            assert bb_row.seed == res_row.seed

    def test_residual_beats_backbone_on_small_benchmark(self):
        cfg = small_cfg(identity_scale=0.25, noise_sigma=0.03)
        cfg.experiment.arms = ["backbone", "residual:abs_sin"]
        result = run_experiment(cfg, seeds=range(2))
        for bb_row, res_row in zip(
            result.rows_for("backbone"), result.rows_for("residual")
        ):
            assert res_row.report.eer < bb_row.report.eer

    def test_reports_carry_arm_snapshot(self):
        cfg = small_cfg()
        cfg.experiment.arms = ["residual:linear"]
        result = run_experiment(cfg, seeds=[0])
        assert result.rows[0].report.config["arm"] == "residual"
        assert result.rows[0].report.config["gate"] == "linear"
