import math
from pathlib import Path

import numpy as np
import pytest

from rotgate import jsonio
from rotgate.data import (
    ToyBackbone,
    derive_seed,
    extract_feature_matrix,
    extract_features,
    generate_dataset,
    mirror_observation,
    pair_observations,
    split_identities,
)
from rotgate.errors import InvalidConfigError, ShapeMismatchError
from rotgate.gating import PoseAngles, mirror_pose

GOLDEN = Path(__file__).parent / "data" / "golden_feature.json"


class TestGenerateDataset:
    def test_observation_counts(self):
        ds = generate_dataset(2, 2, math.pi / 4, 0.0, seed=1)
        assert len(ds.observations) == 4
        assert sum(o.is_frontal() for o in ds.observations) == 2

    def test_noiseless_points_are_exactly_rotated_landmarks(self):
        ds = generate_dataset(3, 4, math.pi / 2, 0.0, seed=2)
        by_id = {ident.id: ident for ident in ds.identities}
        for obs in ds.observations:
            expected = by_id[obs.identity_id].landmarks @ obs.rotation.T
            assert np.array_equal(obs.points, expected)

    def test_same_seed_gives_identical_datasets(self):
        a = generate_dataset(5, 3, 1.0, 0.05, seed=33)
        b = generate_dataset(5, 3, 1.0, 0.05, seed=33)
        assert len(a.observations) == len(b.observations)
        for oa, ob in zip(a.observations, b.observations):
            assert oa.pose == ob.pose
            assert np.array_equal(oa.points, ob.points)

    def test_different_seed_differs(self):
        a = generate_dataset(5, 3, 1.0, 0.05, seed=33)
        b = generate_dataset(5, 3, 1.0, 0.05, seed=34)
        assert not np.array_equal(a.observations[1].points, b.observations[1].points)

    def test_landmark_normalization(self):
        ds = generate_dataset(4, 2, 1.0, 0.0, seed=3)
        for ident in ds.identities:
            centroid = ident.landmarks.mean(axis=0)
            assert np.max(np.abs(centroid)) <= 1e-12
            rms = math.sqrt(float(np.mean(np.sum(ident.landmarks**2, axis=1))))
            assert abs(rms - 1.0) <= 1e-12

    def test_pose_ranges_respected(self):
        ds = generate_dataset(10, 5, 0.3, 0.0, seed=4, pitch_range=0.1)
        for obs in ds.observations:
            assert abs(obs.pose.yaw) <= 0.3
            assert abs(obs.pose.pitch) <= 0.1
            assert obs.pose.roll == 0.0

    def test_invalid_configs_rejected(self):
        with pytest.raises(InvalidConfigError):
            generate_dataset(1, 2, 1.0, 0.0, seed=0)
        with pytest.raises(InvalidConfigError):
            generate_dataset(2, 2, 0.0, 0.0, seed=0)
        with pytest.raises(InvalidConfigError):
            generate_dataset(2, 2, 2.0, 0.0, seed=0)
        with pytest.raises(InvalidConfigError):
            generate_dataset(2, 2, 1.0, -0.1, seed=0)
        with pytest.raises(InvalidConfigError):
            generate_dataset(2, 2, 1.0, 0.0, seed=0, anisotropy=(0.0, 1.0, 1.0))

    def test_flip_augment_adds_mirrored_twins(self):
        plain = generate_dataset(3, 4, 1.0, 0.02, seed=5)
        flipped = generate_dataset(3, 4, 1.0, 0.02, seed=5, flip_augment=True)
        # 1 frontal + 3 posed -> 1 frontal + 6 posed per identity.
        assert len(flipped.observations) == len(plain.observations) + 3 * 3
        posed = [o for o in flipped.observations if not o.is_frontal()]
        for source, twin in zip(posed[0::2], posed[1::2]):
            assert twin.pose == mirror_pose(source.pose)
            assert np.array_equal(twin.noise, source.noise)

    def test_mirror_observation_reuses_noise(self):
        ds = generate_dataset(2, 3, 1.0, 0.05, seed=6)
        ident = ds.identities[0]
        obs = [o for o in ds.observations if o.identity_id == ident.id and not o.is_frontal()][0]
        twin = mirror_observation(obs, ident)
        assert twin.pose == mirror_pose(obs.pose)
        expected = ident.landmarks @ twin.rotation.T + obs.noise
        assert np.array_equal(twin.points, expected)


class TestBackboneFeatures:
    def test_identical_observations_give_identical_features(self):
        ds = generate_dataset(3, 3, 1.0, 0.02, seed=7)
        bb = ToyBackbone.create(dim=16, n_landmarks=32, seed=8)
        a = extract_features(bb, ds.observations[2])
        b = extract_features(bb, ds.observations[2])
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        ds = generate_dataset(3, 3, 1.0, 0.02, seed=9)
        bb = ToyBackbone.create(dim=16, n_landmarks=32, seed=10)
        for obs in ds.observations:
            assert abs(np.linalg.norm(extract_features(bb, obs)) - 1.0) <= 1e-12

    def test_matrix_matches_single(self):
        ds = generate_dataset(4, 2, 1.0, 0.02, seed=11)
        bb = ToyBackbone.create(dim=8, n_landmarks=32, seed=12)
        stacked = extract_feature_matrix(bb, ds.observations)
        for i, obs in enumerate(ds.observations):
            np.testing.assert_allclose(stacked[i], extract_features(bb, obs), atol=1e-15)

    def test_shape_mismatch(self):
        ds = generate_dataset(2, 2, 1.0, 0.0, seed=13, n_landmarks=16)
        bb = ToyBackbone.create(dim=8, n_landmarks=32, seed=14)
        with pytest.raises(ShapeMismatchError):
            extract_features(bb, ds.observations[0])

    def test_golden_regression(self):
        golden = jsonio.load(GOLDEN)
        ds = generate_dataset(
            n_identities=4,
            obs_per_identity=3,
            pose_range=math.pi / 2,
            noise_sigma=0.02,
            seed=golden["dataset_seed"],
        )
        bb = ToyBackbone.create(
            dim=golden["dim"], n_landmarks=32, seed=golden["backbone_seed"]
        )
        feat = extract_features(bb, ds.observations[golden["observation_index"]])
        assert np.array_equal(feat, np.asarray(golden["feature"]))


class TestSplitsAndPairs:
    def test_split_is_disjoint_and_sized(self):
        ds = generate_dataset(20, 2, 1.0, 0.0, seed=15)
        train_ids, test_ids = split_identities(ds, 0.8)
        assert not set(train_ids) & set(test_ids)
        assert len(train_ids) == 16
        assert len(test_ids) == 4
        assert sorted(train_ids + test_ids) == sorted(ds.identity_ids())

    def test_split_is_deterministic(self):
        ds = generate_dataset(20, 2, 1.0, 0.0, seed=16)
        assert split_identities(ds, 0.8) == split_identities(ds, 0.8)

    def test_split_fraction_validation(self):
        ds = generate_dataset(4, 2, 1.0, 0.0, seed=17)
        with pytest.raises(InvalidConfigError):
            split_identities(ds, 1.0)

    def test_pairing(self):
        ds = generate_dataset(6, 4, 1.0, 0.0, seed=18)
        pairs = pair_observations(ds.observations, [0, 2, 4])
        assert len(pairs) == 9
        for posed, frontal in pairs:
            assert posed.identity_id == frontal.identity_id
            assert frontal.is_frontal()
            assert not posed.is_frontal()


class TestDeriveSeed:
    def test_stability_and_distinctness(self):
        assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
        assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
        assert derive_seed(1, "a") != derive_seed(1, "b")
        assert derive_seed(1, "a") != derive_seed(2, "a")
