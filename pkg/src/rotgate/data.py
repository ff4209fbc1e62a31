"""Synthetic 3D-landmark identities, posed observations, and the toy feature extractor."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfigError, ShapeMismatchError
from .gating import PoseAngles, mirror_pose, pose_to_rotation

DEFAULT_N_LANDMARKS = 32
DEFAULT_IDENTITY_SCALE = 0.1
# Head-like proportions: shallow in depth (x), tall along the yaw axis (z),
# so yaw rotations degrade features strongly but not to chance level.
DEFAULT_ANISOTROPY = (0.6, 1.0, 1.4)


def derive_seed(base_seed: int, *parts) -> int:
    """Stable RNG seed derived from a base seed and a label path."""
    text = "|".join([str(base_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


@dataclass(frozen=True)
class Identity3D:
    """A synthetic identity: centered landmarks with unit RMS radius."""

    id: int
    landmarks: np.ndarray  # (n, 3)


@dataclass(frozen=True)
class Observation:
    """One noisy view of an identity under a head pose.

    ``points = rotation @ landmarks + noise`` by construction; ``noise`` keeps
    the realized draw so exact mirrored views can be rebuilt in memory.
    """

    identity_id: int
    pose: PoseAngles
    rotation: np.ndarray  # (3, 3)
    points: np.ndarray  # (n, 3)
    noise_sigma: float
    noise: Optional[np.ndarray] = None

    def is_frontal(self) -> bool:
        return self.pose == PoseAngles.zero()


@dataclass(frozen=True)
class SynthDataset:
    identities: tuple
    observations: tuple
    seed: int
    params: dict = field(default_factory=dict)

    def observations_of(self, identity_id: int) -> list:
        return [o for o in self.observations if o.identity_id == identity_id]

    def identity_ids(self) -> list:
        return [ident.id for ident in self.identities]


def _make_landmarks(base: np.ndarray, jitter: np.ndarray) -> np.ndarray:
    lm = base + jitter
    lm = lm - lm.mean(axis=0)
    rms = float(np.sqrt(np.mean(np.sum(lm * lm, axis=1))))
    return lm / rms


def _observe(identity: Identity3D, pose: PoseAngles, sigma: float, noise: np.ndarray) -> Observation:
    rotation = pose_to_rotation(pose)
    points = identity.landmarks @ rotation.T + noise
    return Observation(
        identity_id=identity.id,
        pose=pose,
        rotation=rotation,
        points=points,
        noise_sigma=sigma,
        noise=noise,
    )


def mirror_observation(obs: Observation, identity: Identity3D) -> Observation:
    """The flipped-pose view of an observation, reusing its noise draw.

    Only valid in memory where the realized noise is known.
    """
    if obs.noise is None:
        raise ValueError("observation carries no noise realization to mirror")
    return _observe(identity, mirror_pose(obs.pose), obs.noise_sigma, obs.noise)


def generate_dataset(
    n_identities: int,
    obs_per_identity: int,
    pose_range: float,
    noise_sigma: float,
    seed: int,
    *,
    pitch_range: float = 0.0,
    roll_range: float = 0.0,
    flip_augment: bool = False,
    n_landmarks: int = DEFAULT_N_LANDMARKS,
    identity_scale: float = DEFAULT_IDENTITY_SCALE,
    anisotropy=DEFAULT_ANISOTROPY,
) -> SynthDataset:
    """Seeded frontal-profile benchmark data.

    Each identity gets one frontal observation (pose zero) and
    ``obs_per_identity - 1`` posed ones with yaw uniform in
    ``[-pose_range, pose_range]`` (pitch and roll likewise when their ranges
    are nonzero).  With ``flip_augment`` every posed observation also emits its
    mirrored twin built from the same noise draw.
    """
    if n_identities < 2:
        raise InvalidConfigError(f"n_identities must be >= 2, got {n_identities}")
    if obs_per_identity < 1:
        raise InvalidConfigError(f"obs_per_identity must be >= 1, got {obs_per_identity}")
    if not 0.0 < pose_range <= np.pi / 2.0:
        raise InvalidConfigError(f"pose_range must lie in (0, pi/2], got {pose_range!r}")
    for name, rng_val in (("pitch_range", pitch_range), ("roll_range", roll_range)):
        if not 0.0 <= rng_val <= np.pi / 2.0:
            raise InvalidConfigError(f"{name} must lie in [0, pi/2], got {rng_val!r}")
    if noise_sigma < 0.0:
        raise InvalidConfigError(f"noise_sigma must be >= 0, got {noise_sigma!r}")
    if n_landmarks < 1:
        raise InvalidConfigError(f"n_landmarks must be >= 1, got {n_landmarks}")

    scale = np.asarray(anisotropy, dtype=float).reshape(3)
    if np.any(scale <= 0.0):
        raise InvalidConfigError(f"anisotropy must be positive, got {anisotropy!r}")
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n_landmarks, 3)) * scale
    identities = []
    observations = []
    for ident_id in range(n_identities):
        jitter = identity_scale * rng.standard_normal((n_landmarks, 3))
        identity = Identity3D(id=ident_id, landmarks=_make_landmarks(base, jitter))
        identities.append(identity)

        frontal_noise = noise_sigma * rng.standard_normal((n_landmarks, 3))
        observations.append(_observe(identity, PoseAngles.zero(), noise_sigma, frontal_noise))

        for _ in range(obs_per_identity - 1):
            yaw = float(rng.uniform(-pose_range, pose_range))
            pitch = float(rng.uniform(-pitch_range, pitch_range)) if pitch_range > 0.0 else 0.0
            roll = float(rng.uniform(-roll_range, roll_range)) if roll_range > 0.0 else 0.0
            pose = PoseAngles(pitch, yaw, roll)
            noise = noise_sigma * rng.standard_normal((n_landmarks, 3))
            obs = _observe(identity, pose, noise_sigma, noise)
            observations.append(obs)
            if flip_augment:
                observations.append(mirror_observation(obs, identity))

    params = {
        "n_identities": n_identities,
        "obs_per_identity": obs_per_identity,
        "pose_range": pose_range,
        "noise_sigma": noise_sigma,
        "pitch_range": pitch_range,
        "roll_range": roll_range,
        "flip_augment": flip_augment,
        "n_landmarks": n_landmarks,
        "identity_scale": identity_scale,
        "anisotropy": [float(a) for a in scale],
    }
    return SynthDataset(
        identities=tuple(identities),
        observations=tuple(observations),
        seed=seed,
        params=params,
    )


@dataclass(frozen=True)
class ToyBackbone:
    """Seeded fixed projection followed by tanh and unit normalization."""

    projection: np.ndarray  # (dim, 3 * n_landmarks)
    nonlinearity: str = "tanh"
    trainable: bool = False
    seed: int = 0
    gain: float = 1.2

    @classmethod
    def create(
        cls, dim: int, n_landmarks: int, seed: int, gain: float = 1.2
    ) -> "ToyBackbone":
        rng = np.random.default_rng(seed)
        p = rng.standard_normal((dim, 3 * n_landmarks))
        p = p / np.linalg.norm(p, axis=1, keepdims=True)
        return cls(projection=gain * p, seed=seed, gain=gain)

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def with_projection(self, projection: np.ndarray, trainable: bool = True) -> "ToyBackbone":
        return ToyBackbone(
            projection=projection,
            nonlinearity=self.nonlinearity,
            trainable=trainable,
            seed=self.seed,
            gain=self.gain,
        )


def extract_features(backbone: ToyBackbone, obs: Observation) -> np.ndarray:
    """Unit-normalized ``tanh(P flatten(points))`` embedding of one observation."""
    flat = np.asarray(obs.points, dtype=float).reshape(-1)
    if flat.shape[0] != backbone.projection.shape[1]:
        raise ShapeMismatchError(
            f"observation has {flat.shape[0]} coordinates, "
            f"backbone expects {backbone.projection.shape[1]}"
        )
    raw = np.tanh(backbone.projection @ flat)
    return raw / np.linalg.norm(raw)


def extract_feature_matrix(backbone: ToyBackbone, observations: Sequence[Observation]) -> np.ndarray:
    """Stacked features for many observations (rows in input order)."""
    if len(observations) == 0:
        return np.zeros((0, backbone.dim))
    flat = np.stack([np.asarray(o.points, dtype=float).reshape(-1) for o in observations])
    if flat.shape[1] != backbone.projection.shape[1]:
        raise ShapeMismatchError(
            f"observations have {flat.shape[1]} coordinates, "
            f"backbone expects {backbone.projection.shape[1]}"
        )
    raw = np.tanh(flat @ backbone.projection.T)
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def split_identities(dataset: SynthDataset, train_fraction: float = 0.8):
    """Deterministic identity-disjoint train/test split derived from the data seed."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfigError(f"train_fraction must lie in (0, 1), got {train_fraction!r}")
    ids = sorted(dataset.identity_ids())
    rng = np.random.default_rng(derive_seed(dataset.seed, "split"))
    order = rng.permutation(len(ids))
    n_train = max(1, min(len(ids) - 1, int(round(train_fraction * len(ids)))))
    train_ids = sorted(ids[i] for i in order[:n_train])
    test_ids = sorted(ids[i] for i in order[n_train:])
    return train_ids, test_ids


def pair_observations(observations: Sequence[Observation], ids: Sequence[int]):
    """(posed, frontal) observation pairs for the requested identities."""
    wanted = set(ids)
    frontal = {}
    posed = {}
    for obs in observations:
        if obs.identity_id not in wanted:
            continue
        if obs.is_frontal():
            frontal.setdefault(obs.identity_id, obs)
        else:
            posed.setdefault(obs.identity_id, []).append(obs)
    pairs = []
    for ident_id in sorted(wanted):
        if ident_id not in frontal:
            continue
        for obs in posed.get(ident_id, []):
            pairs.append((obs, frontal[ident_id]))
    return pairs
