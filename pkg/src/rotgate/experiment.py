"""Benchmark arms, train/eval orchestration, and seed sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import BenchConfig
from .data import (
    SynthDataset,
    ToyBackbone,
    derive_seed,
    extract_feature_matrix,
    generate_dataset,
    pair_observations,
    split_identities,
)
from .errors import InvalidConfigError
from .gating import GateKind
from .metrics import compute_eer, compute_tar_at_far, cosine_scores, identification_rank_k
from .residual import TrainConfig, TrainedModel, frontalize, train_end_to_end, train_subnet

ARM_BACKBONE = "backbone"
ARM_RESIDUAL = "residual"
ARM_END_TO_END = "end_to_end"


@dataclass(frozen=True)
class EvalReport:
    """Verification/identification summary on one held-out split."""

    eer: float
    tar_at_far: dict
    rank_k: dict
    n_genuine: int
    n_impostor: int
    insufficient_far_targets: tuple = ()
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "eer": self.eer,
            "tar_at_far": {str(k): v for k, v in self.tar_at_far.items()},
            "rank_k": {str(k): v for k, v in self.rank_k.items()},
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "insufficient_far_targets": list(self.insufficient_far_targets),
            "config": self.config,
        }

    @property
    def verification_accuracy(self) -> float:
        return 1.0 - self.eer


def parse_arm(spec: str):
    """Split an arm spec like ``residual:abs_sin`` into (arm, gate)."""
    name, _, gate_name = spec.partition(":")
    if name not in (ARM_BACKBONE, ARM_RESIDUAL, ARM_END_TO_END):
        raise InvalidConfigError(f"unknown experiment arm {name!r}")
    if name == ARM_BACKBONE:
        return name, None
    gate_name = gate_name or GateKind.ABS_SIN.value
    try:
        return name, GateKind(gate_name)
    except ValueError:
        raise InvalidConfigError(f"unknown gate kind {gate_name!r} in arm {spec!r}") from None


def verification_scores(
    observations: Sequence,
    ids: Sequence[int],
    backbone: ToyBackbone,
    model: Optional[TrainedModel] = None,
):
    """Genuine and impostor cosine scores for frontal-gallery verification.

    The frontal observation of each identity forms the gallery; every posed
    observation becomes a probe, corrected by ``model`` when one is given.
    Returns ``(genuine, impostor, probe_entries, gallery_entries)`` where the
    entry lists pair identity ids with feature vectors.
    """
    wanted = set(ids)
    frontals = {}
    probes = []
    for obs in observations:
        if obs.identity_id not in wanted:
            continue
        if obs.is_frontal():
            frontals.setdefault(obs.identity_id, obs)
        else:
            probes.append(obs)
    gallery_obs = [frontals[i] for i in sorted(frontals)]
    gallery_feats = extract_feature_matrix(backbone, gallery_obs)
    probe_feats = extract_feature_matrix(backbone, probes)
    if model is not None:
        probe_feats = np.stack(
            [frontalize(model, probe_feats[i], probes[i].pose) for i in range(len(probes))]
        )

    sims = cosine_scores(probe_feats, gallery_feats)
    gallery_ids = np.array([o.identity_id for o in gallery_obs])
    probe_ids = np.array([o.identity_id for o in probes])
    genuine_mask = probe_ids[:, None] == gallery_ids[None, :]
    genuine = sims[genuine_mask]
    impostor = sims[~genuine_mask]

    probe_entries = [(int(probe_ids[i]), probe_feats[i]) for i in range(len(probes))]
    gallery_entries = [(int(gallery_ids[j]), gallery_feats[j]) for j in range(len(gallery_obs))]
    return genuine, impostor, probe_entries, gallery_entries


def evaluate_split(
    observations: Sequence,
    ids: Sequence[int],
    backbone: ToyBackbone,
    model: Optional[TrainedModel],
    far_targets: Sequence[float] = (0.01, 0.001),
    rank_ks: Sequence[int] = (1, 5),
    config: Optional[dict] = None,
) -> EvalReport:
    """Full EvalReport for one identity split."""
    genuine, impostor, probe_entries, gallery_entries = verification_scores(
        observations, ids, backbone, model
    )
    eer = compute_eer(genuine, impostor)
    tar = compute_tar_at_far(genuine, impostor, far_targets)
    rank = {int(k): identification_rank_k(probe_entries, gallery_entries, k) for k in rank_ks}
    return EvalReport(
        eer=eer,
        tar_at_far={float(t): entry.tar for t, entry in tar.items()},
        rank_k=rank,
        n_genuine=int(genuine.size),
        n_impostor=int(impostor.size),
        insufficient_far_targets=tuple(
            float(t) for t, entry in tar.items() if entry.insufficient_impostors
        ),
        config=config or {},
    )


@dataclass(frozen=True)
class ArmResult:
    arm: str
    gate: Optional[GateKind]
    seed: int
    report: EvalReport

    @property
    def gate_name(self) -> str:
        return self.gate.value if self.gate is not None else "none"


@dataclass
class ExperimentResult:
    rows: list

    def rows_for(self, arm: str, gate: Optional[GateKind] = None):
        return [
            r
            for r in self.rows
            if r.arm == arm and (gate is None or r.gate == gate)
        ]

    def summary(self) -> list:
        """(arm, gate, n, mean EER, mean accuracy, mean rank-1) per arm."""
        keys = []
        for row in self.rows:
            key = (row.arm, row.gate_name)
            if key not in keys:
                keys.append(key)
        table = []
        for arm, gate_name in keys:
            reports = [
                r.report for r in self.rows if (r.arm, r.gate_name) == (arm, gate_name)
            ]
            eers = [r.eer for r in reports]
            rank1 = [r.rank_k.get(1, float("nan")) for r in reports]
            table.append(
                {
                    "arm": arm,
                    "gate": gate_name,
                    "n_seeds": len(reports),
                    "mean_eer": float(np.mean(eers)),
                    "mean_accuracy": float(np.mean([1.0 - e for e in eers])),
                    "mean_rank1": float(np.mean(rank1)),
                }
            )
        return table


def _materialize(cfg: BenchConfig, replica_seed: int):
    data_seed = derive_seed(replica_seed, "data")
    dataset = generate_dataset(
        n_identities=cfg.data.n_identities,
        obs_per_identity=cfg.data.obs_per_identity,
        pose_range=cfg.data.pose_range,
        noise_sigma=cfg.data.noise_sigma,
        seed=data_seed,
        pitch_range=cfg.data.pitch_range,
        roll_range=cfg.data.roll_range,
        flip_augment=cfg.data.flip_augment,
        n_landmarks=cfg.data.n_landmarks,
        identity_scale=cfg.data.identity_scale,
        anisotropy=cfg.data.anisotropy,
    )
    backbone = ToyBackbone.create(
        dim=cfg.backbone.dim,
        n_landmarks=cfg.data.n_landmarks,
        seed=derive_seed(replica_seed, "backbone"),
        gain=cfg.backbone.gain,
    )
    train_ids, test_ids = split_identities(dataset, cfg.data.train_fraction)
    return dataset, backbone, train_ids, test_ids


def train_config_from(cfg: BenchConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=cfg.train.lr,
        momentum=cfg.train.momentum,
        weight_decay=cfg.train.weight_decay,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr_schedule=tuple((int(e), float(d)) for e, d in cfg.train.lr_schedule),
        seed=seed,
        loss_form=cfg.train.loss_form,
    )


def run_arm(
    arm: str,
    gate: Optional[GateKind],
    cfg: BenchConfig,
    dataset: SynthDataset,
    backbone: ToyBackbone,
    train_ids: Sequence[int],
    test_ids: Sequence[int],
    replica: int,
) -> ArmResult:
    """Train (if the arm needs it) and evaluate on the held-out identities."""
    assert not set(train_ids) & set(test_ids), "train/test identities overlap"
    train_cfg = train_config_from(
        cfg, derive_seed(cfg.seed, "train", arm, gate.value if gate else "-", replica)
    )
    snapshot = {"arm": arm, "gate": gate.value if gate else "none", "replica": replica}

    model = None
    eval_backbone = backbone
    if arm == ARM_RESIDUAL:
        pairs = _feature_pairs(dataset, backbone, train_ids)
        model = train_subnet(pairs, train_cfg, gate)
    elif arm == ARM_END_TO_END:
        eval_backbone, model = train_end_to_end(
            dataset,
            backbone,
            train_cfg,
            gate,
            train_ids=train_ids,
            backbone_lr_factor=cfg.experiment.backbone_lr_factor,
        )
    report = evaluate_split(
        dataset.observations,
        test_ids,
        eval_backbone,
        model,
        far_targets=cfg.eval.far_targets,
        rank_ks=cfg.eval.rank_ks,
        config=snapshot,
    )
    return ArmResult(arm=arm, gate=gate, seed=replica, report=report)


def _feature_pairs(dataset: SynthDataset, backbone: ToyBackbone, ids: Sequence[int]):
    obs_pairs = pair_observations(dataset.observations, ids)
    profile_feats = extract_feature_matrix(backbone, [p[0] for p in obs_pairs])
    frontal_feats = extract_feature_matrix(backbone, [p[1] for p in obs_pairs])
    return [
        (profile_feats[i], frontal_feats[i], obs_pairs[i][0].pose)
        for i in range(len(obs_pairs))
    ]


def run_experiment(cfg: BenchConfig, seeds: Sequence[int]) -> ExperimentResult:
    """Run every configured arm over the seed replicas.

    Within one replica all arms share the dataset, split and initial backbone,
    so per-seed comparisons are paired; training streams stay arm-specific.
    """
    arms = [parse_arm(spec) for spec in cfg.experiment.arms]
    rows = []
    for replica in seeds:
        replica_seed = derive_seed(cfg.seed, "replica", replica)
        dataset, backbone, train_ids, test_ids = _materialize(cfg, replica_seed)
        for arm, gate in arms:
            rows.append(
                run_arm(arm, gate, cfg, dataset, backbone, train_ids, test_ids, replica)
            )
    return ExperimentResult(rows=rows)
