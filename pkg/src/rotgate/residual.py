"""Gated residual correction subnet and its manual-backprop training.

The subnet is two fully-connected layers with a PReLU between them.  It reads
a feature vector concatenated with the rotation vector of the pose, and its
output is added to the feature, scaled by the pose gate:

    corrected = feature + gate(pose) * subnet(concat(feature, phi(pose)))

Training minimizes the squared distance between corrected profile features and
their frontal counterparts with SGD (momentum + weight decay on the weight
matrices), fully deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import jsonio
from .data import ToyBackbone, extract_feature_matrix, pair_observations
from .errors import EmptyDatasetError, NonFiniteLossError, ShapeMismatchError
from .gating import GateKind, PoseAngles, gate, pose_to_phi

MODEL_FORMAT_VERSION = 1
_PRELU_INIT_SLOPE = 0.25


def prelu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0.0, z, slope * z)


@dataclass
class SubnetParams:
    """Weights of the two-layer correction subnet.

    The first layer reads ``concat(feature, phi)``; the hidden width defaults
    to the feature dimension.  The output layer starts at zero so an untrained
    subnet leaves features untouched.
    """

    w1: np.ndarray  # (hidden, dim + 3)
    b1: np.ndarray  # (hidden,)
    a1: float  # PReLU slope
    w2: np.ndarray  # (dim, hidden)
    b2: np.ndarray  # (dim,)

    @property
    def dim(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, dim: int, seed: int, hidden: Optional[int] = None) -> "SubnetParams":
        hidden = dim if hidden is None else hidden
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (hidden + dim + 3))
        w1 = rng.uniform(-bound, bound, size=(hidden, dim + 3))
        return cls(
            w1=w1,
            b1=np.zeros(hidden),
            a1=_PRELU_INIT_SLOPE,
            w2=np.zeros((dim, hidden)),
            b2=np.zeros(dim),
        )

    def copy(self) -> "SubnetParams":
        return SubnetParams(
            self.w1.copy(), self.b1.copy(), float(self.a1), self.w2.copy(), self.b2.copy()
        )


@dataclass
class TrainConfig:
    """SGD hyperparameters; ``lr_schedule`` divides the rate at epoch boundaries."""

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 64
    lr_schedule: tuple = ((120, 10.0), (170, 10.0))
    seed: int = 0
    loss_form: str = "forward"  # "forward" or "inverse"

    def validate(self) -> None:
        if not self.lr > 0.0:
            raise ValueError(f"lr must be positive, got {self.lr!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum!r}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size!r}")
        if self.loss_form not in ("forward", "inverse"):
            raise ValueError(f"loss_form must be 'forward' or 'inverse', got {self.loss_form!r}")

    def snapshot(self) -> dict:
        return {
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_schedule": [[int(e), float(d)] for e, d in self.lr_schedule],
            "seed": self.seed,
            "loss_form": self.loss_form,
        }


@dataclass
class TrainedModel:
    """Frozen subnet plus its gate kind, training curve and config snapshot."""

    params: SubnetParams
    gate_kind: GateKind
    loss_history: list
    config: dict = field(default_factory=dict)
    backbone: Optional[ToyBackbone] = None

    def to_json_dict(self) -> dict:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "dim": self.params.dim,
            "hidden": self.params.hidden,
            "gate_kind": self.gate_kind.value,
            "w1": [list(map(float, row)) for row in self.params.w1],
            "b1": list(map(float, self.params.b1)),
            "a1": float(self.params.a1),
            "w2": [list(map(float, row)) for row in self.params.w2],
            "b2": list(map(float, self.params.b2)),
            "loss_history": [float(x) for x in self.loss_history],
            "config": self.config,
        }
        if self.backbone is not None:
            doc["backbone"] = {
                "projection": [list(map(float, row)) for row in self.backbone.projection],
                "nonlinearity": self.backbone.nonlinearity,
                "trainable": self.backbone.trainable,
                "seed": self.backbone.seed,
                "gain": self.backbone.gain,
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainedModel":
        version = doc.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        params = SubnetParams(
            w1=np.asarray(doc["w1"], dtype=float),
            b1=np.asarray(doc["b1"], dtype=float),
            a1=float(doc["a1"]),
            w2=np.asarray(doc["w2"], dtype=float),
            b2=np.asarray(doc["b2"], dtype=float),
        )
        backbone = None
        if "backbone" in doc:
            bb = doc["backbone"]
            backbone = ToyBackbone(
                projection=np.asarray(bb["projection"], dtype=float),
                nonlinearity=bb["nonlinearity"],
                trainable=bool(bb["trainable"]),
                seed=int(bb["seed"]),
                gain=float(bb["gain"]),
            )
        return cls(
            params=params,
            gate_kind=GateKind(doc["gate_kind"]),
            loss_history=[float(x) for x in doc["loss_history"]],
            config=doc.get("config", {}),
            backbone=backbone,
        )

    def save(self, path) -> None:
        jsonio.dump(self.to_json_dict(), path)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_json_dict(jsonio.load(path))


def _check_shapes(params: SubnetParams, feat: np.ndarray, phi: np.ndarray) -> None:
    if feat.shape[-1] != params.dim:
        raise ShapeMismatchError(
            f"feature has dimension {feat.shape[-1]}, subnet expects {params.dim}"
        )
    if phi.shape[-1] != 3:
        raise ShapeMismatchError(f"rotation vector must have 3 components, got {phi.shape[-1]}")
    if params.w1.shape[1] != params.dim + 3:
        raise ShapeMismatchError(
            f"w1 has {params.w1.shape[1]} inputs, expected dim + 3 = {params.dim + 3}"
        )
    if params.w2.shape[1] != params.hidden:
        raise ShapeMismatchError(
            f"w2 has {params.w2.shape[1]} inputs, expected hidden = {params.hidden}"
        )


def _forward_batch(params: SubnetParams, feat: np.ndarray, phi: np.ndarray):
    x = np.concatenate([feat, phi], axis=1)
    z1 = x @ params.w1.T + params.b1
    h = prelu(z1, params.a1)
    out = h @ params.w2.T + params.b2
    return x, z1, h, out


def residual_forward(params: SubnetParams, feat, phi) -> np.ndarray:
    """Subnet output ``w2 prelu(w1 concat(feat, phi) + b1) + b2`` for one feature."""
    feat = np.asarray(feat, dtype=float).reshape(1, -1)
    phi = np.asarray(phi, dtype=float).reshape(1, -1)
    _check_shapes(params, feat, phi)
    _, _, _, out = _forward_batch(params, feat, phi)
    return out[0]


def frontalize(model: TrainedModel, feat_profile, pose: PoseAngles) -> np.ndarray:
    """Gated additive correction of a profile feature toward its frontal form.

    A zero gate returns the input bitwise unchanged.
    """
    feat = np.asarray(feat_profile, dtype=float)
    omega = gate(model.gate_kind, pose)
    if omega == 0.0:
        return feat.copy()
    correction = residual_forward(model.params, feat, pose_to_phi(pose))
    return feat + omega * correction


@dataclass
class SubnetGrads:
    w1: np.ndarray
    b1: np.ndarray
    a1: float
    w2: np.ndarray
    b2: np.ndarray


def subnet_loss_and_grads(
    params: SubnetParams,
    feat: np.ndarray,
    phi: np.ndarray,
    target: np.ndarray,
    omega: np.ndarray,
):
    """Batch-mean squared correction error and its exact parameter gradients.

    Loss for one pair is ``||feat + omega * subnet(feat, phi) - target||^2``;
    the returned gradients are of the batch mean (no weight decay).
    Also hands back the per-sample feature-input gradient so end-to-end
    training can keep propagating into the extractor.
    """
    x, z1, h, out = _forward_batch(params, feat, phi)
    batch = feat.shape[0]
    err = feat + omega[:, None] * out - target
    loss = float(np.sum(err * err) / batch)

    d_out = (2.0 / batch) * err * omega[:, None]
    d_w2 = d_out.T @ h
    d_b2 = d_out.sum(axis=0)
    d_h = d_out @ params.w2
    pos = z1 >= 0.0
    d_z1 = d_h * np.where(pos, 1.0, params.a1)
    d_a1 = float(np.sum(d_h * np.where(pos, 0.0, z1)))
    d_w1 = d_z1.T @ x
    d_b1 = d_z1.sum(axis=0)
    d_x = d_z1 @ params.w1
    d_feat_via_subnet = d_x[:, : params.dim]

    grads = SubnetGrads(w1=d_w1, b1=d_b1, a1=d_a1, w2=d_w2, b2=d_b2)
    return loss, grads, err, d_feat_via_subnet


class _Momentum:
    """Classic SGD momentum buffers keyed like SubnetGrads."""

    def __init__(self, params: SubnetParams):
        self.w1 = np.zeros_like(params.w1)
        self.b1 = np.zeros_like(params.b1)
        self.a1 = 0.0
        self.w2 = np.zeros_like(params.w2)
        self.b2 = np.zeros_like(params.b2)

    def step(self, params: SubnetParams, grads: SubnetGrads, lr: float, mu: float, wd: float):
        self.w1 = mu * self.w1 + grads.w1 + wd * params.w1
        self.b1 = mu * self.b1 + grads.b1
        self.a1 = mu * self.a1 + grads.a1
        self.w2 = mu * self.w2 + grads.w2 + wd * params.w2
        self.b2 = mu * self.b2 + grads.b2
        params.w1 -= lr * self.w1
        params.b1 -= lr * self.b1
        params.a1 -= lr * self.a1
        params.w2 -= lr * self.w2
        params.b2 -= lr * self.b2


def _pairs_to_arrays(pairs, gate_kind: GateKind, loss_form: str):
    feats_p = np.stack([np.asarray(p[0], dtype=float) for p in pairs])
    feats_f = np.stack([np.asarray(p[1], dtype=float) for p in pairs])
    poses = [p[2] for p in pairs]
    phi = np.stack([pose_to_phi(pose) for pose in poses])
    omega = np.array([gate(gate_kind, pose) for pose in poses])
    if loss_form == "inverse":
        # Fit the literal direction: map frontal features onto profile ones.
        feats_p, feats_f = feats_f, feats_p
    return feats_p, feats_f, phi, omega


def _epoch_lr(base_lr: float, schedule, epoch: int) -> float:
    lr = base_lr
    for boundary, divisor in schedule:
        if epoch >= boundary:
            lr /= divisor
    return lr


def _run_sgd(params: SubnetParams, feat, target, phi, omega, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    momentum = _Momentum(params)
    history = []
    n = feat.shape[0]
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg.lr, cfg.lr_schedule, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads, _, _ = subnet_loss_and_grads(
                params, feat[idx], phi[idx], target[idx], omega[idx]
            )
            total += loss * len(idx)
            momentum.step(params, grads, lr, cfg.momentum, cfg.weight_decay)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise NonFiniteLossError(
                f"epoch {epoch} mean loss is {mean_loss!r}; "
                f"lr={lr!r} likely too large for this data"
            )
        history.append(mean_loss)
    return history


def train_subnet(
    pairs: Sequence,
    cfg: TrainConfig,
    gate_kind: GateKind,
) -> TrainedModel:
    """Fit the subnet on (profile feature, frontal feature, pose) triples.

    Runs seeded mini-batch SGD with momentum and weight decay on the weight
    matrices; ``loss_history`` records the epoch-mean per-pair loss.  Aborts
    with NonFiniteLossError if the loss degenerates.
    """
    cfg.validate()
    if len(pairs) == 0:
        raise EmptyDatasetError("no training pairs")
    feat, target, phi, omega = _pairs_to_arrays(pairs, gate_kind, cfg.loss_form)
    dim = feat.shape[1]
    params = SubnetParams.init(dim, seed=derive_param_seed(cfg.seed))
    _check_shapes(params, feat, phi)
    history = _run_sgd(params, feat, target, phi, omega, cfg)
    return TrainedModel(
        params=params,
        gate_kind=gate_kind,
        loss_history=history,
        config=cfg.snapshot(),
    )


def derive_param_seed(seed: int) -> int:
    # Keep parameter init decoupled from the batch-shuffling stream.
    return (seed * 0x9E3779B9 + 0x7F4A7C15) % (2**63)


def _backbone_features(projection: np.ndarray, flat_points: np.ndarray):
    u = flat_points @ projection.T
    h = np.tanh(u)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    return h, norms, h / norms


def train_end_to_end(
    dataset,
    backbone: ToyBackbone,
    cfg: TrainConfig,
    gate_kind: GateKind,
    train_ids: Optional[Sequence[int]] = None,
    backbone_lr_factor: float = 0.1,
    joint_epochs: Optional[int] = None,
):
    """Joint backbone + subnet phase, then a subnet-only fine-tuning phase.

    The joint phase propagates gradients through the profile branch only (the
    frontal feature acts as a fixed target each step), scales the backbone
    learning rate by ``backbone_lr_factor``, and decays the projection toward
    its pretrained value; all three guards keep the shared feature space from
    drifting into identity-specific memorization under the pure matching loss.
    The joint phase runs ``joint_epochs`` epochs (default ``cfg.epochs``), the
    fine-tune phase ``cfg.epochs``; the returned history concatenates both.
    """
    cfg.validate()
    if joint_epochs is None:
        joint_epochs = cfg.epochs
    ids = list(train_ids) if train_ids is not None else sorted(dataset.identity_ids())
    obs_pairs = pair_observations(dataset.observations, ids)
    if len(obs_pairs) == 0:
        raise EmptyDatasetError("no training pairs for the requested identities")

    flat_p = np.stack([p[0].points.reshape(-1) for p in obs_pairs])
    flat_f = np.stack([p[1].points.reshape(-1) for p in obs_pairs])
    poses = [p[0].pose for p in obs_pairs]
    phi = np.stack([pose_to_phi(pose) for pose in poses])
    omega = np.array([gate(gate_kind, pose) for pose in poses])
    if cfg.loss_form == "inverse":
        flat_p, flat_f = flat_f, flat_p

    initial_projection = backbone.projection.copy()
    projection = backbone.projection.copy()
    dim = projection.shape[0]
    params = SubnetParams.init(dim, seed=derive_param_seed(cfg.seed))
    momentum = _Momentum(params)
    v_proj = np.zeros_like(projection)
    rng = np.random.default_rng(cfg.seed)
    history = []
    n = flat_p.shape[0]

    for epoch in range(joint_epochs):
        lr = _epoch_lr(cfg.lr, cfg.lr_schedule, epoch)
        lr_backbone = lr * backbone_lr_factor
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xp = flat_p[idx]
            h_p, norm_p, feat_p = _backbone_features(projection, xp)
            _, _, feat_f = _backbone_features(projection, flat_f[idx])

            loss, grads, err, d_feat_sub = subnet_loss_and_grads(
                params, feat_p, phi[idx], feat_f, omega[idx]
            )
            total += loss * len(idx)

            d_feat = (2.0 / len(idx)) * err + d_feat_sub
            # Through the row normalization, then tanh.
            inner = np.sum(feat_p * d_feat, axis=1, keepdims=True)
            d_h = (d_feat - feat_p * inner) / norm_p
            d_u = d_h * (1.0 - h_p * h_p)
            d_proj = d_u.T @ xp + cfg.weight_decay * (projection - initial_projection)

            momentum.step(params, grads, lr, cfg.momentum, cfg.weight_decay)
            v_proj = cfg.momentum * v_proj + d_proj
            projection -= lr_backbone * v_proj
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise NonFiniteLossError(f"joint epoch {epoch} mean loss is {mean_loss!r}")
        history.append(mean_loss)

    adapted = backbone.with_projection(projection, trainable=True)

    # Fine-tune the subnet alone against the frozen adapted backbone,
    # continuing from the jointly trained parameters.
    frozen_p = extract_feature_matrix(adapted, [p[0] for p in obs_pairs])
    frozen_f = extract_feature_matrix(adapted, [p[1] for p in obs_pairs])
    if cfg.loss_form == "inverse":
        frozen_p, frozen_f = frozen_f, frozen_p
    finetune_cfg = replace(cfg, seed=cfg.seed + 1)
    finetune_history = _run_sgd(params, frozen_p, frozen_f, phi, omega, finetune_cfg)

    model = TrainedModel(
        params=params,
        gate_kind=gate_kind,
        loss_history=history + finetune_history,
        config=cfg.snapshot() | {"backbone_lr_factor": backbone_lr_factor},
        backbone=adapted,
    )
    return adapted, model
