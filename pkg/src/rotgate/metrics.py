"""Verification and identification metrics: EER, TAR at fixed FAR, rank-k accuracy.

Scores are similarities (higher = more likely genuine).  A trial is accepted
at threshold ``t`` when its score is >= ``t``; FAR is the accepted fraction of
impostors, FRR the rejected fraction of genuines, TAR = 1 - FRR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DuplicateGalleryIdentityError, EmptyScoresError


def _scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise EmptyScoresError(f"{name} score list is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} scores must be finite")
    return arr


def score_curve(genuine_scores, impostor_scores):
    """Threshold sweep over the merged score set.

    Returns ``(thresholds, far, frr, tar)`` where thresholds are the distinct
    merged scores plus a +inf sentinel, so every achievable operating point
    appears exactly once (from accept-all down to reject-all).  TAR is computed
    as a direct count ratio rather than ``1 - frr`` so it is exactly the
    fraction of accepted genuine trials.
    """
    genuine = np.sort(_scores(genuine_scores, "genuine"))
    impostor = np.sort(_scores(impostor_scores, "impostor"))
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.append(thresholds, np.inf)
    accepted_genuine = genuine.size - np.searchsorted(genuine, thresholds, side="left")
    far = (impostor.size - np.searchsorted(impostor, thresholds, side="left")) / impostor.size
    frr = (genuine.size - accepted_genuine) / genuine.size
    tar = accepted_genuine / genuine.size
    return thresholds, far, frr, tar


def compute_eer(genuine_scores, impostor_scores) -> float:
    """Equal error rate: the rate where FAR and FRR cross.

    Walks the threshold sweep for the smallest |FAR - FRR| and interpolates
    linearly between the two adjacent thresholds when they bracket the
    crossing.
    """
    _, far, frr, _ = score_curve(genuine_scores, impostor_scores)
    diff = far - frr  # non-increasing, from +1 toward -1
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        return float(far[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(frr[k - 1] + t * (frr[k] - frr[k - 1]))


@dataclass(frozen=True)
class TarAtFar:
    """Operating point for one FAR target."""

    tar: float
    far: float
    threshold: float
    insufficient_impostors: bool


def compute_tar_at_far(genuine_scores, impostor_scores, far_targets: Sequence[float]):
    """TAR at the smallest threshold whose empirical FAR is within each target.

    An entry is flagged ``insufficient_impostors`` when fewer impostor scores
    exist than 1/target, i.e. the target cannot be resolved empirically; the
    value is still reported.
    """
    thresholds, far, _, tar = score_curve(genuine_scores, impostor_scores)
    n_impostor = np.asarray(impostor_scores).size
    out = {}
    for target in far_targets:
        if not 0.0 < target < 1.0:
            raise ValueError(f"far target must lie in (0, 1), got {target!r}")
        k = int(np.argmax(far <= target))
        out[target] = TarAtFar(
            tar=float(tar[k]),
            far=float(far[k]),
            threshold=float(thresholds[k]),
            insufficient_impostors=bool(n_impostor * target < 1.0),
        )
    return out


def identification_rank_k(probe_feats, gallery_feats, k: int) -> float:
    """Fraction of probes whose identity is among the k nearest gallery entries.

    Both arguments are sequences of ``(identity_id, feature)`` pairs; the
    gallery must hold exactly one entry per identity.  Similarity is cosine,
    with ties broken toward the lower identity id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    probes = list(probe_feats)
    gallery = list(gallery_feats)
    if not probes or not gallery:
        raise EmptyScoresError("probe and gallery must be nonempty")
    gallery_ids = [int(g[0]) for g in gallery]
    if len(set(gallery_ids)) != len(gallery_ids):
        raise DuplicateGalleryIdentityError("gallery contains a repeated identity")

    probe_matrix = _unit_rows(np.stack([np.asarray(p[1], dtype=float) for p in probes]))
    gallery_matrix = _unit_rows(np.stack([np.asarray(g[1], dtype=float) for g in gallery]))
    sims = probe_matrix @ gallery_matrix.T

    hits = 0
    for i, (probe_id, _) in enumerate(probes):
        order = sorted(range(len(gallery)), key=lambda j: (-sims[i, j], gallery_ids[j]))
        top = {gallery_ids[j] for j in order[:k]}
        if int(probe_id) in top:
            hits += 1
    return hits / len(probes)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def cosine_scores(probe_matrix: np.ndarray, gallery_matrix: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix between row sets."""
    return _unit_rows(np.asarray(probe_matrix, dtype=float)) @ _unit_rows(
        np.asarray(gallery_matrix, dtype=float)
    ).T
