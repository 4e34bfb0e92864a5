"""Evaluation metrics: mean angular error, the mav jitter metric, and the
original-vs-perturbed feature-consistency probe.

mav scans unordered image pairs (i < j) whose ground-truth gaze angle is
below ``beta_deg`` and whose appearance similarity exceeds ``alpha``, and
averages |predicted-pair angle - label-pair angle| in degrees over them.
The cheap angle gate runs first so the SSIM gate only sees its survivors.
Aggregation uses exactly rounded summation (math.fsum), which makes the
result independent of pair enumeration order.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import angles_between_deg, pitchyaw_to_vectors
from .imageops import ssim


class NoQualifyingPairs(RuntimeError):
    """Raised when no image pair passes both mav gates."""


@dataclass(frozen=True)
class MavConfig:
    """Pair-selection thresholds and the optional subsampling cap."""

    alpha: float = 0.75
    beta_deg: float = 1.0
    max_pairs: int = 0  # 0 = exhaustive
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta_deg <= 0:
            raise ValueError(f"beta_deg must be > 0, got {self.beta_deg}")
        if self.max_pairs < 0:
            raise ValueError(f"max_pairs must be >= 0, got {self.max_pairs}")


@dataclass(frozen=True)
class MavReport:
    mav_deg: float
    qualifying_pairs: int
    candidates_scanned: int


def mean_angular_error(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean 3D angle in degrees between predicted and true gaze directions."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if preds.shape != labels.shape or preds.shape[0] == 0:
        raise ValueError(f"need matching nonempty (N, 2) arrays, got "
                         f"{preds.shape} vs {labels.shape}")
    errs = angles_between_deg(pitchyaw_to_vectors(preds), pitchyaw_to_vectors(labels))
    return float(math.fsum(errs) / len(errs))


def mav(dataset, preds: np.ndarray, cfg: MavConfig = MavConfig()) -> MavReport:
    """Jitter metric over appearance-similar, label-similar image pairs.

    ``dataset`` provides aligned ``images`` (N, H, W) and ``labels`` (N, 2);
    ``preds`` is the (N, 2) prediction array.  The label-angle gate uses
    ground-truth labels only.  With ``max_pairs`` > 0 the qualifying pairs
    are subsampled uniformly without replacement, seeded.

    Raises :class:`NoQualifyingPairs` when both gates reject every pair.
    """
    images = dataset.images
    labels = np.asarray(dataset.labels, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    n = labels.shape[0]
    if preds.shape != labels.shape:
        raise ValueError("preds must align with the dataset labels")
    v_true = pitchyaw_to_vectors(labels)
    v_pred = pitchyaw_to_vectors(preds)

    gram = np.clip(v_true @ v_true.T, -1.0, 1.0)
    iu, ju = np.triu_indices(n, k=1)
    true_ang = np.degrees(np.arccos(gram[iu, ju]))
    near = true_ang < cfg.beta_deg
    candidates_scanned = len(iu)

    pred_gram = np.clip(v_pred @ v_pred.T, -1.0, 1.0)
    deltas = []
    for i, j, ang in zip(iu[near], ju[near], true_ang[near]):
        if ssim(images[i], images[j]) > cfg.alpha:
            pred_ang = math.degrees(math.acos(pred_gram[i, j]))
            deltas.append(abs(pred_ang - ang))
    if not deltas:
        raise NoQualifyingPairs(
            f"no pair passed SSIM > {cfg.alpha} and angle < {cfg.beta_deg} deg"
        )
    if cfg.max_pairs and len(deltas) > cfg.max_pairs:
        rng = np.random.default_rng(cfg.seed)
        keep = rng.choice(len(deltas), size=cfg.max_pairs, replace=False)
        deltas = [deltas[k] for k in keep]
    return MavReport(
        mav_deg=float(math.fsum(deltas) / len(deltas)),
        qualifying_pairs=len(deltas),
        candidates_scanned=candidates_scanned,
    )


def triplet_probe(features: np.ndarray, perturbed_features: np.ndarray,
                  margin: float, n_triples: int, seed: int) -> float:
    """Mean triplet loss over seeded (original, its perturbed twin, random
    other original) triples; low values mean perturbation-stable features."""
    from .losses import triplet_loss

    features = np.asarray(features, dtype=np.float64)
    perturbed_features = np.asarray(perturbed_features, dtype=np.float64)
    n = features.shape[0]
    if n < 2 or perturbed_features.shape != features.shape:
        raise ValueError("need >= 2 aligned original/perturbed feature pairs")
    rng = np.random.default_rng(seed)
    anchors = rng.integers(0, n, size=n_triples)
    offsets = rng.integers(1, n, size=n_triples)
    negatives = (anchors + offsets) % n
    vals = [
        triplet_loss(features[a], perturbed_features[a], features[g], margin)
        for a, g in zip(anchors, negatives)
    ]
    return float(math.fsum(vals) / len(vals))
