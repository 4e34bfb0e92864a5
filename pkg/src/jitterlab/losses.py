"""Training objectives and probe losses.

All differentiable losses are built from diffcore primitives and return
tensors; analysis-only helpers (cosine similarity, single-pair contrastive
values, the triplet probe loss) return plain floats.

Log-probability terms for the discriminator game are computed in log space:
with z the clamped logit, -log(1 - sigmoid(z)) = log(1 + exp(z)) and
-log(sigmoid(z)) = log(1 + exp(-z)), which avoids the float32 cancellation
of forming 1 - sigmoid(z) directly.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import NumericError, Tensor


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective and the contrastive temperature."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be >= 0")


def gaze_loss(pred: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of the L1 norm of the (pitch, yaw) residual."""
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if pred.shape[0] != labels.shape[0]:
        raise ValueError(f"batch sizes differ: {pred.shape[0]} vs {labels.shape[0]}")
    resid = pred - Tensor(labels)
    return dc.tmean(dc.tsum(dc.tabs(resid), axis=1))


def cosine_sim(fu: np.ndarray, fv: np.ndarray) -> float:
    """Dot product of the two vectors normalized by their norms."""
    fu = np.asarray(fu, dtype=np.float64)
    fv = np.asarray(fv, dtype=np.float64)
    nu, nv = np.linalg.norm(fu), np.linalg.norm(fv)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return float(np.dot(fu, fv) / (nu * nv))


class ContrastiveBatch:
    """Feature rows in block order [source, target, source', target'].

    Each block holds ``b`` rows; row i is the perturbed twin of row
    i +- 2b, so the positive-partner map is an involution with no fixed
    point.  ``features`` may be a Tensor (for training) or an ndarray.
    """

    def __init__(self, features, b: int, partner: np.ndarray | None = None):
        feats = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
        n = feats.shape[0]
        if b < 1 or n != 4 * b:
            raise ValueError(f"expected 4*b={4*b} feature rows, got {n}")
        if partner is None:
            partner = (np.arange(n) + 2 * b) % n
        partner = np.asarray(partner, dtype=np.int64)
        if partner.shape != (n,) or np.any(partner[partner] != np.arange(n)) or np.any(
            partner == np.arange(n)
        ):
            raise ValueError("partner map must be a fixed-point-free involution")
        self.features = feats
        self.b = b
        self.partner = partner

    @property
    def n(self) -> int:
        return 4 * self.b


def _normalized_rows(f: Tensor) -> Tensor:
    norms = dc.sqrt(dc.tsum(f * f, axis=1, keepdims=True))
    return f / norms


def contrastive_pair_loss(batch: ContrastiveBatch, u: int, tau: float) -> float:
    """Directed loss for anchor u against its positive partner.

    The denominator runs over every sample except u itself; the positive is
    included in it.
    """
    if not (0 <= u < batch.n):
        raise ValueError(f"anchor index {u} out of range")
    f = batch.features.data.astype(np.float64)
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise NumericError("zero-norm feature in contrastive batch")
    fn = f / norms[:, None]
    sims = fn @ fn[u]
    weights = np.exp(sims / tau)
    den = weights.sum() - weights[u]
    num = weights[batch.partner[u]]
    return float(math.log(den) - math.log(num))


def contrastive_loss(batch: ContrastiveBatch, tau: float) -> Tensor:
    """Mean directed pair loss over all 4b anchors (differentiable).

    Equals 1/(4b) times the sum over i of the four directed losses between
    each original and its perturbed twin in both domains.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    f = batch.features
    n = batch.n
    fn = _normalized_rows(f)
    sims = dc.matmul(fn, dc.transpose(fn)) * (1.0 / tau)
    e = dc.exp(sims)
    off_diag = 1.0 - np.eye(n, dtype=f.data.dtype)
    den = dc.tsum(e * Tensor(off_diag), axis=1)
    pos = np.zeros((n, n), dtype=f.data.dtype)
    pos[np.arange(n), batch.partner] = 1.0
    num = dc.tsum(e * Tensor(pos), axis=1)
    return dc.tmean(dc.log(den) - dc.log(num))


def _mean_softplus_logits(d, f: Tensor, negate: bool) -> Tensor:
    """Mean of log(1 + exp(+-z)) over a feature block, z = clamped logits."""
    z = d.logits(f)
    if negate:
        z = -z
    return dc.tmean(dc.log(dc.exp(z) + 1.0))


def discriminator_loss(d, f_s, f_s_adv, f_t, f_t_adv) -> Tensor:
    """Domain-classification loss for the discriminator.

    Mean -log(1 - D(f)) over the pooled source features plus mean -log D(f)
    over the pooled target features.  Features are taken as constants
    (numpy arrays), so only discriminator parameters receive gradients.
    """
    src = Tensor(np.concatenate([np.asarray(f_s), np.asarray(f_s_adv)], axis=0))
    tgt = Tensor(np.concatenate([np.asarray(f_t), np.asarray(f_t_adv)], axis=0))
    if src.shape[0] == 0 or tgt.shape[0] == 0:
        raise ValueError("feature blocks must be nonempty")
    return _mean_softplus_logits(d, src, negate=False) + _mean_softplus_logits(
        d, tgt, negate=True
    )


def adversarial_loss(d, f_t: Tensor, f_t_adv: Tensor) -> Tensor:
    """Mean -log(1 - D(f)) over the pooled target features.

    Gradients flow back into the features (hence the extractor); the
    discriminator's own parameters are left frozen by the caller.
    """
    if f_t.shape[0] == 0 or f_t_adv.shape[0] == 0:
        raise ValueError("feature blocks must be nonempty")
    pooled = dc.concat([f_t, f_t_adv], axis=0)
    return _mean_softplus_logits(d, pooled, negate=False)


def adversarial_block_loss(d, f: Tensor) -> Tensor:
    """Mean -log(1 - D(f)) over a single feature block."""
    if f.shape[0] == 0:
        raise ValueError("feature block must be nonempty")
    return _mean_softplus_logits(d, f, negate=False)


def total_loss(gaze_clean, gaze_adv, contrastive, adv_clean, adv_adv,
               w: LossWeights):
    """Combined objective: both gaze terms, plus weighted contrastive and
    adversarial terms (no gaze supervision on the target side)."""
    return (gaze_clean + gaze_adv + w.lambda1 * contrastive
            + w.lambda2 * (adv_clean + adv_adv))


def triplet_loss(anchor, positive, negative, margin: float) -> float:
    """Hinge on Euclidean distances between L2-normalized features:
    max(0, d(a, p) - d(a, n) + margin)."""
    vecs = []
    for name, v in (("anchor", anchor), ("positive", positive), ("negative", negative)):
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise NumericError(f"zero-norm {name} feature in triplet loss")
        vecs.append(v / n)
    a, p, n = vecs
    return max(0.0, float(np.linalg.norm(a - p) - np.linalg.norm(a - n)) + margin)
