"""Gradient-sign perturbations that inject high-frequency content.

Two attacks are provided: the one-step sign method (``fgsm``) and its
iterated projected variant (``pgd``), both driven by the L1 gaze loss and
bounded in L-infinity by ``epsilon``.  ``augment_batch`` applies one of the
two per image, chosen by an independent fair coin.

Attacks never mutate their input, and their outputs are plain numpy arrays:
training treats perturbed images as constants, no gradient flows through
attack generation.  Any object exposing ``predict_tensor`` over an
(N, 1, H, W) tensor can be attacked, which keeps toy models testable.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffcore import NumericError, Tensor
from .losses import gaze_loss


@dataclass(frozen=True)
class AttackConfig:
    """L-infinity radius, iteration count, and step size for the attacks."""

    epsilon: float = 0.03
    pgd_steps: int = 4
    pgd_step_size: float = field(default=-1.0)  # -1 means epsilon / 2
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.pgd_steps < 1:
            raise ValueError(f"pgd_steps must be >= 1, got {self.pgd_steps}")
        if self.pgd_step_size == -1.0:
            object.__setattr__(self, "pgd_step_size", self.epsilon / 2.0)
        if self.epsilon > 0 and not (0 < self.pgd_step_size <= self.epsilon):
            raise ValueError(
                f"pgd_step_size must be in (0, epsilon], got {self.pgd_step_size}"
            )


def _as_batch(images: np.ndarray):
    images = np.asarray(images)
    single = images.ndim == 2
    if single:
        images = images[None]
    return images, single


def _loss_input_gradient(model, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean L1 gaze loss w.r.t. the input pixels."""
    x = Tensor(images[:, None, :, :], requires_grad=True)
    loss = gaze_loss(model.predict_tensor(x), labels)
    loss.backward()
    g = x.grad[:, 0, :, :]
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite input gradient during attack generation")
    if hasattr(model, "zero_grad"):
        model.zero_grad()
    return g


def fgsm(model, images: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """One sign-gradient step of size epsilon, clamped to [0, 1].

    Per-pixel deviation before clamping is exactly -eps, 0, or +eps
    (sign(0) = 0), so a zero gradient or epsilon 0 returns the input.
    """
    images, single = _as_batch(images)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if cfg.epsilon == 0:
        out = images.copy()
        return out[0] if single else out
    g = _loss_input_gradient(model, images, labels)
    out = np.clip(images + cfg.epsilon * np.sign(g), 0.0, 1.0).astype(images.dtype)
    return out[0] if single else out


def pgd(model, images: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Iterated sign-gradient ascent projected onto the epsilon ball.

    Each step takes the gradient at the current iterate, moves by
    ``pgd_step_size`` along its sign, and projects back onto the
    L-infinity ball around the original image intersected with [0, 1].
    """
    images, single = _as_batch(images)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if cfg.epsilon == 0:
        out = images.copy()
        return out[0] if single else out
    lo = np.maximum(images - cfg.epsilon, 0.0)
    hi = np.minimum(images + cfg.epsilon, 1.0)
    x = images.astype(np.float64)
    for _ in range(cfg.pgd_steps):
        g = _loss_input_gradient(model, x.astype(images.dtype), labels)
        x = np.clip(x + cfg.pgd_step_size * np.sign(g), lo, hi)
    return x.astype(images.dtype) if not single else x.astype(images.dtype)[0]


def augment_batch(model, images: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                  coin_seed: int) -> np.ndarray:
    """Perturb each image with FGSM or PGD chosen by an independent fair coin.

    Output is aligned index-wise with the input; a fixed ``coin_seed``
    reproduces the same choices.
    """
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.float64)
    if images.ndim != 3 or labels.shape[0] != images.shape[0]:
        raise ValueError("augment_batch expects (N,H,W) images with aligned labels")
    coins = np.random.default_rng(coin_seed).random(images.shape[0]) < 0.5
    out = np.empty_like(images)
    if coins.any():
        out[coins] = fgsm(model, images[coins], labels[coins], cfg)
    if (~coins).any():
        out[~coins] = pgd(model, images[~coins], labels[~coins], cfg)
    return out
