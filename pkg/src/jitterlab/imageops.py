"""Image similarity, Fourier low-pass filtering, and additive-noise generators.

An image in this package is a 2D numpy array (H, W) of intensities in
[0, 1], single channel.  All operations are pure; the noise generators are
deterministic functions of (image, parameter, seed), and batch variants
derive per-image seeds as ``seed XOR index`` so a parallel map stays
bitwise-deterministic.
"""

import math

import numpy as np

__all__ = [
    "validate_image",
    "ssim",
    "fourier_lowpass",
    "add_gaussian_noise",
    "add_poisson_noise",
    "gaussian_noise_batch",
    "poisson_noise_batch",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def validate_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2D (H, W), got shape {x.shape}")
    if x.size and (float(x.min()) < 0.0 or float(x.max()) > 1.0):
        raise ValueError(f"{name} intensities must lie in [0, 1]")
    return x


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


_SSIM_KERNEL = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable correlation with a symmetric 1D kernel, valid mode."""
    r = k.size
    h, w = img.shape
    tmp = np.zeros((h, w - r + 1), dtype=np.float64)
    for i in range(r):
        tmp += k[i] * img[:, i : i + w - r + 1]
    out = np.zeros((h - r + 1, w - r + 1), dtype=np.float64)
    for i in range(r):
        out += k[i] * tmp[i : i + h - r + 1, :]
    return out


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity between two images, in [-1, 1].

    Local statistics use an 11x11 Gaussian window (sigma 1.5) in valid mode,
    with K1=0.01, K2=0.03 and dynamic range 1.0.  Symmetric in its arguments.
    """
    a = validate_image(a, "a")
    b = validate_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    k = _SSIM_KERNEL
    mx = _filter_valid(x, k)
    my = _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def fourier_lowpass(x: np.ndarray, filtered_fraction: float) -> np.ndarray:
    """Zero out the given fraction of DFT coefficients, highest radius first.

    The cut radius is the (1 - filtered_fraction) quantile of the radius
    distribution over coefficient counts; coefficients strictly beyond it are
    zeroed, so radius ties share one fate and fraction 1 keeps only the DC
    bin.  The inverse transform's real part is clamped to [0, 1].
    """
    x = validate_image(x)
    if not (0.0 <= filtered_fraction <= 1.0):
        raise ValueError(f"filtered_fraction {filtered_fraction} outside [0, 1]")
    h, w = x.shape
    spec = np.fft.fftshift(np.fft.fft2(x.astype(np.float64)))
    yy, xx = np.mgrid[0:h, 0:w]
    radius = np.hypot(yy - h // 2, xx - w // 2)
    flat = np.sort(radius.ravel())
    idx = max(0, math.ceil((1.0 - filtered_fraction) * flat.size) - 1)
    cutoff = flat[idx]
    spec[radius > cutoff] = 0.0
    out = np.real(np.fft.ifft2(np.fft.ifftshift(spec)))
    return np.clip(out, 0.0, 1.0).astype(x.dtype)


def add_gaussian_noise(x: np.ndarray, variance: float, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise of the given variance, clamped to [0, 1]."""
    x = validate_image(x)
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    noisy = x.astype(np.float64) + rng.normal(0.0, math.sqrt(variance), size=x.shape)
    return np.clip(noisy, 0.0, 1.0).astype(x.dtype)


def add_poisson_noise(x: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Resample each pixel as Poisson(x * scale) / scale, clamped to [0, 1].

    ``scale`` plays the role of a photon count per unit intensity; large
    scales approach the identity.
    """
    x = validate_image(x)
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    rng = np.random.default_rng(seed)
    noisy = rng.poisson(x.astype(np.float64) * scale) / scale
    return np.clip(noisy, 0.0, 1.0).astype(x.dtype)


def gaussian_noise_batch(images: np.ndarray, variance: float, seed: int) -> np.ndarray:
    """Apply :func:`add_gaussian_noise` per image with seed ``seed ^ index``."""
    out = np.empty_like(images)
    for i in range(images.shape[0]):
        out[i] = add_gaussian_noise(images[i], variance, np.uint64(seed) ^ np.uint64(i))
    return out


def poisson_noise_batch(images: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Apply :func:`add_poisson_noise` per image with seed ``seed ^ index``."""
    out = np.empty_like(images)
    for i in range(images.shape[0]):
        out[i] = add_poisson_noise(images[i], scale, np.uint64(seed) ^ np.uint64(i))
    return out
