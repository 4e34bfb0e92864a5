"""Networks: feature extractor, gaze head, domain discriminator, checkpoints.

Default architecture (id ``smallcnn32-v1``), sized for CPU-scale runs:

    extractor   4 conv blocks 3x3 stride 2 pad 1, channels 1->8->16->32->64,
                leaky-ReLU after each, flatten, affine 256 -> 128
    gaze head   affine 128 -> 64, leaky-ReLU, affine 64 -> 2 (pitch, yaw rad)
    discriminator  affine 128 -> 64, leaky-ReLU, affine 64 -> 1,
                logits clamped to +-30, sigmoid

Total parameter count is ~65k.  Initialization is uniform(+-sqrt(1/fan_in))
from a seeded generator, so a (seed, architecture) pair pins every weight.

Checkpoint files are a small binary container: magic ``GJCK``, u16 version,
u32 tensor count, then per tensor a u16 name length, UTF-8 name, u8 dtype
code (0 = float32, 1 = uint8), u8 rank, u32 dims, and the little-endian
row-major payload; a CRC32 of everything before it closes the file.
Metadata (architecture id, seed, creation step) rides along as uint8 entries
under ``meta/`` names.
"""

import struct
import zlib

import numpy as np

from . import diffcore as dc
from .diffcore import Affine, Conv2d, Graph, Tensor

ARCH_ID = "smallcnn32-v1"
IMAGE_SIZE = 32
FEATURE_DIM = 128
LEAKY_SLOPE = 0.1
LOGIT_CLAMP = 30.0

CHECKPOINT_MAGIC = b"GJCK"
CHECKPOINT_VERSION = 1
_DTYPE_F32 = 0
_DTYPE_U8 = 1


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated, or mismatched checkpoint files."""


class FeatureExtractor(Graph):
    def __init__(self, rng: np.random.Generator):
        self.conv1 = Conv2d(1, 8, 3, stride=2, padding=1, rng=rng)
        self.conv2 = Conv2d(8, 16, 3, stride=2, padding=1, rng=rng)
        self.conv3 = Conv2d(16, 32, 3, stride=2, padding=1, rng=rng)
        self.conv4 = Conv2d(32, 64, 3, stride=2, padding=1, rng=rng)
        self.fc = Affine(64 * 2 * 2, FEATURE_DIM, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = dc.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = dc.leaky_relu(self.conv2(h), LEAKY_SLOPE)
        h = dc.leaky_relu(self.conv3(h), LEAKY_SLOPE)
        h = dc.leaky_relu(self.conv4(h), LEAKY_SLOPE)
        h = dc.reshape(h, (h.shape[0], -1))
        return self.fc(h)


class GazeHead(Graph):
    def __init__(self, rng: np.random.Generator):
        self.fc1 = Affine(FEATURE_DIM, 64, rng)
        self.fc2 = Affine(64, 2, rng)

    def forward(self, f: Tensor) -> Tensor:
        return self.fc2(dc.leaky_relu(self.fc1(f), LEAKY_SLOPE))


class GazeModel:
    """Feature extractor plus gaze head; predicts (pitch, yaw) in radians."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE1]))
        self.extractor = FeatureExtractor(rng)
        self.head = GazeHead(rng)

    def named_parameters(self) -> dict:
        out = {}
        for k, v in self.extractor.named_parameters().items():
            out[f"extractor.{k}"] = v
        for k, v in self.head.named_parameters().items():
            out[f"head.{k}"] = v
        return out

    def zero_grad(self):
        self.extractor.zero_grad()
        self.head.zero_grad()

    def _as_input(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        if images.ndim != 3 or images.shape[1] != IMAGE_SIZE or images.shape[2] != IMAGE_SIZE:
            raise ValueError(
                f"expected images (N, {IMAGE_SIZE}, {IMAGE_SIZE}), got {images.shape}"
            )
        return Tensor(images[:, None, :, :])

    def extract_tensor(self, x: Tensor) -> Tensor:
        return self.extractor(x)

    def predict_tensor(self, x: Tensor) -> Tensor:
        return self.head(self.extractor(x))

    def extract(self, images: np.ndarray) -> np.ndarray:
        """Features for a batch of images, (N, FEATURE_DIM) numpy array."""
        with dc.no_grad():
            return self.extractor(self._as_input(images)).data.copy()

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Gaze predictions for a batch of images, (N, 2) radians."""
        with dc.no_grad():
            return self.head(self.extractor(self._as_input(images))).data.copy()


class Discriminator(Graph):
    """Feature -> probability-of-target classifier.

    ``logits`` exposes the pre-sigmoid value (clamped to +-30) so losses can
    be computed in log space; ``forward`` applies the sigmoid.  Probabilities
    reported by :meth:`predict_proba` are computed in float64 and therefore
    lie strictly inside (0, 1).
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1]))
        self.fc1 = Affine(FEATURE_DIM, 64, rng)
        self.fc2 = Affine(64, 1, rng)

    def logits(self, f: Tensor) -> Tensor:
        z = self.fc2(dc.leaky_relu(self.fc1(f), LEAKY_SLOPE))
        return dc.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)

    def forward(self, f: Tensor) -> Tensor:
        return dc.sigmoid(self.logits(f))

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Probabilities for a (N, d) feature array, strictly in (0, 1)."""
        with dc.no_grad():
            z = self.logits(Tensor(np.asarray(features))).data.astype(np.float64)
        return (1.0 / (1.0 + np.exp(-z))).reshape(-1)


def parameter_count(model: GazeModel) -> int:
    return sum(p.data.size for p in model.named_parameters().values())


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def _encode_entry(name: str, arr: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    if arr.dtype == np.uint8:
        code, payload = _DTYPE_U8, arr.tobytes()
    else:
        code, payload = _DTYPE_F32, arr.astype("<f4").tobytes()
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + payload


def serialize_checkpoint(tensors: dict, meta: dict) -> bytes:
    """Serialize named float32 arrays plus string metadata to bytes."""
    entries = []
    for key, value in sorted(meta.items()):
        entries.append(_encode_entry(f"meta/{key}",
                                     np.frombuffer(str(value).encode("utf-8"), dtype=np.uint8)))
    for name in sorted(tensors):
        entries.append(_encode_entry(name, np.ascontiguousarray(tensors[name])))
    body = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(entries))
    body += b"".join(entries)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def deserialize_checkpoint(blob: bytes):
    """Parse checkpoint bytes into (tensors, meta) or raise CheckpointError."""
    if len(blob) < 14:
        raise CheckpointError("checkpoint truncated: shorter than header")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, count = struct.unpack("<HI", blob[4:10])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    end = len(blob) - 4
    tensors, meta = {}, {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise CheckpointError("checkpoint truncated: entry overruns file")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        if code == _DTYPE_U8:
            data = np.frombuffer(take(n_items), dtype=np.uint8).reshape(shape)
        elif code == _DTYPE_F32:
            data = np.frombuffer(take(4 * n_items), dtype="<f4").reshape(shape)
        else:
            raise CheckpointError(f"unknown dtype code {code}")
        if name.startswith("meta/"):
            meta[name[5:]] = data.tobytes().decode("utf-8")
        else:
            tensors[name] = data.copy()
    if pos != end:
        raise CheckpointError("checkpoint has trailing bytes before CRC")
    return tensors, meta


def save_checkpoint(path, model: GazeModel, seed: int = 0, step: int = 0) -> None:
    """Write a GazeModel checkpoint (atomic: temp file + rename)."""
    import os

    tensors = {k: v.data for k, v in model.named_parameters().items()}
    blob = serialize_checkpoint(tensors, {"arch": ARCH_ID, "seed": seed, "step": step})
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a GazeModel checkpoint; returns (model, meta).

    The stored architecture id and the full shape table are verified against
    a freshly built model before any data is copied in, so a failed load
    never yields a partially filled model.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    tensors, meta = deserialize_checkpoint(blob)
    arch = meta.get("arch")
    if arch != ARCH_ID:
        raise CheckpointError(f"architecture id {arch!r} does not match {ARCH_ID!r}")
    model = GazeModel(seed=0)
    params = model.named_parameters()
    if set(params) != set(tensors):
        raise CheckpointError("checkpoint tensor names do not match architecture")
    for name, p in params.items():
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {tensors[name].shape} vs {p.data.shape}"
            )
    for name, p in params.items():
        p.data = tensors[name].astype(p.data.dtype)
    return model, meta
