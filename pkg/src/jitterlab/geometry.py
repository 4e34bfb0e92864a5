"""Gaze-direction representations and angular arithmetic.

A gaze is either a (pitch, yaw) pair in radians or a 3D unit vector.  The
fixed convention (camera looking down -z) is:

    x = -cos(pitch) * sin(yaw)
    y = -sin(pitch)
    z = -cos(pitch) * cos(yaw)

so (0, 0) maps to (0, 0, -1).  Every metric in this package depends only on
angles between vectors, so any self-consistent convention gives the same
numbers.  All functions are pure and thread-safe.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GazeLabel",
    "GazeVector",
    "pitchyaw_to_vector",
    "vector_to_pitchyaw",
    "angular_between",
    "pitchyaw_to_vectors",
    "angles_between_deg",
]

_HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class GazeLabel:
    """Gaze as (pitch, yaw), radians; pitch in [-pi/2, pi/2], yaw in [-pi, pi]."""

    pitch: float
    yaw: float

    def __post_init__(self):
        if not (-_HALF_PI <= self.pitch <= _HALF_PI):
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        if not (-math.pi <= self.yaw <= math.pi):
            raise ValueError(f"yaw {self.yaw} outside [-pi, pi]")


@dataclass(frozen=True)
class GazeVector:
    """Gaze as a 3D unit vector (unit norm within 1e-6)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"gaze vector norm {n} is not 1 within 1e-6")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def pitchyaw_to_vector(g: GazeLabel) -> GazeVector:
    """Convert a (pitch, yaw) gaze to its 3D unit vector."""
    cp = math.cos(g.pitch)
    return GazeVector(-cp * math.sin(g.yaw), -math.sin(g.pitch), -cp * math.cos(g.yaw))


def vector_to_pitchyaw(v: GazeVector) -> GazeLabel:
    """Invert :func:`pitchyaw_to_vector`.

    At the poles (x = z = 0) the yaw is undefined; 0 is returned by
    convention.  A zero vector is rejected by the GazeVector invariant.
    """
    pitch = math.asin(min(1.0, max(-1.0, -v.y)))
    # atan2(-0.0, -0.0) is -pi, so pin the pole convention explicitly
    yaw = 0.0 if (v.x == 0.0 and v.z == 0.0) else math.atan2(-v.x, -v.z)
    return GazeLabel(pitch, yaw)


def angular_between(a: GazeVector, b: GazeVector) -> float:
    """Angle between two unit gaze vectors, in degrees (0..180, symmetric)."""
    d = a.x * b.x + a.y * b.y + a.z * b.z
    return math.degrees(math.acos(min(1.0, max(-1.0, d))))


# Array fast paths used by metrics and training code.


def pitchyaw_to_vectors(py: np.ndarray) -> np.ndarray:
    """Vectorized conversion of an (N, 2) pitch/yaw array to (N, 3) unit vectors."""
    py = np.asarray(py, dtype=np.float64)
    pitch, yaw = py[:, 0], py[:, 1]
    cp = np.cos(pitch)
    out = np.stack([-cp * np.sin(yaw), -np.sin(pitch), -cp * np.cos(yaw)], axis=1)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def angles_between_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angle in degrees between two (N, 3) unit-vector arrays."""
    d = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    return np.degrees(np.arccos(d))
