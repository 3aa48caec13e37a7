"""Synthetic datasets and their binary containers.

Blob data: every class is a fixed arrangement of three von Mises-Fisher bumps
near the north pole.  All classes have equal bump count and mass, so they
differ only in the geometry of the arrangement.  Samples jitter the bump
amplitudes and positions and add band-limited noise.  In the ``R`` regime every
sample is additionally rotated by a Haar-random rotation; ``NR`` and ``R``
drawn from the same seed differ only by those rotations.

Container format (little-endian):

``HDSB`` blob dataset::

    b"HDSB" version u32  n u32  n_classes u32  labels i32[n]  then n HSIG records

Sequence datasets live in :mod:`homcorr.dilated`.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from . import harmonics as hm
from .signals import Rotation, S2Signal, read_signal, rotate_s2, s2_points, write_signal

# Unit vectors of each class's bumps, parameterized by (colatitude, longitude)
# in degrees.  Pairwise angular separations differ between classes.
BLOB_TEMPLATES = (
    ((20, 0), (20, 120), (20, 240)),
    ((0, 0), (45, 0), (90, 0)),
    ((30, 0), (30, 180), (90, 90)),
    ((0, 0), (25, 0), (100, 180)),
)
BLOB_KAPPA = 12.0
MAX_CLASSES = len(BLOB_TEMPLATES)


def _unit(colat_deg: float, lon_deg: float) -> np.ndarray:
    t, p = math.radians(colat_deg), math.radians(lon_deg)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])


def _bandlimit(f: np.ndarray, B: int) -> np.ndarray:
    return hm.sht_inverse(hm.sht_forward(f, B), B).real


def blob_signal(centers: np.ndarray, amplitudes, B: int, kappa: float = BLOB_KAPPA) -> np.ndarray:
    """Band-limited sum of von Mises-Fisher bumps at unit vectors ``centers``."""
    x = s2_points(B)
    f = sum(a * np.exp(kappa * (x @ c - 1.0)) for a, c in zip(amplitudes, centers))
    return _bandlimit(f, B)


def class_template(k: int, B: int) -> np.ndarray:
    """Noise-free sample of class ``k`` at bandwidth ``B``."""
    centers = np.array([_unit(*c) for c in BLOB_TEMPLATES[k]])
    return blob_signal(centers, np.ones(len(centers)), B)


def gen_blobs(n_classes: int, per_class: int, B: int, sigma: float = 0.0, rotate: str = "NR",
              seed: int = 0, jitter_deg: float = 8.0, amp_jitter: float = 0.15):
    """Return ``(X, y)`` with ``X`` of shape ``(n, 1, 2B, 2B)``.

    With ``sigma = 0`` and zero jitter every sample equals its class template.
    """
    if not 1 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must lie in [1, {MAX_CLASSES}]")
    if rotate not in ("NR", "R"):
        raise ValueError("rotate must be 'NR' or 'R'")
    B = hm.check_bandwidth(B)
    ss = np.random.SeedSequence(seed)
    shape_rng, rot_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    n = n_classes * per_class
    y = np.repeat(np.arange(n_classes), per_class)
    y = y[shape_rng.permutation(n)] if n else y
    X = np.zeros((n, 1, 2 * B, 2 * B))
    jit = math.radians(jitter_deg)
    for i, k in enumerate(y):
        centers = []
        for c in BLOB_TEMPLATES[k]:
            u = _unit(*c)
            if jit > 0:
                axis = shape_rng.standard_normal(3)
                axis -= (axis @ u) * u
                axis /= np.linalg.norm(axis)
                ang = shape_rng.normal(0.0, jit)
                u = u * math.cos(ang) + axis * math.sin(ang)
            centers.append(u)
        amps = 1.0 + amp_jitter * shape_rng.standard_normal(len(centers)) if amp_jitter > 0 else np.ones(3)
        f = blob_signal(np.array(centers), amps, B)
        if sigma > 0:
            a = shape_rng.standard_normal((B, 2 * B - 1)) * hm.s2_mask(B) * sigma
            f = f + hm.s2_synthesis(hm.s2_real_to_complex(a), B).real / math.sqrt(4 * math.pi)
        X[i, 0] = f
    rotations = [Rotation.random(rot_rng) for _ in range(n)]
    if rotate == "R":
        X = np.stack([rotate_s2(X[i], g) for i, g in enumerate(rotations)]) if n else X
    return X, y


def random_rotations(n: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [Rotation.random(rng) for _ in range(n)]


def rotate_batch(X: np.ndarray, rotations) -> np.ndarray:
    return np.stack([rotate_s2(x, g) for x, g in zip(X, rotations)]) if len(X) else X


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

HDSB_MAGIC = b"HDSB"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def save_blobs(path, X: np.ndarray, y: np.ndarray, n_classes: int) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", HDSB_MAGIC, VERSION, len(y), n_classes))
        fh.write(np.asarray(y, dtype="<i4").tobytes())
        for x in X:
            write_signal(fh, S2Signal(x))


def load_blobs(path):
    """Return ``(X, y, n_classes)``."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise DatasetFormatError("truncated dataset header")
        magic, version, n, n_classes = struct.unpack("<4sIII", head)
        if magic != HDSB_MAGIC or version != VERSION:
            raise DatasetFormatError("not a blob dataset")
        raw = fh.read(4 * n)
        if len(raw) != 4 * n:
            raise DatasetFormatError("truncated labels")
        y = np.frombuffer(raw, dtype="<i4").astype(int)
        X = [read_signal(fh).samples for _ in range(n)]
    X = np.stack(X) if X else np.zeros((0, 1, 2, 2))
    return X, y, n_classes
