"""Multi-scale point features: three voxel-patch codes concatenated."""

from __future__ import annotations

import struct

import numpy as np

from .nn import CaeNetwork
from .voxels import VoxelIndexSet, extract_patch

FEATURE_DIM = 60


def encode_patch(patch_occupancy: np.ndarray, net3d: CaeNetwork) -> np.ndarray:
    """20-dim linear code of one binary occupancy patch."""
    if net3d.code_layer_index is None:
        raise ValueError("network has no code layer")
    x = patch_occupancy.astype(float)[None, ..., None]
    return net3d.forward(x, upto=net3d.code_layer_index)[0]


def describe(point, voxset: VoxelIndexSet, net3d: CaeNetwork,
             normalize: bool = False) -> np.ndarray:
    """60-dim feature: codes at the three resolutions, finest first."""
    codes = [encode_patch(extract_patch(voxset, point, ri).occupancy, net3d)
             for ri in (1, 2, 3)]
    feat = np.concatenate(codes)
    if normalize:
        n = np.linalg.norm(feat)
        if n > 0:
            feat = feat / n
    return feat


def batch_describe(points, voxset: VoxelIndexSet, net3d: CaeNetwork,
                   normalize: bool = False) -> np.ndarray:
    """(N, 60) features, row order matching the input points."""
    if len(points) == 0:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([describe(p, voxset, net3d, normalize) for p in points])


_FEATURE_MAGIC = b"caelo-f1"


def save_features(path, pixels, features: np.ndarray) -> None:
    """Versioned binary dump: count, then per point r, c, xyz and the
    60 feature values, all float32 LE."""
    feats = np.asarray(features)
    if len(pixels) != feats.shape[0]:
        raise ValueError("pixel/feature count mismatch")
    with open(path, "wb") as f:
        f.write(_FEATURE_MAGIC)
        f.write(struct.pack("<I", len(pixels)))
        for px, feat in zip(pixels, feats):
            rec = np.empty(5 + FEATURE_DIM, dtype="<f4")
            rec[0], rec[1] = px.r, px.c
            rec[2:5] = px.xyz
            rec[5:] = feat
            f.write(rec.tobytes())


def load_features(path):
    """Returns ((r, c, x, y, z) rows, (N, 60) features)."""
    from .sphering import PixelPoint

    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature dump")
        (count,) = struct.unpack("<I", f.read(4))
        raw = np.frombuffer(f.read(), dtype="<f4")
    expected = count * (5 + FEATURE_DIM)
    if raw.size != expected:
        raise ValueError(f"{path}: truncated feature dump")
    raw = raw.reshape(count, 5 + FEATURE_DIM).astype(float)
    pixels = [PixelPoint(int(row[0]), int(row[1]), tuple(row[2:5]))
              for row in raw]
    return pixels, raw[:, 5:]
