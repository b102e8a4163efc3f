"""Spherical-ring projection of LiDAR frames and EIP extraction.

Column index decreases with azimuth (c = (pi - atan2(y, x)) / dalpha) and
row index grows downward from the top beam; both are floored to integers
and out-of-range points are discarded.  Channels store the raw (x, y, z)
of the point that landed in the pixel, later arrivals overwriting earlier
ones.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .ingest import PointCloud


@dataclass(frozen=True)
class RingParams:
    delta_alpha: float = math.radians(0.2)      # rad / column
    delta_beta: float = math.radians(0.4254)    # rad / row
    beta_down: float = math.radians(-24.8)      # pitch of lowest beam
    H: int = 69
    C: int = 3

    def __post_init__(self):
        if self.delta_alpha <= 0 or self.delta_beta <= 0:
            raise ValueError("angle resolutions must be positive")
        if self.H < 1:
            raise ValueError("H must be >= 1")

    @property
    def W(self) -> int:
        return int(math.ceil(2 * math.pi / self.delta_alpha))


@dataclass
class SphericalRing:
    grid: np.ndarray   # H x W x C float
    mask: np.ndarray   # H x W bool
    params: RingParams
    out_of_range: int = 0

    @property
    def H(self):
        return self.grid.shape[0]

    @property
    def W(self):
        return self.grid.shape[1]


@dataclass(frozen=True)
class PixelPoint:
    r: int
    c: int
    xyz: tuple


def project_indices(points: np.ndarray, params: RingParams):
    """Floored (r, c) grid indices for an (N, 3) array of points."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    rng = np.sqrt(x * x + y * y + z * z)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.floor((math.pi - np.arctan2(y, x)) / params.delta_alpha)
        r = np.floor(params.H - (np.arcsin(z / rng) / params.delta_beta
                                 - params.beta_down / params.delta_beta))
    return r, c


def project(cloud: PointCloud, params: RingParams) -> SphericalRing:
    H, W, C = params.H, params.W, params.C
    grid = np.zeros((H, W, C))
    mask = np.zeros((H, W), dtype=bool)
    pts = cloud.points
    if len(pts) == 0:
        return SphericalRing(grid, mask, params)
    r, c = project_indices(pts, params)
    ok = np.isfinite(r) & np.isfinite(c)
    ok &= (r >= 0) & (r < H) & (c >= 0) & (c < W)
    out_of_range = int((~ok).sum())
    r = r[ok].astype(int)
    c = c[ok].astype(int)
    pts = pts[ok]
    # last point into a pixel wins: keep the last occurrence of each cell
    lin = r * W + c
    _, first_rev = np.unique(lin[::-1], return_index=True)
    keep = len(lin) - 1 - first_rev
    grid[r[keep], c[keep]] = pts[keep]
    mask[r[keep], c[keep]] = True
    return SphericalRing(grid, mask, params, out_of_range)


def unproject(ring: SphericalRing, r: int, c: int) -> np.ndarray:
    if not ring.mask[r, c]:
        raise ValueError(f"pixel ({r}, {c}) holds no point")
    return ring.grid[r, c].copy()


def extract_eips(ring: SphericalRing, seeds, h_e: int) -> PointCloud:
    """Union of valid ring points in the (2*h_e+1)^2 window of each seed."""
    H, W = ring.mask.shape
    cells = set()
    for seed in seeds:
        r0, c0 = seed.r, seed.c
        if not ring.mask[r0, c0]:
            raise ValueError(f"seed ({r0}, {c0}) is not a valid pixel")
        for r in range(max(0, r0 - h_e), min(H, r0 + h_e + 1)):
            for c in range(max(0, c0 - h_e), min(W, c0 + h_e + 1)):
                if ring.mask[r, c]:
                    cells.add((r, c))
    if not cells:
        return PointCloud(points=np.zeros((0, 3)))
    order = sorted(cells)
    pts = np.array([ring.grid[r, c] for r, c in order])
    return PointCloud(points=pts)


_RING_MAGIC = b"caelo-r1"


def save_ring(ring: SphericalRing, path) -> None:
    """Debug dump: magic, H/W/C int32, float32 grid, bit-packed mask."""
    H, W, C = ring.grid.shape
    with open(path, "wb") as f:
        f.write(_RING_MAGIC)
        f.write(struct.pack("<iii", H, W, C))
        f.write(ring.grid.astype("<f4").tobytes())
        f.write(np.packbits(ring.mask.ravel()).tobytes())


def load_ring(path, params: RingParams | None = None) -> SphericalRing:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _RING_MAGIC:
            raise ValueError("not a ring dump file")
        H, W, C = struct.unpack("<iii", f.read(12))
        grid = np.frombuffer(f.read(H * W * C * 4), dtype="<f4")
        grid = grid.reshape(H, W, C).astype(float)
        nbits = H * W
        packed = np.frombuffer(f.read((nbits + 7) // 8), dtype=np.uint8)
        mask = np.unpackbits(packed)[:nbits].reshape(H, W).astype(bool)
    if params is None:
        params = RingParams(H=H, C=C)
    return SphericalRing(grid, mask, params)
