"""Multi-resolution occupied-voxel index sets and binary occupancy patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import PointCloud


@dataclass(frozen=True)
class VoxelResolutionSet:
    """Three voxel sizes in a fixed 1:8:32 ratio plus the cubic patch size."""

    s1: float = 0.02
    patch_size: int = 16

    def __post_init__(self):
        if self.s1 <= 0:
            raise ValueError("base voxel size must be positive")
        if self.patch_size < 2 or self.patch_size % 2 != 0:
            raise ValueError("patch_size must be a positive even integer")

    @property
    def sizes(self) -> tuple:
        return (self.s1, 8.0 * self.s1, 32.0 * self.s1)

    def size(self, resolution_index: int) -> float:
        # resolution_index is 1-based
        return self.sizes[resolution_index - 1]


@dataclass
class VoxelIndexSet:
    """Per-resolution sets of occupied integer voxel indices."""

    res: VoxelResolutionSet
    sets: tuple  # three frozensets of (i, j, k) tuples

    def occupied(self, resolution_index: int):
        return self.sets[resolution_index - 1]


@dataclass
class VoxelPatch:
    occupancy: np.ndarray     # S_p^3 array of 0/1
    center_point: np.ndarray
    resolution: float


def voxelize(cloud: PointCloud, res: VoxelResolutionSet) -> VoxelIndexSet:
    """Occupied indices floor(p / size) at each of the three resolutions."""
    pts = np.asarray(cloud.points, dtype=float)
    sets = []
    for size in res.sizes:
        if len(pts) == 0:
            sets.append(frozenset())
            continue
        idx = np.floor(pts / size).astype(np.int64)
        sets.append(frozenset(map(tuple, idx)))
    return VoxelIndexSet(res=res, sets=tuple(sets))


def extract_patch(voxset: VoxelIndexSet, point: np.ndarray,
                  resolution_index: int) -> VoxelPatch:
    """Occupancy over indices [v - S_p/2, v + S_p/2 - 1]^3 around the
    voxel v containing the query point."""
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("query point must be finite")
    size = voxset.res.size(resolution_index)
    sp = voxset.res.patch_size
    half = sp // 2
    v = np.floor(point / size).astype(np.int64)
    occupied = voxset.occupied(resolution_index)
    occ = np.zeros((sp, sp, sp), dtype=np.uint8)
    base = v - half
    for i in range(sp):
        for j in range(sp):
            for k in range(sp):
                if (base[0] + i, base[1] + j, base[2] + k) in occupied:
                    occ[i, j, k] = 1
    return VoxelPatch(occupancy=occ, center_point=point, resolution=size)


def coverage_extent(res: VoxelResolutionSet, resolution_index: int) -> float:
    """Side length in meters of a patch at the given resolution."""
    return res.patch_size * res.size(resolution_index)


def dump_index_set(voxset: VoxelIndexSet, path) -> None:
    """Debug dump: sorted 'res i j k' text lines per resolution."""
    with open(path, "w") as f:
        for ri in (1, 2, 3):
            for ijk in sorted(voxset.occupied(ri)):
                f.write(f"{ri} {ijk[0]} {ijk[1]} {ijk[2]}\n")
