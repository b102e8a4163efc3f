"""Frame-to-frame odometry, keyframe selection, ICP refinement on EIPs,
and the backward pose update that spreads a keyframe's refinement over
the intermediate frames."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import describe as describe_mod
from . import detect as detect_mod
from . import match as match_mod
from . import sphering, voxels
from .geometry import (GimbalLockError, PoseSE3, _fractional_pose_rotvec,
                       accumulate, compose, fractional_pose, inverse)
from .ingest import PointCloud, Trajectory


@dataclass
class IcpParams:
    max_iterations: int = 50
    d0: float = 2.0          # initial rejection threshold, meters
    decay: float = 0.9       # threshold decay per iteration
    epsilon: float = 1e-6    # convergence threshold on pose change

    def __post_init__(self):
        if self.d0 <= 0 or not 0 < self.decay < 1:
            raise ValueError("need d0 > 0 and 0 < decay < 1")


@dataclass
class IcpResult:
    pose: PoseSE3
    iterations: int
    residual_rms: float
    starved: bool = False    # fewer than 3 kept pairs at some iteration


@dataclass
class FrameRecord:
    index: int
    pixels: list = field(default_factory=list)     # interest points
    features: np.ndarray | None = None
    eips: PointCloud | None = None
    relative: PoseSE3 = None                       # pose vs previous frame
    matches: list = field(default_factory=list)    # match set to next frame
    inlier_ratio: float = 0.0
    iterations: int = 0
    match_failed: bool = False


@dataclass
class KeyframeChain:
    indices: list[int]
    refined: list[PoseSE3] = field(default_factory=list)  # per segment


def transfer(match_set, index_subset):
    """Indices in the next frame reached from `index_subset` through the
    match set; an empty result means the transfer failed."""
    subset = set(index_subset)
    return {p.idx_b for p in match_set if p.idx_a in subset}


def select_keyframes(frames: list[FrameRecord]) -> KeyframeChain:
    """Chain matched indices forward; the frame before the first failed
    transfer becomes the next keyframe.  The last frame always ends the
    chain."""
    n = len(frames)
    if n == 0:
        raise ValueError("need at least one frame")
    keyframes = [0]
    k = 0
    while k < n - 1:
        current = {p.idx_a for p in frames[k].matches}
        j = k       # last frame reached with a nonempty transferred set
        m = k
        while m < n - 1:
            current = transfer(frames[m].matches, current)
            if not current:
                break
            m += 1
            j = m
        if j == k:
            # transfer failed immediately; step one frame to keep progress
            j = k + 1
        keyframes.append(j)
        k = j
    if keyframes[-1] != n - 1:
        keyframes.append(n - 1)
    return KeyframeChain(indices=keyframes)


def icp_refine(eips_prev: PointCloud, eips_curr: PointCloud,
               initial: PoseSE3, params: IcpParams) -> IcpResult:
    """Point-to-point ICP from the current keyframe's EIPs onto the
    previous keyframe's, with an exponentially decaying rejection
    threshold d0 * decay^iter."""
    a = np.asarray(eips_prev.points, dtype=float)
    b = np.asarray(eips_curr.points, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("EIP clouds must be nonempty")
    tree = cKDTree(a)
    pose = initial
    starved = False
    rms = np.inf
    it = 0
    for it in range(1, params.max_iterations + 1):
        threshold = params.d0 * params.decay ** (it - 1)
        moved = pose.apply(b)
        dist, idx = tree.query(moved)
        keep = dist < threshold
        if keep.sum() < 3:
            starved = True
            break
        try:
            new_pose = match_mod.kabsch(a[idx[keep]], b[keep])
        except match_mod.DegenerateCorrespondencesError:
            starved = True
            break
        delta = compose(inverse(pose), new_pose)
        change = (np.linalg.norm(delta.translation)
                  + np.linalg.norm(delta.rotation - np.eye(3)))
        pose = new_pose
        moved = pose.apply(b[keep])
        rms = float(np.sqrt(np.mean(np.sum((a[idx[keep]] - moved) ** 2,
                                           axis=1))))
        if change < params.epsilon:
            break
    return IcpResult(pose=pose, iterations=it, residual_rms=rms,
                     starved=starved)


def backward_update(relatives: list[PoseSE3],
                    delta_star: PoseSE3) -> list[PoseSE3]:
    """Distribute a keyframe pose change over a segment's relative poses.

    relatives[i] is the pose of frame i+1 relative to frame i within the
    segment (frames 0..n).  delta_star is the refined endpoint pose times
    the inverse of the original accumulated endpoint pose.  The returned
    relatives accumulate exactly to delta_star times the original
    endpoint, and intermediate frames move by the (i/n)-fractional part
    of delta_star.
    """
    n = len(relatives)
    if n == 0:
        raise ValueError("segment must contain at least one relative pose")
    t0n = accumulate(relatives, 0, n - 1)
    target_end = compose(delta_star, t0n)
    # per-frame target accumulated poses
    new_accumulated = []
    for i in range(1, n):
        try:
            frac = fractional_pose(delta_star, i / n)
        except GimbalLockError:
            frac = _fractional_pose_rotvec(delta_star, i / n)
        suffix = accumulate(relatives, i, n - 1)      # original T_{i+1,n}
        new_accumulated.append(compose(compose(frac, t0n), inverse(suffix)))
    new_accumulated.append(target_end)
    updated = []
    prev = PoseSE3.identity()
    for acc in new_accumulated:
        updated.append(compose(inverse(prev), acc))
        prev = acc
    return updated


@dataclass
class PipelineConfig:
    ring: sphering.RingParams = field(default_factory=sphering.RingParams)
    detector: detect_mod.DetectorParams = field(
        default_factory=detect_mod.DetectorParams)
    voxel: voxels.VoxelResolutionSet = field(
        default_factory=voxels.VoxelResolutionSet)
    ransac: match_mod.RansacParams = field(
        default_factory=match_mod.RansacParams)
    icp: IcpParams = field(default_factory=IcpParams)
    h_e: int = 7


@dataclass
class PipelineResult:
    initial: Trajectory
    refined: Trajectory
    keyframes: KeyframeChain
    frames: list[FrameRecord]


def process_frame(cloud: PointCloud, config: PipelineConfig, net2d, net3d,
                  index: int = 0) -> FrameRecord:
    """Project, detect, extract EIPs, voxelize, and describe one frame."""
    ring = sphering.project(cloud, config.ring)
    ring = detect_mod.crop_to_multiple(ring)
    resp = detect_mod.response(ring, net2d)
    smap = detect_mod.score_map(resp, ring.mask, config.detector)
    pixels = detect_mod.select_points(ring, smap, config.detector)
    if pixels:
        eips = sphering.extract_eips(ring, pixels, config.h_e)
    else:
        eips = PointCloud(points=np.zeros((0, 3)))
    voxset = voxels.voxelize(cloud, config.voxel)
    points = [np.array(p.xyz) for p in pixels]
    feats = describe_mod.batch_describe(points, voxset, net3d)
    return FrameRecord(index=index, pixels=pixels, features=feats, eips=eips)


def run_pipeline(clouds, config: PipelineConfig, net2d,
                 net3d) -> PipelineResult:
    """Full odometry: frame-to-frame RANSAC poses, keyframe selection,
    per-segment ICP refinement, and backward pose update."""
    if len(clouds) < 2:
        raise ValueError("need at least two frames")
    frames = [process_frame(c, config, net2d, net3d, i)
              for i, c in enumerate(clouds)]
    frames[0].relative = PoseSE3.identity()
    prev_relative = PoseSE3.identity()
    for i in range(1, len(frames)):
        prev, curr = frames[i - 1], frames[i]
        try:
            pairs = match_mod.nn_match(prev.features, curr.features)
            result = match_mod.ransac_pose(
                np.array([p.xyz for p in prev.pixels]),
                np.array([p.xyz for p in curr.pixels]),
                pairs, config.ransac)
            curr.relative = result.pose
            curr.inlier_ratio = result.inlier_ratio
            curr.iterations = result.iterations_used
            prev.matches = result.inliers
            prev_relative = result.pose
        except (ValueError, match_mod.DegenerateCorrespondencesError):
            # fall back to the previous relative pose, flag the frame
            curr.relative = prev_relative
            curr.match_failed = True
    relatives = [f.relative for f in frames]
    initial = Trajectory([accumulate(relatives, 0, i)
                          for i in range(len(relatives))])
    chain = select_keyframes(frames)
    refined_relatives = list(relatives)
    for seg in range(len(chain.indices) - 1):
        k0, k1 = chain.indices[seg], chain.indices[seg + 1]
        segment = relatives[k0 + 1:k1 + 1]
        seg_pose = accumulate(relatives, k0 + 1, k1)
        icp_result = icp_refine(frames[k0].eips, frames[k1].eips,
                                seg_pose, config.icp)
        chain.refined.append(icp_result.pose)
        delta_star = compose(icp_result.pose, inverse(seg_pose))
        updated = backward_update(segment, delta_star)
        refined_relatives[k0 + 1:k1 + 1] = updated
    refined = Trajectory([accumulate(refined_relatives, 0, i)
                          for i in range(len(refined_relatives))])
    return PipelineResult(initial=initial, refined=refined,
                          keyframes=chain, frames=frames)


def diagnostics_rows(result: PipelineResult,
                     truth: Trajectory | None = None) -> list[dict]:
    """Per-frame diagnostics; RTE/RRE filled in when truth is supplied."""
    rows = []
    kf = set(result.keyframes.indices)
    for i, frame in enumerate(result.frames):
        row = {
            "frame": i,
            "inlier_ratio": frame.inlier_ratio,
            "iterations": frame.iterations,
            "rte": "",
            "rre": "",
            "success": "",
            "keyframe_flag": int(i in kf),
            "match_failed": int(frame.match_failed),
        }
        if truth is not None and 0 < i < len(truth):
            rel_true = compose(inverse(truth[i - 1]), truth[i])
            rte, rre = match_mod.rte_rre(frame.relative, rel_true)
            row["rte"] = f"{rte:.9f}"
            row["rre"] = f"{rre:.9f}"
            row["success"] = int(match_mod.is_success(rte, rre))
        rows.append(row)
    return rows
