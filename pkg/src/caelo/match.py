"""Feature matching, RANSAC rigid pose estimation, and pose error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3


class DegenerateCorrespondencesError(ValueError):
    """Correspondences too few or rank-deficient for a rigid fit."""


@dataclass(frozen=True)
class MatchPair:
    idx_a: int
    idx_b: int
    distance: float


@dataclass(frozen=True)
class RansacParams:
    inlier_threshold: float = 1.0
    min_iterations: int = 100
    max_iterations: int = 10000
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.min_iterations <= self.max_iterations:
            raise ValueError("need 0 < min_iterations <= max_iterations")


@dataclass
class MatchResult:
    pose: PoseSE3                 # maps frame-b points into frame a
    inliers: list[MatchPair]
    iterations_used: int
    inlier_ratio: float


def nn_match(features_a: np.ndarray, features_b: np.ndarray) -> list[MatchPair]:
    """Mutual nearest neighbors in feature space, ties to the lower index."""
    fa = np.asarray(features_a, dtype=float)
    fb = np.asarray(features_b, dtype=float)
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise ValueError("feature lists must be nonempty")
    # squared Euclidean distances, (na, nb)
    d2 = (np.sum(fa * fa, axis=1)[:, None]
          + np.sum(fb * fb, axis=1)[None, :]
          - 2.0 * fa @ fb.T)
    np.maximum(d2, 0.0, out=d2)
    a_to_b = np.argmin(d2, axis=1)     # argmin resolves ties to lower index
    b_to_a = np.argmin(d2, axis=0)
    pairs = []
    for ia, ib in enumerate(a_to_b):
        if b_to_a[ib] == ia:
            pairs.append(MatchPair(ia, int(ib),
                                   float(math.sqrt(d2[ia, ib]))))
    return pairs


def kabsch(points_a: np.ndarray, points_b: np.ndarray) -> PoseSE3:
    """Least-squares rigid transform minimizing sum ||a - (R b + t)||^2."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.shape != b.shape or a.shape[0] < 3:
        raise DegenerateCorrespondencesError(
            "need >= 3 correspondences of equal count")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    h = (b - cb).T @ (a - ca)
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1.0):
        raise DegenerateCorrespondencesError(
            "correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = ca - r @ cb
    return PoseSE3(r, t)


def _inlier_mask(pose, pa, pb, threshold):
    moved = pb @ pose.rotation.T + pose.translation
    resid = np.linalg.norm(pa - moved, axis=1)
    return resid < threshold


def ransac_pose(points_a: np.ndarray, points_b: np.ndarray,
                pairs: list[MatchPair], params: RansacParams) -> MatchResult:
    """RANSAC over candidate pairs with a 3-point Kabsch minimal model.

    Iterates at least min_iterations and at most max_iterations, stopping
    early per the adaptive bound log(1-conf)/log(1-w^3) once the best
    inlier ratio w makes further sampling pointless.  The final pose is a
    Kabsch refit on the best inlier set and the reported inliers are
    recomputed under that refit pose.
    """
    if len(pairs) < 3:
        raise DegenerateCorrespondencesError("need >= 3 candidate pairs")
    pa = np.asarray(points_a, dtype=float)[[p.idx_a for p in pairs]]
    pb = np.asarray(points_b, dtype=float)[[p.idx_b for p in pairs]]
    npairs = len(pairs)
    rng = np.random.default_rng(params.seed)
    best_mask = None
    best_count = -1
    bound = params.max_iterations
    it = 0
    while it < max(params.min_iterations, min(bound, params.max_iterations)):
        it += 1
        sample = rng.choice(npairs, size=3, replace=False)
        try:
            model = kabsch(pa[sample], pb[sample])
        except DegenerateCorrespondencesError:
            continue
        mask = _inlier_mask(model, pa, pb, params.inlier_threshold)
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / npairs
            if w >= 1.0:
                bound = it
            elif w > 0:
                denom = math.log1p(-w ** 3)
                if denom < 0:
                    bound = math.ceil(
                        math.log(1.0 - params.confidence) / denom)
    if best_mask is None or best_count < 3:
        raise DegenerateCorrespondencesError("no valid RANSAC model found")
    pose = kabsch(pa[best_mask], pb[best_mask])
    final_mask = _inlier_mask(pose, pa, pb, params.inlier_threshold)
    if final_mask.sum() >= 3:
        pose = kabsch(pa[final_mask], pb[final_mask])
        final_mask = _inlier_mask(pose, pa, pb, params.inlier_threshold)
    inliers = [pairs[i] for i in np.nonzero(final_mask)[0]]
    return MatchResult(pose=pose, inliers=inliers, iterations_used=it,
                       inlier_ratio=len(inliers) / npairs)


def rte_rre(estimated: PoseSE3, truth: PoseSE3) -> tuple[float, float]:
    """Relative translation error (m) and rotation error (degrees)."""
    rte = float(np.linalg.norm(estimated.translation - truth.translation))
    rrel = truth.rotation.T @ estimated.rotation
    cos_a = np.clip((np.trace(rrel) - 1.0) / 2.0, -1.0, 1.0)
    rre = float(np.degrees(np.arccos(cos_a)))
    return rte, rre


def is_success(rte: float, rre: float) -> bool:
    """Success bar for a frame pair: RTE under 0.5 m and RRE under 1 deg."""
    return rte < 0.5 and rre < 1.0


def save_match_result(result: MatchResult, path) -> None:
    """Text dump: 12-real pose line, iterations, inlier ratio, pair lines."""
    with open(path, "w") as f:
        m = np.hstack([result.pose.rotation,
                       result.pose.translation[:, None]])
        f.write(" ".join(f"{v:.12e}" for v in m.ravel()) + "\n")
        f.write(f"iterations {result.iterations_used}\n")
        f.write(f"inlier_ratio {result.inlier_ratio:.9f}\n")
        for p in result.inliers:
            f.write(f"{p.idx_a} {p.idx_b}\n")
