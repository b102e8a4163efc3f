"""Interest-point detection on the spherical ring.

Pipeline: response map from the 2D auto-encoder's second conv layer,
per-pixel minimum L2 feature difference against valid neighbors, then
threshold / range / count filtering.  Channel sums run lowest index
first so the vectorized score map is bit-identical to a scalar loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import CaeNetwork
from .sphering import PixelPoint, SphericalRing


@dataclass(frozen=True)
class DetectorParams:
    h: int = 2              # neighbor half-size, pixels
    delta: float = 0.2      # score threshold
    n_max: int = 1024       # max interest points
    sigma_min: float = 10.0  # min range in meters

    def __post_init__(self):
        if self.h < 1 or self.n_max < 1 or self.sigma_min < 0:
            raise ValueError("invalid detector parameters")


@dataclass
class ScoreMap:
    scores: np.ndarray  # H x W
    valid: np.ndarray   # H x W bool


def crop_to_multiple(ring: SphericalRing, multiple: int = 4) -> SphericalRing:
    """Drop trailing rows/columns so both dims divide `multiple` (the two
    2x pools must invert exactly)."""
    h = ring.H - ring.H % multiple
    w = ring.W - ring.W % multiple
    if h == ring.H and w == ring.W:
        return ring
    return SphericalRing(ring.grid[:h, :w], ring.mask[:h, :w], ring.params,
                         ring.out_of_range)


def response(ring: SphericalRing, net: CaeNetwork) -> np.ndarray:
    """H x W x N2 activations of the response layer."""
    if net.response_layer_index is None:
        raise ValueError("network has no response layer")
    out = net.forward(ring.grid[None, ...], upto=net.response_layer_index)
    return out[0]


def score_map(resp: np.ndarray, mask: np.ndarray,
              params: DetectorParams) -> ScoreMap:
    h = params.h
    hh, ww, nc = resp.shape
    scores = np.zeros((hh, ww))
    valid = np.zeros((hh, ww), dtype=bool)
    if hh <= 2 * h or ww <= 2 * h:
        return ScoreMap(scores, valid)
    interior = (slice(h, hh - h), slice(h, ww - h))
    center = resp[interior]
    center_mask = mask[interior]
    best = np.full(center.shape[:2], np.inf)
    any_neighbor = np.zeros(center.shape[:2], dtype=bool)
    for u in range(-h, h + 1):
        for v in range(-h, h + 1):
            if u == 0 and v == 0:
                continue
            nb = resp[h + u:hh - h + u, h + v:ww - h + v]
            nb_mask = mask[h + u:hh - h + u, h + v:ww - h + v]
            d = center - nb
            sq = d * d
            # sequential lowest-channel-first accumulation (oracle parity)
            s = sq[..., 0].copy()
            for k in range(1, nc):
                s += sq[..., k]
            norm = np.sqrt(s)
            better = nb_mask & (norm < best)
            best[better] = norm[better]
            any_neighbor |= nb_mask
    ok = center_mask & any_neighbor
    sc = np.zeros_like(best)
    sc[ok] = best[ok]
    scores[interior] = sc
    valid[interior] = ok
    return ScoreMap(scores, valid)


def select_points(ring: SphericalRing, smap: ScoreMap,
                  params: DetectorParams) -> list[PixelPoint]:
    """Top-scoring valid pixels above the threshold and beyond the minimum
    range, at most n_max, sorted by score descending then (r, c)."""
    rs, cs = np.nonzero(smap.valid)
    if rs.size == 0:
        return []
    scores = smap.scores[rs, cs]
    xyz = ring.grid[rs, cs]
    rng = np.linalg.norm(xyz, axis=1)
    keep = (scores > params.delta) & (rng >= params.sigma_min)
    rs, cs, scores, xyz = rs[keep], cs[keep], scores[keep], xyz[keep]
    order = np.lexsort((cs, rs, -scores))[:params.n_max]
    return [PixelPoint(int(rs[i]), int(cs[i]), tuple(xyz[i])) for i in order]


def dump_score_map(smap: ScoreMap, path) -> None:
    """Plain-text grid for inspection; invalid pixels written as '-'."""
    with open(path, "w") as f:
        f.write(f"scoremap {smap.scores.shape[0]} {smap.scores.shape[1]}\n")
        for r in range(smap.scores.shape[0]):
            row = ("-" if not smap.valid[r, c] else f"{smap.scores[r, c]:.6g}"
                   for c in range(smap.scores.shape[1]))
            f.write(" ".join(row) + "\n")
