"""Plain-text configuration for the toolkit.

Format: first line ``caelo-config v1``, then ``key value`` pairs, one per
line; ``#`` starts a comment.  Unknown keys are rejected.  Angles are
given in degrees in the file and converted to radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .detect import DetectorParams
from .match import RansacParams
from .odometry import IcpParams, PipelineConfig
from .sphering import RingParams
from .voxels import VoxelResolutionSet

_HEADER = "caelo-config v1"


@dataclass
class NnParams:
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 10
    seed: int = 0


@dataclass
class Paths:
    data_dir: str = "data"
    weights_2d: str = "weights_2d.bin"
    weights_3d: str = "weights_3d.bin"
    output_dir: str = "out"


@dataclass
class ToolkitConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    nn: NnParams = field(default_factory=NnParams)
    paths: Paths = field(default_factory=Paths)
    pitch_correction_deg: float = 0.0
    threads: int = 1


# key -> (section path, attribute, parser)
def _deg(v):
    return math.radians(float(v))


_SCHEMA = {
    "ring.delta_alpha_deg": ("pipeline.ring", "delta_alpha", _deg),
    "ring.delta_beta_deg": ("pipeline.ring", "delta_beta", _deg),
    "ring.beta_down_deg": ("pipeline.ring", "beta_down", _deg),
    "ring.rows": ("pipeline.ring", "H", int),
    "detector.h": ("pipeline.detector", "h", int),
    "detector.delta": ("pipeline.detector", "delta", float),
    "detector.sigma_min": ("pipeline.detector", "sigma_min", float),
    "detector.n_max": ("pipeline.detector", "n_max", int),
    "eip.h_e": ("pipeline", "h_e", int),
    "voxel.s1": ("pipeline.voxel", "s1", float),
    "voxel.patch_size": ("pipeline.voxel", "patch_size", int),
    "nn.lr": ("nn", "lr", float),
    "nn.batch": ("nn", "batch", int),
    "nn.epochs": ("nn", "epochs", int),
    "nn.seed": ("nn", "seed", int),
    "ransac.inlier_threshold": ("pipeline.ransac", "inlier_threshold", float),
    "ransac.min_iterations": ("pipeline.ransac", "min_iterations", int),
    "ransac.max_iterations": ("pipeline.ransac", "max_iterations", int),
    "ransac.confidence": ("pipeline.ransac", "confidence", float),
    "ransac.seed": ("pipeline.ransac", "seed", int),
    "icp.d0": ("pipeline.icp", "d0", float),
    "icp.decay": ("pipeline.icp", "decay", float),
    "icp.max_iterations": ("pipeline.icp", "max_iterations", int),
    "icp.epsilon": ("pipeline.icp", "epsilon", float),
    "ingest.pitch_correction_deg": ("", "pitch_correction_deg", float),
    "threads": ("", "threads", int),
    "paths.data_dir": ("paths", "data_dir", str),
    "paths.weights_2d": ("paths", "weights_2d", str),
    "paths.weights_3d": ("paths", "weights_3d", str),
    "paths.output_dir": ("paths", "output_dir", str),
}


def _resolve(cfg: ToolkitConfig, section: str):
    obj = cfg
    if section:
        for part in section.split("."):
            obj = getattr(obj, part)
    return obj


def parse_config(text: str) -> ToolkitConfig:
    lines = text.splitlines()
    body = [ln.split("#", 1)[0].strip() for ln in lines]
    body = [ln for ln in body if ln]
    if not body or body[0] != _HEADER:
        raise ValueError(f"config must start with '{_HEADER}'")
    cfg = ToolkitConfig()
    # frozen dataclasses are rebuilt with replace(), so collect per section
    pending: dict[str, dict] = {}
    for ln in body[1:]:
        parts = ln.split(None, 1)
        if len(parts) != 2:
            raise ValueError(f"malformed config line: {ln!r}")
        key, value = parts
        if key not in _SCHEMA:
            raise ValueError(f"unknown config key: {key!r}")
        section, attr, conv = _SCHEMA[key]
        pending.setdefault(section, {})[attr] = conv(value)
    frozen_sections = {"pipeline.ring", "pipeline.detector", "pipeline.voxel",
                       "pipeline.ransac"}
    for section, attrs in pending.items():
        if section in frozen_sections:
            parent_path, name = section.rsplit(".", 1)
            parent = _resolve(cfg, parent_path)
            setattr(parent, name, replace(getattr(parent, name), **attrs))
        else:
            obj = _resolve(cfg, section)
            for attr, value in attrs.items():
                setattr(obj, attr, value)
    return cfg


def load_config(path) -> ToolkitConfig:
    with open(path) as f:
        return parse_config(f.read())


def default_config_text() -> str:
    """Annotated default config; 'method' marks published operating points,
    'toolkit' marks implementation-chosen defaults."""
    return """\
caelo-config v1
# projection geometry
ring.delta_alpha_deg 0.2          # method
ring.delta_beta_deg 0.4254        # method
ring.beta_down_deg -24.8          # method (sensor vertical FOV floor)
ring.rows 69                      # method
# interest point detection
detector.h 2                      # toolkit (window half-size)
detector.delta 0.2                # method (score threshold)
detector.sigma_min 10.0           # method (min range, meters)
detector.n_max 1024               # method
eip.h_e 7                         # method (EIP window half-size)
# voxel features
voxel.s1 0.02                     # method (finest voxel, meters)
voxel.patch_size 16               # method
# training
nn.lr 0.001                       # toolkit
nn.batch 32                       # toolkit
nn.epochs 10                      # method
nn.seed 0                         # toolkit
# frame-to-frame matching
ransac.inlier_threshold 1.0       # method (meters)
ransac.min_iterations 100         # method
ransac.max_iterations 10000       # method
ransac.confidence 0.999           # toolkit
ransac.seed 0                     # toolkit
# refinement
icp.d0 2.0                        # toolkit (initial rejection threshold)
icp.decay 0.9                     # toolkit
icp.max_iterations 50             # toolkit
icp.epsilon 1e-6                  # toolkit
# ingest
ingest.pitch_correction_deg 0.0   # toolkit (0 disables the correction)
threads 1                         # toolkit
# paths
paths.data_dir data
paths.weights_2d weights_2d.bin
paths.weights_3d weights_3d.bin
paths.output_dir out
"""
