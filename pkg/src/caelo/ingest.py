"""Frame and pose I/O plus a synthetic multi-beam scan generator.

File formats:
  - velodyne ``.bin``: packed little-endian float32 quadruples (x, y, z, i).
  - pose ``.txt``: one line per frame, 12 whitespace-separated reals forming
    a row-major 3x4 [R|t] matrix.
  - scene spec: plain text, header line ``synthscene v1``, then key/value
    lines and one line per primitive (see parse_scene_spec).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerXYZ, PoseSE3, eulers2r, inverse


@dataclass
class PointCloud:
    """One LiDAR frame: (N, 3) float positions plus optional intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None
    dropped: int = 0

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Trajectory:
    """Per-frame poses in the frame-0 coordinate system."""

    poses: list[PoseSE3] = field(default_factory=list)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]


def read_kitti_bin(path) -> PointCloud:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise ValueError(f"{path}: byte length not divisible by 16")
    data = raw.reshape(-1, 4).astype(float)
    finite = np.isfinite(data[:, :3]).all(axis=1)
    dropped = int((~finite).sum())
    data = data[finite]
    return PointCloud(points=data[:, :3], intensity=data[:, 3], dropped=dropped)


def write_kitti_bin(cloud: PointCloud, path) -> None:
    n = len(cloud)
    out = np.zeros((n, 4), dtype="<f4")
    out[:, :3] = cloud.points
    if cloud.intensity is not None:
        out[:, 3] = cloud.intensity
    out.tofile(path)


def read_poses(path) -> Trajectory:
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 values, "
                                 f"got {len(vals)}")
            try:
                m = np.array([float(v) for v in vals]).reshape(3, 4)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            poses.append(PoseSE3(m[:, :3], m[:, 3]))
    return Trajectory(poses)


def write_poses(traj: Trajectory, path) -> None:
    with open(path, "w") as f:
        for pose in traj.poses:
            m = np.hstack([pose.rotation, pose.translation[:, None]])
            f.write(" ".join(f"{v:.12e}" for v in m.ravel()) + "\n")


def apply_pitch_correction(cloud: PointCloud, degrees: float) -> PointCloud:
    """Shift every point's elevation angle by a constant (approximate
    sensor-mount correction; default pipelines leave it off)."""
    if degrees == 0.0:
        return cloud
    pts = cloud.points
    rng_xy = np.hypot(pts[:, 0], pts[:, 1])
    rng_full = np.linalg.norm(pts, axis=1)
    el = np.arctan2(pts[:, 2], rng_xy) + math.radians(degrees)
    az = np.arctan2(pts[:, 1], pts[:, 0])
    out = np.stack([rng_full * np.cos(el) * np.cos(az),
                    rng_full * np.cos(el) * np.sin(az),
                    rng_full * np.sin(el)], axis=1)
    return PointCloud(points=out, intensity=cloud.intensity,
                      dropped=cloud.dropped)


# --- synthetic scenes -------------------------------------------------------

@dataclass(frozen=True)
class Primitive:
    kind: str              # plane | box | cylinder
    pose: PoseSE3
    extents: tuple        # plane: (ex, ey); box: (ex, ey, ez);
                          # cylinder: (radius, half_height)


@dataclass
class SynthSceneSpec:
    primitives: list[Primitive]
    beam_count: int = 64
    azimuth_step: float = 0.2          # degrees
    vertical_fov: tuple = (-24.8, 2.0)  # degrees
    noise_sigma: float = 0.0           # meters
    seed: int = 0

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError("beam_count must be >= 2")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth_step must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _primitive_from_fields(kind, fields):
    counts = {"plane": 8, "box": 9, "cylinder": 8}
    if len(fields) != counts[kind]:
        raise ValueError(f"{kind} expects {counts[kind]} numbers, "
                         f"got {len(fields)}")
    cx, cy, cz, rx, ry, rz = fields[:6]
    pose = PoseSE3(eulers2r(EulerXYZ(math.radians(rx), math.radians(ry),
                                     math.radians(rz))),
                   np.array([cx, cy, cz]))
    return Primitive(kind, pose, tuple(fields[6:]))


def parse_scene_spec(text: str) -> SynthSceneSpec:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "synthscene v1":
        raise ValueError("scene spec must start with 'synthscene v1'")
    spec = SynthSceneSpec(primitives=[])
    for ln in lines[1:]:
        key, *rest = ln.split()
        if key in ("plane", "box", "cylinder"):
            spec.primitives.append(
                _primitive_from_fields(key, [float(v) for v in rest]))
        elif key == "beams":
            spec.beam_count = int(rest[0])
        elif key == "azimuth_step":
            spec.azimuth_step = float(rest[0])
        elif key == "vfov":
            spec.vertical_fov = (float(rest[0]), float(rest[1]))
        elif key == "noise_sigma":
            spec.noise_sigma = float(rest[0])
        elif key == "seed":
            spec.seed = int(rest[0])
        else:
            raise ValueError(f"unknown scene spec key: {key!r}")
    spec.__post_init__()
    return spec


def load_scene_spec(path) -> SynthSceneSpec:
    with open(path) as f:
        return parse_scene_spec(f.read())


def format_scene_spec(spec: SynthSceneSpec) -> str:
    buf = io.StringIO()
    buf.write("synthscene v1\n")
    buf.write(f"beams {spec.beam_count}\n")
    buf.write(f"azimuth_step {spec.azimuth_step}\n")
    buf.write(f"vfov {spec.vertical_fov[0]} {spec.vertical_fov[1]}\n")
    buf.write(f"noise_sigma {spec.noise_sigma}\n")
    buf.write(f"seed {spec.seed}\n")
    for p in spec.primitives:
        from .geometry import r2eulers
        e = r2eulers(p.pose.rotation)
        vals = [*p.pose.translation,
                math.degrees(e.rx), math.degrees(e.ry), math.degrees(e.rz),
                *p.extents]
        buf.write(p.kind + " " + " ".join(f"{v:.9g}" for v in vals) + "\n")
    return buf.getvalue()


def _ray_plane(origins, dirs, ex, ey):
    """Hit distances to the z=0 rectangle [-ex, ex] x [-ey, ey].

    origins, dirs: (N, 3).  Returns (N,) distances, inf where missed.
    """
    dz = dirs[:, 2]
    safe = np.where(np.abs(dz) >= 1e-12, dz, 1.0)
    t = -origins[:, 2] / safe
    hx = origins[:, 0] + t * dirs[:, 0]
    hy = origins[:, 1] + t * dirs[:, 1]
    ok = ((np.abs(dz) >= 1e-12) & (t > 1e-9)
          & (np.abs(hx) <= ex) & (np.abs(hy) <= ey))
    return np.where(ok, t, np.inf)


def _ray_box(origins, dirs, ex, ey, ez):
    """Batched slab test against the axis-aligned box of given half extents."""
    half = (ex, ey, ez)
    n = len(dirs)
    tmin = np.full(n, 1e-9)
    tmax = np.full(n, np.inf)
    inside_parallel = np.ones(n, dtype=bool)
    for axis in range(3):
        d = dirs[:, axis]
        o = origins[:, axis]
        parallel = np.abs(d) < 1e-12
        inside_parallel &= ~(parallel & (np.abs(o) > half[axis]))
        safe = np.where(parallel, 1.0, d)
        t1 = (-half[axis] - o) / safe
        t2 = (half[axis] - o) / safe
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        tmin = np.where(parallel, tmin, np.maximum(tmin, lo))
        tmax = np.where(parallel, tmax, np.minimum(tmax, hi))
    ok = inside_parallel & (tmin <= tmax) & (tmin > 1e-9)
    return np.where(ok, tmin, np.inf)


def _ray_cylinder(origins, dirs, radius, half_height):
    """Batched finite cylinder about the local z axis: side wall and caps."""
    n = len(dirs)
    best = np.full(n, np.inf)
    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
    side = a > 1e-12
    safe_a = np.where(side, a, 1.0)
    b = 2.0 * (origins[:, 0] * dirs[:, 0] + origins[:, 1] * dirs[:, 1])
    c = origins[:, 0] ** 2 + origins[:, 1] ** 2 - radius ** 2
    disc = b * b - 4 * a * c
    has_root = side & (disc >= 0)
    sq = np.sqrt(np.where(has_root, disc, 0.0))
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2.0 * safe_a)
        z = origins[:, 2] + t * dirs[:, 2]
        ok = has_root & (t > 1e-9) & (np.abs(z) <= half_height)
        best = np.where(ok & (t < best), t, best)
    dz = dirs[:, 2]
    vertical = np.abs(dz) > 1e-12
    safe_dz = np.where(vertical, dz, 1.0)
    for zcap in (-half_height, half_height):
        t = (zcap - origins[:, 2]) / safe_dz
        hx = origins[:, 0] + t * dirs[:, 0]
        hy = origins[:, 1] + t * dirs[:, 1]
        ok = vertical & (t > 1e-9) & (hx * hx + hy * hy <= radius ** 2)
        best = np.where(ok & (t < best), t, best)
    return best


_HIT_FUNCS = {"plane": _ray_plane, "box": _ray_box, "cylinder": _ray_cylinder}


def ray_directions(spec: SynthSceneSpec) -> np.ndarray:
    """Unit ray directions in the sensor frame, one per (beam, azimuth)."""
    lo, hi = (math.radians(v) for v in spec.vertical_fov)
    elevations = np.linspace(lo, hi, spec.beam_count)
    n_az = int(round(360.0 / spec.azimuth_step))
    azimuths = np.radians(np.arange(n_az) * spec.azimuth_step)
    el, az = np.meshgrid(elevations, azimuths, indexing="ij")
    dirs = np.stack([np.cos(el) * np.cos(az),
                     np.cos(el) * np.sin(az),
                     np.sin(el)], axis=-1)
    return dirs.reshape(-1, 3)


def _cast_rays(spec: SynthSceneSpec, origin: np.ndarray,
               dirs_world: np.ndarray) -> np.ndarray:
    """Nearest hit distance per world-frame ray from a shared origin."""
    best = np.full(len(dirs_world), np.inf)
    for prim in spec.primitives:
        inv = inverse(prim.pose)
        o = np.broadcast_to(inv.apply(origin[None, :])[0],
                            dirs_world.shape)
        d = dirs_world @ inv.rotation.T
        t = _HIT_FUNCS[prim.kind](o, d, *prim.extents)
        best = np.minimum(best, t)
    return best


def cast_ray(spec: SynthSceneSpec, origin: np.ndarray,
             direction: np.ndarray) -> float:
    """Nearest hit distance of a single world-frame ray, or inf."""
    return float(_cast_rays(spec, np.asarray(origin, dtype=float),
                            np.asarray(direction, dtype=float)[None, :])[0])


def synth_scan(spec: SynthSceneSpec, sensor_pose: PoseSE3) -> PointCloud:
    """Scan the scene from a pose; returns sensor-frame points.

    Deterministic given spec.seed; one ray per (beam, azimuth) pair,
    Gaussian range noise of spec.noise_sigma applied along each ray.
    """
    dirs_sensor = ray_directions(spec)
    dirs_world = dirs_sensor @ sensor_pose.rotation.T
    origin = sensor_pose.translation
    ranges = _cast_rays(spec, origin, dirs_world)
    hit = np.isfinite(ranges)
    ranges = ranges[hit]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.noise_sigma, size=dirs_sensor.shape[0])
        ranges = ranges + noise[hit]
    points = dirs_sensor[hit] * ranges[:, None]
    return PointCloud(points=points)
