"""Command-line surface: train, detect, describe, match, odometry, eval,
synth.  Exit codes: 0 success, 1 usage, 2 missing input, 3 runtime
failure."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import describe as describe_mod
from . import detect as detect_mod
from . import ingest, nn, report, sphering, voxels
from . import match as match_mod
from . import odometry as odometry_mod
from .config import ToolkitConfig, default_config_text, load_config
from .geometry import EulerXYZ, PoseSE3, compose, eulers2r, inverse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _frame_paths(cfg: ToolkitConfig):
    paths = sorted(Path(cfg.paths.data_dir).glob("*.bin"))
    if not paths:
        raise FileNotFoundError(f"no .bin frames in {cfg.paths.data_dir}")
    return paths


def _load_cloud(path, cfg: ToolkitConfig):
    cloud = ingest.read_kitti_bin(path)
    if cfg.pitch_correction_deg:
        cloud = ingest.apply_pitch_correction(cloud, cfg.pitch_correction_deg)
    return cloud


def _load_net2d(cfg: ToolkitConfig):
    net = nn.build_cae2d(seed=cfg.nn.seed)
    nn.load_weights(net, cfg.paths.weights_2d)
    return net


def _load_net3d(cfg: ToolkitConfig):
    net = nn.build_cae3d(seed=cfg.nn.seed)
    nn.load_weights(net, cfg.paths.weights_3d)
    return net


def _ring_dataset(cfg: ToolkitConfig):
    rings = []
    for path in _frame_paths(cfg):
        ring = sphering.project(_load_cloud(path, cfg), cfg.pipeline.ring)
        ring = detect_mod.crop_to_multiple(ring)
        rings.append(ring.grid)
    return np.stack(rings)


def _patch_dataset(cfg: ToolkitConfig, net2d):
    """Training patches centered on detected interest points, all scales."""
    patches = []
    for path in _frame_paths(cfg):
        cloud = _load_cloud(path, cfg)
        ring = detect_mod.crop_to_multiple(
            sphering.project(cloud, cfg.pipeline.ring))
        resp = detect_mod.response(ring, net2d)
        smap = detect_mod.score_map(resp, ring.mask, cfg.pipeline.detector)
        pixels = detect_mod.select_points(ring, smap, cfg.pipeline.detector)
        voxset = voxels.voxelize(cloud, cfg.pipeline.voxel)
        for px in pixels:
            for ri in (1, 2, 3):
                patch = voxels.extract_patch(voxset, np.array(px.xyz), ri)
                patches.append(patch.occupancy.astype(float))
    if not patches:
        raise ValueError("no interest points detected; cannot build "
                         "3D training set")
    return np.stack(patches)[..., None]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.which == "cae2d":
        net = nn.build_cae2d(seed=cfg.nn.seed)
        data = _ring_dataset(cfg)
        weights_path = cfg.paths.weights_2d
    else:
        net2d = _load_net2d(cfg)
        net = nn.build_cae3d(seed=cfg.nn.seed)
        data = _patch_dataset(cfg, net2d)
        weights_path = cfg.paths.weights_3d
    history = nn.train(net, data, epochs=cfg.nn.epochs, batch=cfg.nn.batch,
                       lr=cfg.nn.lr, seed=cfg.nn.seed)
    nn.save_weights(net, weights_path)
    csv_path = out_dir / f"loss_{args.which}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(history, start=1):
            writer.writerow([i, f"{loss:.9e}"])
    report.plot_loss_history(history, out_dir / f"loss_{args.which}.svg")
    print(f"trained {args.which}: {len(history)} epochs, "
          f"final loss {history[-1]:.6g}; weights -> {weights_path}")
    return 0


def _detect_frame(cfg, frame_path, net2d):
    cloud = _load_cloud(frame_path, cfg)
    ring = detect_mod.crop_to_multiple(
        sphering.project(cloud, cfg.pipeline.ring))
    resp = detect_mod.response(ring, net2d)
    smap = detect_mod.score_map(resp, ring.mask, cfg.pipeline.detector)
    pixels = detect_mod.select_points(ring, smap, cfg.pipeline.detector)
    return cloud, ring, smap, pixels


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    net2d = _load_net2d(cfg)
    _, _, smap, pixels = _detect_frame(cfg, args.frame, net2d)
    with open(args.out, "w") as f:
        f.write("# r c x y z score\n")
        for px in pixels:
            f.write(f"{px.r} {px.c} {px.xyz[0]:.9f} {px.xyz[1]:.9f} "
                    f"{px.xyz[2]:.9f} {smap.scores[px.r, px.c]:.9f}\n")
    if args.scoremap:
        detect_mod.dump_score_map(smap, args.scoremap)
    print(f"{len(pixels)} interest points -> {args.out}")
    return 0


def cmd_describe(args) -> int:
    cfg = load_config(args.config)
    net2d = _load_net2d(cfg)
    net3d = _load_net3d(cfg)
    cloud, _, _, pixels = _detect_frame(cfg, args.frame, net2d)
    voxset = voxels.voxelize(cloud, cfg.pipeline.voxel)
    feats = describe_mod.batch_describe([np.array(p.xyz) for p in pixels],
                                        voxset, net3d)
    describe_mod.save_features(args.out, pixels, feats)
    print(f"{len(pixels)} features -> {args.out}")
    return 0


def cmd_match(args) -> int:
    cfg = load_config(args.config)
    pixels_a, feats_a = describe_mod.load_features(args.features_a)
    pixels_b, feats_b = describe_mod.load_features(args.features_b)
    pairs = match_mod.nn_match(feats_a, feats_b)
    result = match_mod.ransac_pose(
        np.array([p.xyz for p in pixels_a]),
        np.array([p.xyz for p in pixels_b]),
        pairs, cfg.pipeline.ransac)
    match_mod.save_match_result(result, args.out)
    print(f"matched: inlier ratio {result.inlier_ratio:.3f}, "
          f"{result.iterations_used} iterations -> {args.out}")
    return 0


def cmd_odometry(args) -> int:
    cfg = load_config(args.config)
    net2d = _load_net2d(cfg)
    net3d = _load_net3d(cfg)
    clouds = [_load_cloud(p, cfg) for p in _frame_paths(cfg)]
    result = odometry_mod.run_pipeline(clouds, cfg.pipeline, net2d, net3d)
    out_dir = Path(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ingest.write_poses(result.initial, out_dir / "initial.txt")
    ingest.write_poses(result.refined, out_dir / "refined.txt")
    truth = ingest.read_poses(args.truth) if args.truth else None
    rows = odometry_mod.diagnostics_rows(result, truth)
    with open(out_dir / "diag.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(out_dir / "keyframes.txt", "w") as f:
        for i in result.keyframes.indices:
            f.write(f"{i}\n")
    print(f"{len(clouds)} frames, {len(result.keyframes.indices)} keyframes "
          f"-> {out_dir}")
    return 0


def _relative_poses(traj):
    rel = []
    for i in range(1, len(traj)):
        rel.append(compose(inverse(traj[i - 1]), traj[i]))
    return rel


def cmd_eval(args) -> int:
    estimate = ingest.read_poses(args.estimate)
    truth = ingest.read_poses(args.truth)
    if len(estimate) != len(truth):
        raise RuntimeError(f"trajectory length mismatch: "
                           f"{len(estimate)} vs {len(truth)}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rel_est = _relative_poses(estimate)
    rel_tru = _relative_poses(truth)
    rows = []
    for i, (re_, rt) in enumerate(zip(rel_est, rel_tru), start=1):
        rte, rre = match_mod.rte_rre(re_, rt)
        rows.append((i, rte, rre, int(match_mod.is_success(rte, rre))))
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "rte_m", "rre_deg", "success"])
        for row in rows:
            writer.writerow([row[0], f"{row[1]:.9f}", f"{row[2]:.9f}",
                             row[3]])
    report.plot_trajectories(estimate, truth, out_dir / "trajectories.svg",
                             out_dir / "trajectories.csv")
    if rows:
        rtes = np.array([r[1] for r in rows])
        rres = np.array([r[2] for r in rows])
        success = float(np.mean([r[3] for r in rows]))
        print(f"frames: {len(rows)}")
        print(f"RTE  mean {rtes.mean():.4f} m +- {rtes.std():.4f}")
        print(f"RRE  mean {rres.mean():.4f} deg +- {rres.std():.4f}")
        print(f"success rate: {100.0 * success:.2f}%")
    return 0


def cmd_synth(args) -> int:
    spec = ingest.load_scene_spec(args.scene)
    dx, dy, dz, droll, dpitch, dyaw = (float(v) for v in
                                       args.motion.split(","))
    step = PoseSE3(eulers2r(EulerXYZ(math.radians(droll),
                                     math.radians(dpitch),
                                     math.radians(dyaw))),
                   np.array([dx, dy, dz]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pose = PoseSE3.identity()
    poses = []
    for i in range(args.frames):
        cloud = ingest.synth_scan(spec, pose)
        ingest.write_kitti_bin(cloud, out_dir / f"{i:06d}.bin")
        poses.append(pose)
        pose = compose(pose, step)
    ingest.write_poses(ingest.Trajectory(poses), out_dir / "poses.txt")
    print(f"{args.frames} frames -> {out_dir}")
    return 0


def cmd_init_config(args) -> int:
    with open(args.out, "w") as f:
        f.write(default_config_text())
    print(f"default config -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="caelo",
                     description="LiDAR odometry toolkit: auto-encoder "
                                 "interest points, multi-scale voxel "
                                 "features, RANSAC + ICP odometry.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one of the auto-encoders")
    p.add_argument("--config", required=True)
    p.add_argument("--which", choices=["cae2d", "cae3d"], required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect interest points in one frame")
    p.add_argument("--config", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scoremap", help="optional score-map text dump")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("describe", help="detect and describe one frame")
    p.add_argument("--config", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="match two feature dumps")
    p.add_argument("--config", required=True)
    p.add_argument("--features-a", required=True)
    p.add_argument("--features-b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("odometry", help="run the full pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--truth", help="optional ground-truth pose file for "
                                   "per-frame diagnostics")
    p.set_defaults(func=cmd_odometry)

    p = sub.add_parser("eval", help="compare a trajectory against truth")
    p.add_argument("estimate")
    p.add_argument("truth")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--scene", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--motion", required=True,
                   help="per-frame step: dx,dy,dz,droll,dpitch,dyaw "
                        "(meters, degrees)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-config", help="write the annotated default "
                                           "config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
