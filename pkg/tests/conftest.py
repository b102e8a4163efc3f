"""Session fixtures: a synthetic indoor sequence plus CLI-trained networks.

The scene is an enclosed room (four walls, boxes, cylinders) with no free
ground edge; every surface moves consistently with the sensor, which keeps
frame-to-frame matching well-posed.  The ring geometry and detector
thresholds are scaled down from the road-scale defaults to suit a room.
"""

import shutil
import time

import pytest

from caelo import cli

SCENE_TEXT = """\
synthscene v1
beams 32
azimuth_step 0.75
vfov -24.5 6.5
noise_sigma 0.005
seed 7
# room walls
box 16 0 0 0 0 0 0.2 13 2.0
box -16 0 0 0 0 0 0.2 13 2.0
box 0 13 0 0 0 0 16 0.2 2.0
box 0 -13 0 0 0 0 16 0.2 2.0
# interior structure
box 5 2 0 0 0 20 0.6 0.6 1.6
box 7 -3 0 0 0 -35 1.0 0.5 1.4
box -6 4 0 0 0 50 0.8 0.8 1.7
box -4 -7 0 0 0 10 0.5 1.2 1.3
box 3 8 0 0 0 70 0.7 0.4 1.8
box -9 -2 0 0 0 15 1.2 0.6 1.5
box 9 6 0 0 0 40 0.5 0.5 1.6
cylinder 4 -6 0 0 0 0 0.4 1.8
cylinder -3 6 0 0 0 0 0.3 1.7
cylinder 8 1 0 0 0 0 0.5 1.9
cylinder -7 -5 0 0 0 0 0.35 1.6
cylinder 12 -9 0 0 0 0 0.5 1.8
cylinder -12 8 0 0 0 0 0.5 1.8
"""

N_FRAMES = 20
MOTION = "0.25,0,0,0,0,1.0"   # 0.25 m forward, 1 degree yaw per frame

_CONFIG_TEMPLATE = """\
caelo-config v1
ring.delta_alpha_deg 0.75
ring.delta_beta_deg 1.0
ring.beta_down_deg -25.0
ring.rows 32
detector.h 2
detector.delta 0.5
detector.sigma_min 2.0
detector.n_max {n_max}
eip.h_e 7
voxel.s1 0.05
nn.lr {lr}
nn.batch {batch}
nn.epochs {epochs}
nn.seed 0
ransac.inlier_threshold 0.3
ransac.seed 0
paths.data_dir {data_dir}
paths.weights_2d {weights_2d}
paths.weights_3d {weights_3d}
paths.output_dir {output_dir}
"""


def make_config(path, **kw):
    path.write_text(_CONFIG_TEMPLATE.format(**kw))
    return path


@pytest.fixture(scope="session")
def synth_env(tmp_path_factory):
    """Synthetic sequence on disk plus the config files used to run it."""
    root = tmp_path_factory.mktemp("synthenv")
    scene = root / "scene.txt"
    scene.write_text(SCENE_TEXT)
    frames = root / "frames"
    t0 = time.perf_counter()
    rc = cli.main(["synth", "--scene", str(scene), "--frames", str(N_FRAMES),
                   "--motion", MOTION, "--out", str(frames)])
    assert rc == 0
    synth_seconds = time.perf_counter() - t0
    # small training subsets: 3 frames for the 2D net, 2 for the 3D net
    train2d = root / "train2d_frames"
    train3d = root / "train3d_frames"
    train2d.mkdir()
    train3d.mkdir()
    bins = sorted(frames.glob("*.bin"))
    for b in bins[:3]:
        shutil.copy(b, train2d / b.name)
    for b in bins[:2]:
        shutil.copy(b, train3d / b.name)
    env = {
        "root": root,
        "scene": scene,
        "frames": frames,
        "truth": frames / "poses.txt",
        "weights_2d": root / "weights_2d.bin",
        "weights_3d": root / "weights_3d.bin",
        "out": root / "out",
        "synth_seconds": synth_seconds,
    }
    common = dict(weights_2d=env["weights_2d"], weights_3d=env["weights_3d"],
                  output_dir=env["out"])
    env["config_train2d"] = make_config(
        root / "train2d.cfg", n_max=60, lr=0.01, batch=1, epochs=3,
        data_dir=train2d, **common)
    # 12 epochs: the first few epochs collapse the codes toward a
    # mean-occupancy reconstruction; training past that restores their
    # discrimination between patches
    env["config_train3d"] = make_config(
        root / "train3d.cfg", n_max=60, lr=0.001, batch=16, epochs=12,
        data_dir=train3d, **common)
    env["config_run"] = make_config(
        root / "run.cfg", n_max=256, lr=0.01, batch=1, epochs=3,
        data_dir=frames, **common)
    return env


@pytest.fixture(scope="session")
def trained_env(synth_env):
    """synth_env with both auto-encoders trained through the CLI."""
    t0 = time.perf_counter()
    rc = cli.main(["train", "--config", str(synth_env["config_train2d"]),
                   "--which", "cae2d"])
    assert rc == 0
    rc = cli.main(["train", "--config", str(synth_env["config_train3d"]),
                   "--which", "cae3d"])
    assert rc == 0
    synth_env["train_seconds"] = time.perf_counter() - t0
    assert synth_env["weights_2d"].exists()
    assert synth_env["weights_3d"].exists()
    return synth_env


@pytest.fixture(scope="session")
def odometry_run(trained_env):
    """Full-pipeline CLI run over the 20-frame sequence, with truth."""
    t0 = time.perf_counter()
    rc = cli.main(["odometry", "--config", str(trained_env["config_run"]),
                   "--truth", str(trained_env["truth"])])
    assert rc == 0
    trained_env["odometry_seconds"] = time.perf_counter() - t0
    return trained_env
