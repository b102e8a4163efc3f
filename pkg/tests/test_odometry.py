import math

import numpy as np
import pytest

from caelo.geometry import (EulerXYZ, PoseSE3, accumulate, compose, eulers2r,
                            inverse)
from caelo.ingest import PointCloud
from caelo.match import MatchPair
from caelo.odometry import (FrameRecord, IcpParams, backward_update,
                            icp_refine, select_keyframes, transfer)
from tests.test_geometry import assert_pose_close, random_pose


def frames_from_matches(match_lists):
    """FrameRecords whose per-frame match sets are given as (a, b) tuples."""
    frames = []
    for i, pairs in enumerate(match_lists):
        frames.append(FrameRecord(
            index=i, matches=[MatchPair(a, b, 0.0) for a, b in pairs]))
    return frames


class TestTransfer:
    def test_basic(self):
        ms = [MatchPair(0, 5, 0.0), MatchPair(1, 6, 0.0),
              MatchPair(2, 7, 0.0)]
        assert transfer(ms, {0, 2}) == {5, 7}

    def test_empty_subset(self):
        assert transfer([MatchPair(0, 1, 0.0)], set()) == set()

    def test_no_overlap_fails(self):
        assert transfer([MatchPair(3, 1, 0.0)], {0, 1}) == set()


class TestSelectKeyframes:
    def test_single_frame(self):
        chain = select_keyframes(frames_from_matches([[]]))
        assert chain.indices == [0]

    def test_unbroken_chain(self):
        frames = frames_from_matches([[(0, 0)]] * 9 + [[]])
        assert select_keyframes(frames).indices == [0, 9]

    def test_break_mid_chain(self):
        lists = ([[(0, 0)]] * 3          # frames 0-2 pass index 0 along
                 + [[(1, 1)]] * 6        # frame 3 only carries index 1
                 + [[]])
        assert select_keyframes(frames_from_matches(lists)).indices == [0, 3, 9]

    def test_every_transfer_fails(self):
        frames = frames_from_matches([[]] * 5)
        assert select_keyframes(frames).indices == [0, 1, 2, 3, 4]

    def test_break_on_last_frame(self):
        # chain survives to frame 8 but frame 8's matches don't reach 9
        lists = [[(0, 0)]] * 8 + [[(9, 9)]] + [[]]
        chain = select_keyframes(frames_from_matches(lists))
        assert chain.indices == [0, 8, 9]

    def test_oracle_on_random_chains(self):
        """Compare against a direct simulation of the rule: starting at a
        keyframe, a frame is reachable while the transferred set stays
        nonempty; the keyframe is the last reachable frame (or the next
        frame when none is)."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            lists = []
            for i in range(n - 1):
                k = int(rng.integers(0, 4))
                lists.append([(int(rng.integers(0, 3)),
                               int(rng.integers(0, 3))) for _ in range(k)])
            lists.append([])
            frames = frames_from_matches(lists)
            chain = select_keyframes(frames).indices
            # oracle
            expect = [0]
            k = 0
            while k < n - 1:
                current = {p.idx_a for p in frames[k].matches}
                reach = k
                m = k
                while m < n - 1 and current:
                    current = {p.idx_b for p in frames[m].matches
                               if p.idx_a in current}
                    if current:
                        m += 1
                        reach = m
                nxt = reach if reach > k else k + 1
                expect.append(nxt)
                k = nxt
            if expect[-1] != n - 1:
                expect.append(n - 1)
            assert chain == expect


class TestIcp:
    def _cloud(self, rng, n=300):
        return rng.uniform(-5.0, 5.0, size=(n, 3))

    def test_recovers_pose_from_perturbed_initial(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            a = self._cloud(rng)
            truth = random_pose(rng, angle_scale=0.3, trans_scale=1.0)
            b = inverse(truth).apply(a)
            # perturb by ~0.3 m / ~0.7 deg
            nudge = PoseSE3(eulers2r(EulerXYZ(0, 0, math.radians(0.7))),
                            [0.3, 0.0, 0.0])
            res = icp_refine(PointCloud(points=a), PointCloud(points=b),
                             compose(nudge, truth), IcpParams())
            assert not res.starved
            assert np.abs(res.pose.translation - truth.translation).max() < 1e-6
            assert np.abs(res.pose.rotation - truth.rotation).max() < 1e-6
            assert res.residual_rms < 1e-6

    def test_threshold_decay_rejects_far_pairs(self):
        # one gross outlier point beyond d0 never participates
        rng = np.random.default_rng(2)
        a = self._cloud(rng, 100)
        b = a.copy()
        b[0] += 50.0
        res = icp_refine(PointCloud(points=a), PointCloud(points=b),
                         PoseSE3.identity(), IcpParams())
        assert_pose_close(res.pose, PoseSE3.identity(), tol=1e-9)

    def test_starved_when_clouds_disjoint(self):
        a = np.zeros((10, 3))
        b = np.full((10, 3), 100.0)
        res = icp_refine(PointCloud(points=a), PointCloud(points=b),
                         PoseSE3.identity(), IcpParams())
        assert res.starved
        assert res.iterations == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            icp_refine(PointCloud(points=np.zeros((0, 3))),
                       PointCloud(points=np.zeros((5, 3))),
                       PoseSE3.identity(), IcpParams())

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            IcpParams(d0=0.0)
        with pytest.raises(ValueError):
            IcpParams(decay=1.0)

    def test_iteration_cap(self):
        rng = np.random.default_rng(3)
        a = self._cloud(rng, 50)
        b = a + rng.normal(scale=0.5, size=a.shape)  # no exact fixpoint
        res = icp_refine(PointCloud(points=a), PointCloud(points=b),
                         PoseSE3.identity(), IcpParams(max_iterations=4))
        assert res.iterations <= 4


def scalar_eulers(r):
    """Independent XYZ Euler extraction for the oracle below."""
    ry = math.asin(r[0, 2])
    rx = math.atan2(-r[1, 2], r[2, 2])
    rz = math.atan2(-r[0, 1], r[0, 0])
    return rx, ry, rz


def scalar_rotation(rx, ry, rz):
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mx @ my @ mz


class TestBackwardUpdate:
    def test_pure_translation_interpolates_linearly(self):
        relatives = [PoseSE3(np.eye(3), [1.0, 0, 0]) for _ in range(4)]
        delta = PoseSE3(np.eye(3), [0.4, 0, 0])
        updated = backward_update(relatives, delta)
        assert len(updated) == 4
        for u in updated:
            assert np.abs(u.translation - [1.1, 0, 0]).max() < 1e-12
            assert np.abs(u.rotation - np.eye(3)).max() < 1e-12

    def test_single_relative(self):
        rng = np.random.default_rng(4)
        rel = random_pose(rng)
        delta = random_pose(rng, angle_scale=0.1, trans_scale=0.1)
        updated = backward_update([rel], delta)
        assert len(updated) == 1
        assert_pose_close(updated[0], compose(delta, rel))

    def test_endpoint_exact_random_segments(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 16))
            relatives = [random_pose(rng, angle_scale=0.2, trans_scale=2.0)
                         for _ in range(n)]
            delta = random_pose(rng, angle_scale=0.05, trans_scale=0.3)
            updated = backward_update(relatives, delta)
            end_new = accumulate(updated, 0, n - 1)
            end_target = compose(delta, accumulate(relatives, 0, n - 1))
            assert np.abs(end_new.matrix - end_target.matrix).max() < 1e-9

    def test_intermediate_frames_match_scalar_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = int(rng.integers(3, 10))
            relatives = [random_pose(rng, angle_scale=0.2, trans_scale=1.0)
                         for _ in range(n)]
            delta = random_pose(rng, angle_scale=0.05, trans_scale=0.2)
            updated = backward_update(relatives, delta)
            rx, ry, rz = scalar_eulers(delta.rotation)
            for i in range(1, n):
                f = i / n
                frac_r = scalar_rotation(f * rx, f * ry, f * rz)
                frac = PoseSE3(frac_r, f * delta.translation)
                target = compose(compose(frac,
                                         accumulate(relatives, 0, n - 1)),
                                 inverse(accumulate(relatives, i, n - 1)))
                got = accumulate(updated, 0, i - 1)
                assert np.abs(got.matrix - target.matrix).max() < 1e-9

    def test_gimbal_lock_falls_back_to_axis_angle(self):
        # a 90-degree pitch delta cannot be euler-interpolated
        delta = PoseSE3(eulers2r(EulerXYZ(0.0, np.pi / 2, 0.0)),
                        [0.1, 0.0, 0.0])
        relatives = [PoseSE3(np.eye(3), [1.0, 0, 0]) for _ in range(3)]
        updated = backward_update(relatives, delta)
        end = accumulate(updated, 0, 2)
        target = compose(delta, PoseSE3(np.eye(3), [3.0, 0, 0]))
        assert np.abs(end.matrix - target.matrix).max() < 1e-9
        # the 1/3 fractional rotation is a 30-degree pitch
        first = accumulate(updated, 0, 0)
        got_angle = math.degrees(
            math.acos(np.clip((np.trace(first.rotation) - 1) / 2, -1, 1)))
        assert abs(got_angle - 30.0) < 1e-6

    def test_empty_segment_rejected(self):
        with pytest.raises(ValueError):
            backward_update([], PoseSE3.identity())

    def test_identity_delta_is_noop(self):
        rng = np.random.default_rng(7)
        relatives = [random_pose(rng) for _ in range(5)]
        updated = backward_update(relatives, PoseSE3.identity())
        for a, b in zip(relatives, updated):
            assert_pose_close(a, b)
