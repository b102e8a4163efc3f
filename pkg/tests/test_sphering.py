import math

import numpy as np
import pytest

from caelo.ingest import PointCloud
from caelo.sphering import (PixelPoint, RingParams, extract_eips, load_ring,
                            project, save_ring, unproject)


def scalar_project(x, y, z, params):
    """Independent scalar evaluation of the projection equations."""
    c = math.floor((math.pi - math.atan2(y, x)) / params.delta_alpha)
    rng = math.sqrt(x * x + y * y + z * z)
    r = math.floor(params.H - (math.asin(z / rng) / params.delta_beta
                               - params.beta_down / params.delta_beta))
    return r, c


KITTI = RingParams()


class TestProject:
    def test_kitti_defaults(self):
        assert KITTI.H == 69
        assert KITTI.W == 1800
        assert abs(KITTI.delta_alpha - math.radians(0.2)) < 1e-15
        assert abs(KITTI.delta_beta - math.radians(0.4254)) < 1e-15

    def test_point_on_x_axis(self):
        # elevation slightly above the lowest beam
        el = KITTI.beta_down + math.radians(0.1)
        p = 10.0 * np.array([math.cos(el), 0.0, math.sin(el)])
        r, c = scalar_project(*p, KITTI)
        assert c == math.floor(math.pi / KITTI.delta_alpha) == 900
        ring = project(PointCloud(points=p[None, :]), KITTI)
        assert ring.mask[r, c]
        assert np.array_equal(ring.grid[r, c], p)

    def test_empty_cloud(self):
        ring = project(PointCloud(points=np.zeros((0, 3))), KITTI)
        assert not ring.mask.any()
        assert ring.grid.sum() == 0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(scale=20.0, size=(500, 3))
        ring = project(PointCloud(points=pts), KITTI)
        in_range = 0
        for p in pts:
            r, c = scalar_project(*p, KITTI)
            if 0 <= r < KITTI.H and 0 <= c < KITTI.W:
                in_range += 1
                assert ring.mask[r, c]
        assert ring.out_of_range == len(pts) - in_range

    def test_last_point_wins_on_collision(self):
        a = np.array([10.0, 0.0, 0.0])
        b = a * 1.001  # same pixel, later in the cloud
        ring = project(PointCloud(points=np.stack([a, b])), KITTI)
        r, c = scalar_project(*a, KITTI)
        assert np.array_equal(ring.grid[r, c], b)

    def test_column_monotone_in_azimuth(self):
        # increasing azimuth never increases the column index
        azimuths = np.linspace(-math.pi + 1e-6, math.pi - 1e-6, 400)
        cols = [scalar_project(math.cos(a), math.sin(a), 0.0, KITTI)[1]
                for a in azimuths]
        assert all(c2 <= c1 for c1, c2 in zip(cols, cols[1:]))

    def test_reprojection_idempotent(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(scale=15.0, size=(2000, 3))
        ring = project(PointCloud(points=pts), KITTI)
        surviving = ring.grid[ring.mask]
        ring2 = project(PointCloud(points=surviving), KITTI)
        assert np.array_equal(ring.mask, ring2.mask)
        assert np.array_equal(ring.grid, ring2.grid)


class TestUnproject:
    def test_valid_pixel(self):
        p = np.array([5.0, 1.0, -1.0])
        ring = project(PointCloud(points=p[None, :]), KITTI)
        r, c = scalar_project(*p, KITTI)
        assert np.array_equal(unproject(ring, r, c), p)

    def test_invalid_pixel_raises(self):
        ring = project(PointCloud(points=np.zeros((0, 3))), KITTI)
        with pytest.raises(ValueError):
            unproject(ring, 0, 0)


def _full_ring(h, w):
    grid = np.zeros((h, w, 3))
    grid[..., 0] = np.arange(h)[:, None]
    grid[..., 1] = np.arange(w)[None, :]
    grid[..., 2] = 1.0
    params = RingParams(H=h)
    return grid, np.ones((h, w), dtype=bool), params


class TestExtractEips:
    def test_full_window_count(self):
        from caelo.sphering import SphericalRing
        grid, mask, params = _full_ring(31, 31)
        ring = SphericalRing(grid, mask, params)
        out = extract_eips(ring, [PixelPoint(15, 15, (0, 0, 0))], h_e=7)
        assert len(out) == 225

    def test_overlapping_seeds_deduplicate(self):
        from caelo.sphering import SphericalRing
        grid, mask, params = _full_ring(31, 31)
        ring = SphericalRing(grid, mask, params)
        seeds = [PixelPoint(15, 15, (0, 0, 0)), PixelPoint(15, 16, (0, 0, 0))]
        out = extract_eips(ring, seeds, h_e=7)
        assert len(out) == 15 * 16  # union of two 15x15 windows shifted by 1

    def test_corner_seed_matches_window_scan_oracle(self):
        from caelo.sphering import SphericalRing
        rng = np.random.default_rng(2)
        grid, mask, params = _full_ring(20, 25)
        mask = rng.uniform(size=mask.shape) < 0.6
        mask[0, 0] = True
        ring = SphericalRing(grid, mask, params)
        out = extract_eips(ring, [PixelPoint(0, 0, (0, 0, 0))], h_e=7)
        # oracle: explicit in-bounds window scan
        expected = sum(1 for r in range(0, 8) for c in range(0, 8)
                       if mask[r, c])
        assert len(out) == expected
        # every EIP is a real stored point
        stored = {tuple(v) for v in grid[mask]}
        assert all(tuple(p) in stored for p in out.points)

    def test_invalid_seed_raises(self):
        from caelo.sphering import SphericalRing
        grid, mask, params = _full_ring(10, 10)
        mask[3, 3] = False
        ring = SphericalRing(grid, mask, params)
        with pytest.raises(ValueError):
            extract_eips(ring, [PixelPoint(3, 3, (0, 0, 0))], h_e=2)


def test_ring_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.normal(scale=10.0, size=(3000, 3)).astype(np.float32)
    ring = project(PointCloud(points=pts.astype(float)), KITTI)
    path = tmp_path / "ring.bin"
    save_ring(ring, path)
    back = load_ring(path)
    assert np.array_equal(back.mask, ring.mask)
    assert np.abs(back.grid - ring.grid).max() < 1e-6
