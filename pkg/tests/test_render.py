import numpy as np
import pytest
from oracles import splat_bruteforce
from scenarios import (
    SMALL_K,
    fronto_plane_scene,
    hemisphere_agreement,
    random_splat_cloud,
    sphere_cloud,
    two_plane_cloud,
)

from metricdepth.errors import DegenerateCloud, PointAtViewpoint, SizeMismatch
from metricdepth.geometry import Intrinsics, Pose, random_pose
from metricdepth.io import read_depth, write_depth
from metricdepth.pointcloud import PointCloud, Source
from metricdepth.render import (
    DepthFrame,
    depth_to_cloud,
    hidden_point_removal,
    splat,
    visible_in_view,
)
from metricdepth.synth import Checker, Plane, SynthScene, raycast_depth, sample_cloud

K = Intrinsics(500.0, 500.0, 320.0, 180.0, 640, 360)


def test_depthframe_invariants():
    f = DepthFrame([[0.05, 0.1], [100.0, 150.0]])
    assert f.valid.tolist() == [[False, True], [True, False]]
    assert f.depth.tolist() == [[0.0, np.float32(0.1)], [100.0, 0.0]]
    with pytest.raises(ValueError):
        DepthFrame(np.ones((2, 2)), range=(1.0, 0.5))
    with pytest.raises(SizeMismatch):
        DepthFrame(np.ones((2, 2)), valid=np.ones((3, 2), bool))
    with pytest.raises(AttributeError):
        f.depth = None


def test_splat_empty_cloud():
    f = splat(PointCloud.empty(), Pose.identity(), K)
    assert not f.valid.any() and f.shape == (360, 640) and (f.index == -1).all()


def test_splat_two_points_on_one_ray():
    c = PointCloud([[0.0, 0.0, 5.0], [0.0, 0.0, 2.0]], [[255, 0, 0], [0, 255, 0]])
    f = splat(c, Pose.identity(), K)
    assert f.valid.sum() == 1
    assert f.depth.depth[180, 320] == 2.0 and f.rgb[180, 320].tolist() == [0, 255, 0]
    assert f.index[180, 320] == 1


def test_splat_range_is_inclusive_on_stored_depth():
    c = PointCloud([[0.0, 0.0, 100.0], [1.0, 0.0, 100.000002], [2.0, 0.0, 100.00001], [0.01, 0.0, 0.1]])
    f = splat(c, Pose.identity(), K)
    # 100.000002 stores as 100.0f (kept); 100.00001 stores above 100 (dropped)
    assert f.valid.sum() == 3


def test_splat_matches_bruteforce(rng):
    for _ in range(4):
        cloud, cam = random_splat_cloud(rng, 2000)
        f = splat(cloud, cam, SMALL_K)
        d, rgb, m, idx = splat_bruteforce(
            cloud.positions, cloud.colors, cam.rotation, cam.translation, SMALL_K.fx, SMALL_K.fy, SMALL_K.cx, SMALL_K.cy, SMALL_K.width, SMALL_K.height
        )
        assert np.array_equal(f.valid, m)
        assert f.depth.depth.tobytes() == d.tobytes()
        assert np.array_equal(f.rgb, rgb)
        assert np.array_equal(f.index, idx)


def test_splat_plane_scene_matches_raycast():
    scene = fronto_plane_scene(10.0)
    bounded = SynthScene((Plane((0.0, 0.0, 10.0), (0.0, 0.0, -1.0), Checker(0.5), (7.0, 4.0)),))
    cloud = sample_cloud(bounded, 400.0, seed=1)
    f = splat(cloud, Pose.identity(), K)
    _, ref = raycast_depth(scene, Pose.identity(), K)
    m = f.valid & ref.valid
    assert m.sum() > 10_000
    err = np.abs(f.depth.depth[m].astype(np.float64) - ref.depth[m])
    assert np.mean(err <= 1e-3) >= 0.99


def test_depth_to_cloud_examples():
    assert len(depth_to_cloud(None, DepthFrame.invalid(K.shape), Pose.identity(), K)) == 0
    d = np.zeros(K.shape)
    d[180, 320] = 5.0
    cam = Pose.from_translation((1.0, 2.0, 3.0))
    c = depth_to_cloud(np.full(K.shape + (3,), 7), DepthFrame(d), cam, K)
    assert c.positions.tolist() == [[1.0, 2.0, 8.0]]
    assert c.colors.tolist() == [[7, 7, 7]] and c.source[0] == Source.RENDERED
    with pytest.raises(SizeMismatch):
        depth_to_cloud(None, DepthFrame(np.ones((3, 3))), cam, K)


def test_splat_depth_to_cloud_fixed_point(rng):
    for _ in range(5):
        cam = random_pose(rng)
        d = rng.uniform(0.1, 100.0, K.shape)
        valid = rng.random(K.shape) < 0.3
        rgb = rng.integers(0, 256, K.shape + (3,))
        f = DepthFrame(d, valid)
        g = splat(depth_to_cloud(rgb, f, cam, K), cam, K)
        assert np.array_equal(g.valid, f.valid)
        assert g.depth.depth.tobytes() == f.depth.tobytes()
        assert np.array_equal(g.rgb[f.valid], rgb[f.valid])
        h = splat(depth_to_cloud(g.rgb, g.depth, cam, K), cam, K)
        assert h.depth.equals(g.depth) and np.array_equal(h.rgb, g.rgb)


def test_hpr_single_point_and_errors():
    assert hidden_point_removal(np.array([[1.0, 2.0, 3.0]]), np.zeros(3)).tolist() == [0]
    with pytest.raises(PointAtViewpoint):
        hidden_point_removal(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), np.zeros(3))
    with pytest.raises(DegenerateCloud):
        hidden_point_removal(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), np.zeros(3))
    with pytest.raises(DegenerateCloud):
        hidden_point_removal(np.empty((0, 3)), np.zeros(3))


def test_hpr_two_planes(rng):
    pts, n_near = two_plane_cloud(rng)
    vis = hidden_point_removal(pts, np.zeros(3), gamma=2.0)
    kept = np.zeros(len(pts), bool)
    kept[vis] = True
    assert kept[:n_near].mean() >= 0.99
    assert (~kept[n_near:]).mean() >= 0.99


def test_hpr_sphere_hemisphere(rng):
    pts = sphere_cloud(rng)
    view = np.zeros(3)
    vis = hidden_point_removal(pts, view, gamma=2.0)
    assert hemisphere_agreement(pts, vis, np.array([0.0, 0.0, 10.0]), view) >= 0.95
    assert set(vis.tolist()) <= set(range(len(pts)))


def test_hpr_is_translation_invariant(rng):
    pts = sphere_cloud(rng, 3000)
    a = hidden_point_removal(pts, np.zeros(3))
    b = hidden_point_removal(pts + 5.0, np.full(3, 5.0))
    assert np.mean(np.isin(a, b)) > 0.99


def test_visible_in_view_culls_frustum(rng):
    pts = sphere_cloud(rng, 3000)
    behind = np.c_[rng.uniform(-1, 1, (50, 2)), -rng.uniform(1, 5, 50)]
    c = PointCloud(np.vstack([pts, behind]))
    vis = visible_in_view(c, Pose.identity(), K)
    assert vis.max() < 3000
    assert np.all(np.diff(vis) > 0)


def test_pfm_round_trip_of_splat(tmp_path, rng):
    cloud, cam = random_splat_cloud(rng, 3000)
    f = splat(cloud, cam, SMALL_K)
    write_depth(tmp_path / "d.pfm", f.depth)
    assert read_depth(tmp_path / "d.pfm").equals(f.depth)
