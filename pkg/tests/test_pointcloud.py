import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import inside_box_halfspaces, voxel_hashgrid

from metricdepth.errors import DegenerateBox, EmptyWindow, FilterOnWrongSource, NonPositiveResolution
from metricdepth.geometry import Pose, random_pose, random_rotation
from metricdepth.pointcloud import (
    BBox3D,
    FrameScript,
    PointCloud,
    SceneScript,
    Source,
    aggregate_frames,
    filter_above_height,
    inside_boxes,
    remove_dynamic,
    transform,
    voxel_downsample,
    window_indices,
)


def _cloud(rng, n, colors=True, labels=False, source=Source.RENDERED):
    return PointCloud(
        rng.normal(scale=5.0, size=(n, 3)),
        rng.integers(0, 256, (n, 3)) if colors else None,
        rng.integers(0, 10, n) if labels else None,
        source,
    )


def test_pointcloud_is_immutable(rng):
    c = _cloud(rng, 4)
    with pytest.raises(AttributeError):
        c.positions = np.zeros((4, 3))
    with pytest.raises(ValueError):
        c.positions[0, 0] = 1.0
    with pytest.raises(ValueError):
        PointCloud(np.ones((2, 3)), colors=np.ones((3, 3)))
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])


def test_concat_keeps_attributes_only_when_shared(rng):
    a, b = _cloud(rng, 3, labels=True), _cloud(rng, 2, colors=False, labels=True)
    c = PointCloud.concat([a, b])
    assert len(c) == 5 and c.colors is None and c.labels is not None


def test_transform_identity_is_bitwise(rng):
    c = _cloud(rng, 100)
    out = transform(c, Pose.identity())
    assert out.positions.tobytes() == c.positions.tobytes()


def test_transform_translation_example():
    c = PointCloud([[1.0, 2.0, 3.0]])
    assert transform(c, Pose.from_translation((0, 0, 1))).positions.tolist() == [[1.0, 2.0, 4.0]]


def test_transform_round_trip(rng):
    c = _cloud(rng, 500)
    for _ in range(10):
        xf = random_pose(rng)
        back = transform(transform(c, xf), xf.inverse())
        assert np.abs(back.positions - c.positions).max() < 1e-9
        assert np.array_equal(back.colors, c.colors)


def test_remove_dynamic_examples():
    c = PointCloud([[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    assert remove_dynamic(c, []).equals(c)
    cube = BBox3D.from_center_size_yaw((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    out = remove_dynamic(c, [cube], margin=0.0)
    assert out.positions.tolist() == [[5.0, 5.0, 5.0]]


def test_remove_dynamic_matches_halfspace_oracle(rng):
    pts = rng.uniform(-4, 4, (10_000, 3))
    for _ in range(3):
        r = random_rotation(rng)
        o = rng.uniform(-1, 1, 3)
        e = r * rng.uniform(0.5, 3.0, 3)  # rows are not used; columns are box edges
        corners = np.array([o + ((i >> 0) & 1) * e[:, 0] + ((i >> 1) & 1) * e[:, 1] + ((i >> 2) & 1) * e[:, 2] for i in range(8)])
        box = BBox3D(corners)
        for margin in (0.0, 0.25):
            got = inside_boxes(pts, [box], margin)
            want = np.array([inside_box_halfspaces(p, corners, margin) for p in pts])
            assert np.array_equal(got, want)
            kept = remove_dynamic(PointCloud(pts), [box], margin)
            assert np.array_equal(kept.positions, pts[~want])


def test_box_validation():
    with pytest.raises(ValueError):
        BBox3D(np.zeros((7, 3)))
    bad = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)], float)
    bad[7] += 0.5
    with pytest.raises(ValueError):
        BBox3D(bad)
    flat = BBox3D.from_center_size_yaw((0, 0, 0), (1.0, 1.0, 0.0))
    with pytest.raises(DegenerateBox):
        remove_dynamic(PointCloud([[0.0, 0.0, 0.0]]), [flat])
    box = BBox3D.from_center_size_yaw((1, 2, 3), (4, 2, 1), 0.3, 2)
    assert BBox3D.from_dict(box.to_dict()).corners.tolist() == box.corners.tolist()


def test_filter_above_height_examples():
    c = PointCloud([[0, 0, -1.0], [0, 0, 0.0], [0, 0, 1.0]], source=Source.MVS)
    assert len(filter_above_height(c, -np.inf)) == 3
    assert filter_above_height(c, 0.0).positions[:, 2].tolist() == [0.0, 1.0]
    with pytest.raises(FilterOnWrongSource):
        filter_above_height(PointCloud([[0, 0, 1.0]], source=Source.LIDAR), 0.0)


def test_voxel_far_apart_points_kept():
    c = PointCloud([[0.0, 0.0, 0.0], [1000.0, 0.0, 0.0]])
    out = voxel_downsample(c, 0.1)
    assert len(out) == 2
    with pytest.raises(NonPositiveResolution):
        voxel_downsample(c, 0.0)


def test_voxel_matches_hashgrid_oracle(rng, kernel_backend):
    centers = rng.uniform(-2, 2, (30, 3))
    pos = centers[rng.integers(0, 30, 10_000)] + rng.normal(scale=0.08, size=(10_000, 3))
    c = PointCloud(pos, rng.integers(0, 256, (10_000, 3)), rng.integers(0, 5, 10_000), Source.MVS)
    out = voxel_downsample(c, 0.1)
    keys, cents, reps = voxel_hashgrid(pos, 0.1)
    assert len(out) == len(keys)
    assert np.array_equal(out.positions, cents)
    assert np.array_equal(out.colors, c.colors[reps])
    assert np.array_equal(out.labels, c.labels[reps])
    assert np.all(out.source == Source.MVS)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.floats(0.05, 2.0), st.integers(0, 2**31 - 1))
def test_voxel_hashgrid_property(n, res, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-3, 3, (n, 3))
    out = voxel_downsample(PointCloud(pos), res)
    keys, cents, _ = voxel_hashgrid(pos, res)
    assert np.array_equal(out.positions, cents)


def test_window_indices_truncate():
    assert window_indices(10, 5, 3) == [4, 5, 6]
    assert window_indices(10, 0, 3) == [0, 1]
    assert window_indices(10, 9, 5) == [7, 8, 9]
    with pytest.raises(EmptyWindow):
        window_indices(10, 0, 0)
    with pytest.raises(ValueError):
        window_indices(10, 0, 2)


def test_aggregate_window_one_is_identity(rng):
    clouds = [_cloud(rng, 10) for _ in range(3)]
    egos = [random_pose(rng) for _ in range(3)]
    out = aggregate_frames(clouds, egos, 1, window=1)
    assert out.equals(clouds[1])


def test_aggregate_translation_example():
    clouds = [PointCloud.empty(), PointCloud([[0.0, 0.0, 0.0]], np.zeros((1, 3)))]
    egos = [Pose.identity(), Pose.from_translation((1.0, 0.0, 0.0))]
    out = aggregate_frames(clouds, egos, 0, window=3)
    oracle = np.linalg.inv(egos[0].matrix) @ egos[1].matrix @ np.array([0.0, 0.0, 0.0, 1.0])
    assert out.positions.tolist() == [[1.0, 0.0, 0.0]]
    assert np.array_equal(out.positions[0], oracle[:3])


def test_aggregate_matches_matrix_oracle(rng):
    clouds = [_cloud(rng, 20) for _ in range(5)]
    egos = [random_pose(rng) for _ in range(5)]
    out = aggregate_frames(clouds, egos, 2, window=3)
    inv = np.linalg.inv(egos[2].matrix)
    want = []
    for t in (1, 2, 3):
        h = np.c_[clouds[t].positions, np.ones(20)]
        want.append((inv @ egos[t].matrix @ h.T).T[:, :3])
    assert np.allclose(out.positions, np.concatenate(want), atol=1e-9)


def test_scene_script_round_trip():
    box = BBox3D.from_center_size_yaw((1, 2, 0), (4, 2, 1.5), 0.2, 1)
    m = np.zeros((4, 4, 2), np.uint8)
    m[1, 2, 0] = 1
    f = FrameScript(0, Pose.from_translation((1, 0, 0)), {"a": Pose.identity()}, (box,), m)
    s = SceneScript((f,))
    d = s.to_dict({0: "maps/0000.npy"})
    back = SceneScript.from_dict(d, load_map=lambda rel: m)
    assert back[0].ego == f.ego and back[0].cameras["a"] == Pose.identity()
    assert np.array_equal(back[0].map, m)
    with pytest.raises(ValueError):
        SceneScript((FrameScript(1, Pose.identity(), {}),))
    with pytest.raises(ValueError):
        FrameScript(0, Pose.identity(), {}, (), np.full((2, 2, 1), 3))
