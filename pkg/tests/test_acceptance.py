"""Acceptance suite: one PASS/FAIL line per criterion, measured at the stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even under output capture) or ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest
from conftest import FIXTURE, GOLDEN
from oracles import depth_metrics, nearest_fill_bruteforce, splat_bruteforce, voxel_hashgrid
from scenarios import (
    SMALL_K,
    corridor_scene,
    dense_view,
    fronto_plane_scene,
    hemisphere_agreement,
    random_splat_cloud,
    scc_scene,
    sphere_cloud,
    two_camera_frames,
    two_plane_cloud,
)
from scipy import stats

from metricdepth import io
from metricdepth.cli import main
from metricdepth.config import PipelineConfig
from metricdepth.curation import OracleBackend, PromptSource, curate, curate_frame, densify_nn, fuse_depth
from metricdepth.fixtures import BASE_INTRINSICS, StreetSpec, street_bundle
from metricdepth.geometry import Camera, Intrinsics, Pose, project, random_pose, unproject
from metricdepth.metrics import eval_depth
from metricdepth.nvs import (
    OracleViewDensifier,
    Trajectory,
    condition_at_offset,
    condition_at_view,
    perturb_trajectory,
    scc_roundtrip,
)
from metricdepth.pointcloud import PointCloud, Source, voxel_downsample
from metricdepth.render import DepthFrame, hidden_point_removal, splat

pytestmark = pytest.mark.acceptance


def report(capsys, n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_01_projection_round_trip(capsys):
    rng = np.random.default_rng(1)
    n_k, per_k = 100, 1000  # 1e5 samples, 100 random intrinsics
    w, h = 1600, 900
    cases = []
    for _ in range(n_k):
        fx = rng.uniform(200, 2000)
        k = Intrinsics(fx, fx * rng.uniform(0.8, 1.2), rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h, w, h)
        cases.append((k, rng.uniform(0, w, per_k), rng.uniform(0, h, per_k), rng.uniform(0.1, 100.0, per_k)))
    err_px = err_d = 0.0
    t0 = time.perf_counter()
    for k, u, v, d in cases:
        pu, pv, pd = project(unproject(u, v, d, k), k)
        err_px = max(err_px, np.abs(pu - u).max(), np.abs(pv - v).max())
        err_d = max(err_d, np.abs(pd - d).max())
    elapsed = time.perf_counter() - t0
    ok = err_px < 1e-4 and err_d < 1e-9 and elapsed < 1.0
    report(capsys, 1, ok, f"max px err {err_px:.2e} (<1e-4), max depth err {err_d:.2e} m (<1e-9), {elapsed:.3f} s (<1 s)")


def test_criterion_02_splat_zbuffer_oracle(capsys):
    rng = np.random.default_rng(2)
    mismatches = 0
    sizes = []
    for _ in range(20):
        cloud, cam = random_splat_cloud(rng, 10_000)
        sizes.append(len(cloud))
        f = splat(cloud, cam, SMALL_K)
        k = SMALL_K
        d, rgb, m, _ = splat_bruteforce(cloud.positions, cloud.colors, cam.rotation, cam.translation, k.fx, k.fy, k.cx, k.cy, k.width, k.height)
        same = f.depth.depth.tobytes() == d.tobytes() and np.array_equal(f.rgb, rgb) and np.array_equal(f.valid, m)
        mismatches += not same
    report(capsys, 2, mismatches == 0, f"{20 - mismatches}/20 clouds ({min(sizes)}..{max(sizes)} points) identical in depth, color and mask")


def test_criterion_03_hpr(capsys):
    rng = np.random.default_rng(3)
    pts, n_near = two_plane_cloud(rng)
    vis = np.zeros(len(pts), bool)
    vis[hidden_point_removal(pts, np.zeros(3), gamma=2.0)] = True
    kept = vis[:n_near].mean()
    removed = (~vis[n_near:]).mean()
    sph = sphere_cloud(rng)
    agree = hemisphere_agreement(sph, hidden_point_removal(sph, np.zeros(3), 2.0), np.array([0.0, 0.0, 10.0]), np.zeros(3))
    ok = kept >= 0.99 and removed >= 0.99 and agree >= 0.95
    report(capsys, 3, ok, f"near kept {kept:.4f}, occluded removed {removed:.4f} (>=0.99); sphere agreement {agree:.4f} (>=0.95)")


def _chebyshev_min(lidar_valid, targets, chunk=2048):
    ly, lx = np.nonzero(lidar_valid)
    ty, tx = np.nonzero(targets)
    if not ly.size or not ty.size:
        return np.full(ty.size, np.inf)
    out = []
    for s in range(0, ty.size, chunk):
        dy = np.abs(ty[s : s + chunk, None] - ly[None])
        dx = np.abs(tx[s : s + chunk, None] - lx[None])
        out.append(np.maximum(dy, dx).min(axis=1))
    return np.concatenate(out)


def test_criterion_04_fusion_priority(capsys, street_small):
    rng = np.random.default_rng(4)
    k = Intrinsics(120.0, 120.0, 79.5, 59.5, 160, 120)
    overwritten = violations = checked = 0
    for _ in range(20):
        cam = random_pose(rng)
        n = 20_000
        pc = np.c_[rng.uniform(-0.7, 0.7, (n, 2)), np.ones(n)] * rng.uniform(2, 40, (n, 1))
        lid = PointCloud(cam.apply(pc[: n // 20]), source=Source.LIDAR)
        mvs = PointCloud(cam.apply(pc[n // 20 :]), source=Source.MVS)
        p = fuse_depth(lid, mvs, cam, k, 2)
        ls = splat(lid, cam, k)
        overwritten += int(np.sum(p.source[ls.valid] != PromptSource.LIDAR))
        overwritten += int(np.sum(p.depth.depth[ls.valid] != ls.depth.depth[ls.valid]))
        d = _chebyshev_min(ls.valid, p.source == PromptSource.MVS)
        violations += int(np.sum(d <= 2))
        checked += d.size
    for t in range(street_small.n_frames):
        for view in curate_frame(street_small, t).values():
            d = _chebyshev_min(view.prompt.source == PromptSource.LIDAR, view.prompt.source == PromptSource.MVS)
            violations += int(np.sum(d <= 2))
            checked += d.size
    ok = overwritten == 0 and violations == 0 and checked > 0
    report(capsys, 4, ok, f"{overwritten} lidar pixels overwritten, {violations} of {checked} mvs pixels within 2 px (must be 0)")


def test_criterion_05_densify_nn_oracle(capsys):
    rng = np.random.default_rng(5)
    exact = 0
    for i in range(50):
        valid = rng.random((64, 64)) < [0.001, 0.01, 0.05, 0.3, 0.8][i % 5]
        valid.flat[int(rng.integers(4096))] = True
        f = DepthFrame(rng.uniform(0.5, 90.0, (64, 64)), valid)
        exact += densify_nn(f).depth.tobytes() == nearest_fill_bruteforce(f.depth, f.valid).tobytes()
    report(capsys, 5, exact == 50, f"{exact}/50 random 64x64 prompts identical to the all-pairs oracle")


def test_criterion_06_end_to_end_curation(capsys, street_small, tmp_path):
    cfg = PipelineConfig()
    # golden byte identity and reruns on the checked-in fixture
    runs = [curate(street_small, cfg, OracleBackend(street_small.scene)) for _ in range(2)]
    golden_ok = all(
        io.encode_pfm(d.depth) == (GOLDEN / "frames" / f"{t:04d}" / name / "depth.pfm").read_bytes()
        for run in runs
        for (t, name), d in run.items()
    )
    assert main(["curate-depth", "--bundle", str(FIXTURE), "--densifier", "oracle", "--out", str(tmp_path)]) == 0
    cli_ok = all(
        (tmp_path / "frames" / f"{t:04d}" / name / "depth.pfm").read_bytes()
        == (GOLDEN / "frames" / f"{t:04d}" / name / "depth.pfm").read_bytes()
        for (t, name) in runs[0]
    )
    # full-size fixture: 6 cameras, 17 frames, 424x800, single process
    bundle = street_bundle(StreetSpec())
    assert bundle.n_frames == 17 and len(bundle.camera_names) == 6
    assert bundle.intrinsics("CAM_FRONT").shape == (424, 800)
    t0 = time.perf_counter()
    res = curate(bundle, cfg, OracleBackend(bundle.scene))
    elapsed = time.perf_counter() - t0
    good = total = 0
    for (t, name), d in res.items():
        ref = bundle.depth(t, name)
        sky = bundle.sky(t, name)
        err = np.abs(d.depth.astype(np.float64) - ref.depth.astype(np.float64))[~sky]
        good += int(np.sum(err <= 1e-3))
        total += err.size
    frac = good / total
    ok = golden_ok and cli_ok and frac >= 0.99 and elapsed < 60.0
    report(
        capsys,
        6,
        ok,
        f"{frac:.5f} of non-sky pixels within 1e-3 m (>=0.99); golden identical: {golden_ok and cli_ok}; "
        f"full fixture curated in {elapsed:.1f} s (<60 s)",
    )


def test_criterion_07_condition_geometry(capsys):
    k = Intrinsics(500.0, 500.0, 319.5, 179.5, 640, 360)
    scene = fronto_plane_scene(10.0)
    cam, rgb, depth = dense_view(scene, Camera("C", k, Pose.identity()))
    cond = condition_at_view([(cam, rgb, depth)], Pose.from_translation((2.0, 0.0, 0.0)), k)
    vy, vx = np.nonzero(depth.valid)
    ty, tx = np.nonzero(cond.valid)
    src = cond.index[ty, tx]
    disp_err = float(np.abs((tx - vx[src]) - (-k.fx * 2.0 / 10.0)).max())
    row_ok = bool(np.all(ty == vy[src]))
    frames = two_camera_frames(corridor_scene(), 5, step=1.0)
    fwd = condition_at_offset(frames, 2, 2)["F"]
    cy, cx = 47, 63
    depth_err = abs(float(fwd.depth.depth[cy, cx]) - (float(frames[2][0][2].depth[cy, cx]) - 2.0))
    ok = disp_err <= 0.51 and row_ok and fwd.valid[cy, cx] and depth_err <= 1e-3
    report(capsys, 7, ok, f"disparity error {disp_err:.3f} px (<=0.51); forward n=2 depth error {depth_err:.2e} m (<=1e-3)")


def test_criterion_08_scc_round_trip(capsys):
    scene = scc_scene(period=2.0)
    cam = Camera("C", BASE_INTRINSICS, Pose.identity())
    views = [dense_view(scene, cam)]
    dens = OracleViewDensifier(scene)
    ident = scc_roundtrip(views, "C", Pose.identity(), dens).residuals
    shifted = [scc_roundtrip(views, "C", Pose.from_translation((s, 0.0, 0.0)), dens).residuals for s in (-2.0, 2.0)]
    rgb = max(r["rgb_mae"] for r in shifted)
    dep = max(r["depth_medae"] for r in shifted)
    # finer texture for the record: color aliasing grows with texture frequency (not asserted)
    fine = scc_scene(period=1.0)
    fine_views = [dense_view(fine, cam)]
    fine_rgb = max(
        scc_roundtrip(fine_views, "C", Pose.from_translation((s, 0.0, 0.0)), OracleViewDensifier(fine)).residuals["rgb_mae"]
        for s in (-2.0, 2.0)
    )
    ok = ident["rgb_mae"] == 0.0 and ident["depth_medae"] == 0.0 and rgb < 2 / 255 and dep < 0.01
    report(
        capsys,
        8,
        ok,
        f"identity residuals {ident['rgb_mae']}/{ident['depth_medae']}; +-2 m: rgb MAE {rgb:.5f} (<{2 / 255:.5f}), "
        f"depth medAE {dep:.4f} m (<0.01) [2 m checker; 1 m checker gives rgb MAE {fine_rgb:.5f}]",
    )


def test_criterion_09_metrics(capsys):
    rng = np.random.default_rng(9)
    gt = DepthFrame(rng.uniform(1.0, 40.0, (32, 32)))
    ident = eval_depth(gt, gt)
    ident_ok = (ident.abs_rel, ident.rmse, ident.delta1, ident.delta2) == (0.0, 0.0, 1.0, 1.0)
    two = eval_depth(DepthFrame(2.0 * gt.depth), gt)
    twom = eval_depth(DepthFrame(2.0 * gt.depth), gt, scaling="median")
    two_ok = two.abs_rel == 1.0 and two.delta1 == 0.0 and (twom.abs_rel, twom.rmse, twom.delta1) == (0.0, 0.0, 1.0)
    worst = 0.0
    for _ in range(100):
        g = DepthFrame(rng.uniform(0.05, 120.0, (32, 32)), rng.random((32, 32)) < 0.7)
        p = DepthFrame(g.depth * rng.lognormal(0, 0.3, (32, 32)) + (g.depth == 0) * 5.0, rng.random((32, 32)) < 0.8)
        for med in (False, True):
            r = eval_depth(p, g, scaling="median" if med else "none")
            ref = depth_metrics(p.depth, g.depth, median=med)
            worst = max(worst, *(abs(a - b) for a, b in zip((r.abs_rel, r.rmse, r.delta1, r.delta2), ref[:4])))
    inv = 0.0
    for _ in range(20):
        g = DepthFrame(rng.uniform(0.5, 90.0, (32, 32)), rng.random((32, 32)) < 0.7)
        p = np.where(rng.random((32, 32)) < 0.8, g.depth * rng.lognormal(0, 0.3, (32, 32)), 0.0)
        base = eval_depth(p, g, scaling="median")
        for c in (0.1, 3.0, 17.0):
            r = eval_depth(c * p, g, scaling="median")
            inv = max(inv, *(abs(getattr(r, a) - getattr(base, a)) for a in ("abs_rel", "rmse", "delta1", "delta2")))
    ok = ident_ok and two_ok and worst <= 1e-12 and inv <= 1e-12
    report(capsys, 9, ok, f"identity {ident_ok}, 2x gt {two_ok}, oracle max diff {worst:.1e}, scale invariance max diff {inv:.1e} (<=1e-12)")


def test_criterion_10_trajectory_perturbation(capsys):
    rng = np.random.default_rng(10)
    traj = Trajectory(tuple(random_pose(rng) for _ in range(10_000)))
    novel, taus = perturb_trajectory(traj, 10, (-3.0, 3.0))
    p = stats.kstest(taus, stats.uniform(loc=-3.0, scale=6.0).cdf).pvalue
    rot_ok = all(a.rotation.tobytes() == b.rotation.tobytes() for a, b in zip(traj.poses, novel.poses))
    off = 0.0
    for a, b in zip(traj.poses, novel.poses):
        d = b.translation - a.translation
        off = max(off, abs(d @ a.rotation[:, 0]), abs(d @ a.rotation[:, 2]))
    ok = p > 0.01 and rot_ok and off <= 1e-12 and taus.min() >= -3.0 and taus.max() <= 3.0
    report(capsys, 10, ok, f"KS p = {p:.3f} (>0.01), rotations bit-equal {rot_ok}, non-lateral drift {off:.1e} m (<=1e-12)")


def test_criterion_11_voxel_and_determinism(capsys, tmp_path):
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(20):
        n = int(rng.integers(100, 10_001))
        centers = rng.uniform(-5, 5, (int(rng.integers(1, 50)), 3))
        pos = centers[rng.integers(0, len(centers), n)] + rng.normal(scale=rng.uniform(0.02, 0.5), size=(n, 3))
        cloud = PointCloud(pos, rng.integers(0, 256, (n, 3)), source=Source.MVS)
        res = float(rng.uniform(0.05, 0.5))
        out = voxel_downsample(cloud, res)
        keys, cents, reps = voxel_hashgrid(pos, res)
        same = np.array_equal(out.positions, cents) and np.array_equal(out.colors, cloud.colors[reps])
        exact += same and voxel_downsample(cloud, res).equals(out)
    trees = []
    for jobs in (1, 2, 4):
        d = tmp_path / f"j{jobs}"
        args = ["render-condition", "--bundle", str(FIXTURE), "--voxel", "0.1", "--shifts", "2", "--jobs", str(jobs), "--out", str(d)]
        assert main(args) == 0
        trees.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    jobs_ok = trees[0] == trees[1] == trees[2]
    report(capsys, 11, exact == 20 and jobs_ok, f"{exact}/20 clouds identical to the hash-grid oracle; --jobs 1/2/4 outputs identical: {jobs_ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
