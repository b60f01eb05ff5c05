import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvcount import scenegen
from mvcount.errors import GenerationError
from mvcount.geometry import CameraRig, VoxelGrid, check_rotation, intrinsics, look_at, project_point, voxel_to_world
from mvcount.lifting import reference_points
from mvcount.scenegen import (
    BACKGROUND,
    BOX_COLOR,
    DEFAULT_GRID,
    HEAD_COLOR,
    Box,
    LayoutSpec,
    Scene,
    Terrain,
    generate_layout,
    generate_scene,
    head_radius_px,
    head_visibility,
    ipm_lift_baseline,
    ipm_reference_points,
    perturb_extrinsics,
    render_gt_density2d,
    render_gt_density3d,
    render_image,
    render_images,
)


def oracle_segment_blocked(a, b, box, samples=20001):
    """Dense point sampling along the segment, strictly between its end points."""
    t = np.linspace(0, 1, samples)[1:-1, None]
    pts = a + t * (b - a)
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    return bool(np.any(np.all((pts >= lo) & (pts <= hi), axis=1)))


def rig_at(center, target=(0, 0, 0), focal=50.0):
    return CameraRig(intrinsics(focal, 31.5, 31.5), look_at(center, target), (64, 64))


def occlusion_scene():
    head = np.array([0.0, 0.0, 0.0])
    box = Box((4.0, -0.5, -1.7), (5.0, 0.5, 2.5))  # between +x camera and the head
    return Scene(head[None], Terrain(), [box], seed=3), rig_at((11.0, 0, 4.0)), rig_at((-11.0, 0, 4.0))


# -- scenes ---------------------------------------------------------------------------------

def test_scene_determinism_and_empty():
    a = generate_scene(4, 15, "inclined", occluders=2)
    b = generate_scene(4, 15, "inclined", occluders=2)
    np.testing.assert_array_equal(a.heads, b.heads)
    assert a.terrain == b.terrain and a.occluders == b.occluders
    assert generate_scene(1, 0).count == 0


@pytest.mark.parametrize("terrain", ["flat", "inclined", "bumps"])
def test_heads_in_grid_and_person_height_above_terrain(terrain):
    s = generate_scene(7, 40, terrain)
    assert s.count == 40
    assert np.all(DEFAULT_GRID.contains(s.heads))
    above = s.heads[:, 2] - s.terrain.height(s.heads[:, 0], s.heads[:, 1])
    assert np.all((above >= 1.4) & (above <= 1.9))


def test_congested_mode_density():
    s = generate_scene(2, 30, congested=True)
    span = s.heads[:, :2].max(axis=0) - s.heads[:, :2].min(axis=0)
    assert s.count / np.prod(span) >= 2.0


def test_unplaceable_crowd_raises():
    with pytest.raises(GenerationError):
        generate_scene(0, 5000, max_attempts=20000)


# -- layouts ---------------------------------------------------------------------------------

def test_fixed_layout_count_rotation_and_overlap():
    scene = generate_scene(5, 20)
    rigs = generate_layout(5, LayoutSpec(views=3), scene=scene)
    assert len(rigs) == 3
    for r in rigs:
        check_rotation(r.R)
    seen = np.sum([scenegen.hit_mask(r, scene.heads) for r in rigs], axis=0)
    assert np.all(seen >= 2)
    again = generate_layout(5, LayoutSpec(views=3), scene=scene)
    assert all(a == b for a, b in zip(rigs, again))


def test_uniform_view_count_covers_range():
    spec = LayoutSpec(views=(2, 11))
    counts = {len(generate_layout(seed, spec)) for seed in range(1000)}
    assert counts == set(range(2, 12))


def test_shuffled_layout_is_a_permutation():
    spec = LayoutSpec(views=5)
    a = generate_layout(9, spec)
    b = generate_layout(9, spec, shuffle=True)
    assert len(b) == 5 and all(any(x == y for y in a) for x in b)


def test_unmeetable_overlap_raises():
    spec = LayoutSpec(views=2, focal=(2000.0, 2001.0), max_retries=5)
    with pytest.raises(GenerationError):
        generate_layout(0, spec)


# -- visibility and rendering --------------------------------------------------------------------

def test_visibility_matches_ray_box_oracle():
    for seed in range(15):
        scene = generate_scene(seed, 12, occluders=3)
        for rig in generate_layout(seed, LayoutSpec(views=3)):
            vis = head_visibility(scene, rig)
            for i, head in enumerate(scene.heads):
                framed = scenegen.hit_mask(rig, head)
                blocked = any(oracle_segment_blocked(rig.center, head, b) for b in scene.occluders)
                assert vis[i] == (framed and not blocked)


def test_empty_scene_renders_background():
    rig = rig_at((11.0, 0, 4.0))
    img = render_image(Scene(np.zeros((0, 3))), rig, noise_seed=5)
    noise = np.random.default_rng(5).normal(size=(3, 64, 64))
    np.testing.assert_allclose(img, BACKGROUND[:, None, None] + 0.02 * noise, atol=1e-15)


def test_occluded_head_absent_only_where_blocked():
    scene, front, back = occlusion_scene()
    assert oracle_segment_blocked(front.center, scene.heads[0], scene.occluders[0])
    assert not oracle_segment_blocked(back.center, scene.heads[0], scene.occluders[0])
    np.testing.assert_array_equal(head_visibility(scene, front), [False])
    np.testing.assert_array_equal(head_visibility(scene, back), [True])
    img_front, img_back = render_images(scene, [front, back], noise=0.0)
    u, v, _ = project_point(back, scene.heads[0])
    np.testing.assert_allclose(img_back[:, round(v), round(u)], HEAD_COLOR, atol=0.2)
    u, v, _ = project_point(front, scene.heads[0])
    np.testing.assert_allclose(img_front[:, round(v), round(u)], BOX_COLOR, atol=1e-12)
    assert not np.any(np.all(np.abs(img_front - HEAD_COLOR[:, None, None]) < 0.1, axis=0))


def test_disk_radius_decreases_with_depth():
    depths = np.linspace(1, 30, 50)
    assert np.all(np.diff(head_radius_px(50.0, depths)) < 0)


def test_visibility_single_source(monkeypatch):
    scene, _, back = occlusion_scene()
    monkeypatch.setattr(scenegen, "head_visibility", lambda s, r: np.zeros(s.count, bool))
    assert np.all(render_gt_density2d(scene, back) == 0)
    blank = render_image(Scene(np.zeros((0, 3))), back, noise_seed=1)
    np.testing.assert_array_equal(render_image(Scene(scene.heads), back, noise_seed=1), blank)


# -- ground truth ----------------------------------------------------------------------------------

def test_gt3d_single_centered_head():
    grid = DEFAULT_GRID
    p = voxel_to_world((4, 16, 16), grid)
    g = render_gt_density3d(Scene(np.array([p])), grid)
    assert g.shape == (1, 8, 32, 32)
    assert g.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.unravel_index(np.argmax(g[0]), grid.shape) == (4, 16, 16)


def test_gt3d_boundary_head_keeps_unit_mass():
    grid = DEFAULT_GRID
    p = voxel_to_world((0, 0, 31), grid)
    assert render_gt_density3d(Scene(np.array([p])), grid).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 30))
def test_gt_mass_conservation(seed, n):
    scene = generate_scene(seed % 10000, n, ["flat", "inclined", "bumps"][seed % 3], occluders=seed % 3)
    for grid in (DEFAULT_GRID, DEFAULT_GRID.coarsen()):
        assert render_gt_density3d(scene, grid).sum() == pytest.approx(n, abs=max(n, 1) * 1e-9)
    for rig in generate_layout(seed % 10000, LayoutSpec(views=3)):
        assert render_gt_density2d(scene, rig).sum() == pytest.approx(head_visibility(scene, rig).sum(), abs=1e-6)


def test_gt_counts_are_additive():
    a = generate_scene(1, 8)
    b = generate_scene(2, 5)
    union = Scene(np.concatenate([a.heads, b.heads]))
    total = render_gt_density3d(union, DEFAULT_GRID)
    np.testing.assert_allclose(total, render_gt_density3d(a, DEFAULT_GRID) + render_gt_density3d(b, DEFAULT_GRID), atol=1e-12)
    assert total.sum() == pytest.approx(13, abs=2e-3)


def test_gt2d_occluded_head_contributes_nothing():
    scene, front, back = occlusion_scene()
    assert render_gt_density2d(scene, front).sum() == 0.0
    h = render_gt_density2d(scene, back)
    assert h.shape == (1, 16, 16) and h.sum() == pytest.approx(1.0, abs=1e-12)


# -- perturbation -----------------------------------------------------------------------------------

def test_zero_perturbation_is_identity():
    rig = rig_at((10.0, 3.0, 6.0))
    assert perturb_extrinsics(rig, 0.0, 0.0, seed=1) == rig


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 10.0), st.floats(0.0, 1.0))
def test_perturbed_rotation_stays_orthonormal(seed, deg, metres):
    rig = rig_at((10.0, 3.0, 6.0))
    out = perturb_extrinsics(rig, deg, metres, seed)
    assert np.max(np.abs(out.R @ out.R.T - np.eye(3))) <= 1e-9
    angle = np.degrees(np.arccos(np.clip((np.trace(out.R @ rig.R.T) - 1) / 2, -1, 1)))
    assert angle <= deg + 1e-6


def test_one_degree_moves_projection_by_bounded_amount():
    rig = rig_at((10.0, 0.0, 0.0), focal=50.0)
    theta = np.deg2rad(1.0)
    for seed in range(20):
        out = perturb_extrinsics(rig, 1.0, 0.0, seed)
        angle = np.arccos(np.clip((np.trace(out.R @ rig.R.T) - 1) / 2, -1, 1))
        for cam in ([0.0, 0.0, 5.0], [1.0, -0.5, 5.0], [-1.5, 1.5, 5.0]):
            xyz = rig.R.T @ (np.array(cam) - rig.t)
            u0, v0, _ = project_point(rig, xyz)
            u1, v1, _ = project_point(out, xyz)
            p = np.array(cam[:2]) / cam[2]
            # first-order bound on the pinhole map under a rotation of this angle
            bound = 50.0 * angle * (1 + p @ p) * 1.05 + 1e-9
            assert np.hypot(u1 - u0, v1 - v0) <= bound
            assert angle <= theta + 1e-12


# -- IPM baseline -------------------------------------------------------------------------------------

def test_ipm_matches_attention_reference_on_ground_slice():
    grid = DEFAULT_GRID
    rig = CameraRig(intrinsics(30, 31.5, 31.5), look_at((0, 0, 15), (0, 0, 0), up=(0, 1, 0)), (64, 64))
    ipm = ipm_reference_points(grid, rig)
    ref = reference_points(grid, rig).uv[4]  # the z = 0 slice
    np.testing.assert_allclose(ipm, ref, atol=1e-12, equal_nan=True)


def test_ipm_misplaces_elevated_heads():
    grid = DEFAULT_GRID
    rig = rig_at((11.0, 2.0, 6.0), focal=50.0)
    voxel = (7, 20, 12)  # z = 0.75 m, above the IPM plane
    head = np.array(voxel_to_world(voxel, grid))
    u, v, _ = project_point(rig, head)
    np.testing.assert_allclose(reference_points(grid, rig).uv[voxel], (u, v), atol=1e-12)
    ipm_uv = ipm_reference_points(grid, rig)[voxel[1], voxel[2]]
    assert np.hypot(*(ipm_uv - (u, v))) > 1.0


def test_ipm_column_copy_and_all_miss():
    rng = np.random.default_rng(1)
    grid = VoxelGrid((4, 8, 8), 0.5)
    feature = rng.normal(size=(4, 16, 16))
    rig = rig_at((8.0, 1.0, 5.0), focal=40.0)
    out = ipm_lift_baseline(feature, rig, grid).data
    hits = scenegen.hit_mask(rig, grid.world_points())
    assert np.all(out[:, ~hits] == 0)
    col = out[:, :, 3, 5]
    for d in range(4):
        if hits[d, 3, 5]:
            np.testing.assert_array_equal(col[:, d], out[:, np.flatnonzero(hits[:, 3, 5])[0], 3, 5])
    away = rig_at((0.0, -10.0, 1.0), target=(0.0, -20.0, 1.0))
    assert np.all(ipm_lift_baseline(feature, away, grid).data == 0)
