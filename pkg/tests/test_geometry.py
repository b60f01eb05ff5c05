import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvcount.errors import DomainError
from mvcount.geometry import (
    CameraRig,
    VoxelGrid,
    camera_vector,
    hit_mask,
    identity_augment,
    intrinsics,
    look_at,
    positional_encoding_image,
    positional_encoding_volume,
    project_point,
    voxel_hits_view,
    voxel_to_world,
)


def oracle_project(K, M, xyz):
    """Explicit loops over K @ M @ [x, y, z, 1] followed by division."""
    hom = list(xyz) + [1.0]
    cam = [sum(M[i][j] * hom[j] for j in range(4)) for i in range(3)]
    pix = [sum(K[i][j] * cam[j] for j in range(3)) for i in range(3)]
    return pix[0] / pix[2], pix[1] / pix[2], cam[2]


def canonical_rig(h=10, w=10, K=None):
    return CameraRig(np.eye(3) if K is None else K, np.hstack([np.eye(3), np.zeros((3, 1))]), (h, w))


def random_rig(rng, size=(48, 64)):
    center = rng.uniform([-8, -8, 3], [8, 8, 9])
    target = rng.uniform(-1, 1, size=3)
    K = intrinsics(rng.uniform(30, 90), size[1] / 2 + rng.uniform(-3, 3), size[0] / 2 + rng.uniform(-3, 3))
    return CameraRig(K, look_at(center, target), size)


# -- voxel_to_world ---------------------------------------------------------------------

def test_voxel_to_world_examples():
    g4 = VoxelGrid((4, 4, 4), 0.5)
    assert voxel_to_world((0, 0, 0), g4) == (-1.0, -1.0, -1.0)
    assert voxel_to_world((2, 2, 2), g4) == (0.0, 0.0, 0.0)
    g8 = VoxelGrid((8, 8, 8), 0.25)
    assert voxel_to_world((7, 0, 3), g8) == (-0.25, -1.0, 0.75)
    assert voxel_to_world((4, 4, 4), g8) == (0.0, 0.0, 0.0)


def test_voxel_to_world_out_of_grid():
    with pytest.raises(DomainError):
        voxel_to_world((4, 0, 0), VoxelGrid((4, 4, 4), 0.5))


def test_world_points_match_scalar_version():
    grid = VoxelGrid((3, 4, 5), 0.3)
    pts = grid.world_points()
    for p in np.ndindex(*grid.shape):
        assert tuple(pts[p]) == pytest.approx(voxel_to_world(p, grid), abs=0)


def test_voxel_center_offset_flag():
    grid = VoxelGrid((4, 4, 4), 1.0, center_offset=0.5)
    assert voxel_to_world((0, 0, 0), grid) == (-1.5, -1.5, -1.5)


def test_coarsen_aligns_with_fine_grid():
    fine = VoxelGrid((8, 32, 32), 0.25)
    coarse = fine.coarsen()
    assert coarse.shape == (4, 16, 16) and coarse.voxel_size == 0.5
    assert voxel_to_world((1, 3, 5), coarse) == voxel_to_world((2, 6, 10), fine)


# -- projection ---------------------------------------------------------------------------

def test_project_canonical_and_behind():
    rig = canonical_rig()
    assert project_point(rig, (0, 0, 1)) == (0.0, 0.0, 1.0)
    assert project_point(rig, (0, 0, -1)) is None
    assert project_point(rig, (0, 0, 1e-3)) is None


def test_project_hand_computed():
    K = np.array([[100.0, 0, 50], [0, 100, 50], [0, 0, 1]])
    u, v, z = project_point(canonical_rig(K=K), (0.1, 0.2, 2.0))
    assert (u, v, z) == pytest.approx((55.0, 60.0, 2.0), abs=1e-12)


def test_projection_matches_oracle_over_grid():
    rng = np.random.default_rng(0)
    grid = VoxelGrid((4, 6, 6), 0.4)
    for _ in range(5):
        rig = random_rig(rng)
        for p in np.ndindex(*grid.shape):
            xyz = voxel_to_world(p, grid)
            got = project_point(rig, xyz)
            u, v, z = oracle_project(rig.K.tolist(), rig.M.tolist(), xyz)
            if z > 1e-3:
                assert got == pytest.approx((u, v, z), abs=1e-9)
            else:
                assert got is None


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2**31))
def test_projection_homogeneous_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    xyz = rng.uniform(-2, 2, size=3)
    scaled = CameraRig(rig.K, rig.M, rig.image_size)
    base = project_point(rig, xyz)
    if base is None:
        return
    a, b, c = (rig.K @ rig.M @ np.append(xyz, 1.0)) * scale
    assert (a / c, b / c) == pytest.approx(base[:2], abs=1e-9)
    assert project_point(scaled, xyz) == base


# -- hit test -------------------------------------------------------------------------------

def test_hit_examples():
    K = np.array([[10.0, 0, 4.5], [0, 10, 4.5], [0, 0, 1]])
    rig = canonical_rig(K=K)
    assert voxel_hits_view(rig, (0, 0, 1))
    assert not voxel_hits_view(rig, (0, 0, -1))
    # u = W_img + 10 = 20  ->  x = (20 - 4.5) / 10
    assert not voxel_hits_view(rig, (1.55, 0, 1))
    # inclusive of the last pixel index
    assert voxel_hits_view(rig, (0.45, 0.45, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 40), st.integers(0, 40))
def test_hit_monotone_under_enlargement(seed, dh, dw):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    big = rig.with_image_size(rig.image_size[0] + dh, rig.image_size[1] + dw)
    pts = VoxelGrid((4, 8, 8), 0.5).world_points()
    small_hits = hit_mask(rig, pts)
    assert np.all(hit_mask(big, pts)[small_hits])


# -- camera vector and encodings ----------------------------------------------------------------

def test_camera_vector_layout():
    rig = canonical_rig()
    xi = camera_vector(rig, "image")
    assert xi.shape == (27,)
    assert np.count_nonzero(xi == 0) == 19  # 9 in M, 6 in K, 4 in A
    expected = np.concatenate([np.hstack([np.eye(3), np.zeros((3, 1))]).ravel(), np.eye(3).ravel(), identity_augment().ravel()])
    np.testing.assert_array_equal(xi, expected)
    other = CameraRig(rig.K, rig.M, rig.image_size, a_c=[[2, 0, 1], [0, 1, 0]])
    diff = np.nonzero(camera_vector(other, "image") != xi)[0]
    assert set(diff) <= set(range(21, 27)) and len(diff) > 0
    np.testing.assert_array_equal(camera_vector(other, "volume"), camera_vector(rig, "volume"))


def test_camera_vector_injective_on_single_entries():
    rng = np.random.default_rng(1)
    rig = random_rig(rng)
    base = camera_vector(rig, "image")
    for i in range(9):
        if i in (6, 7, 8):  # last row of K is fixed
            continue
        K = rig.K.copy()
        K.flat[i] += 1e-9
        assert not np.array_equal(camera_vector(CameraRig(K, rig.M, rig.image_size), "image"), base)
    for i in range(3, 12, 4):  # translation entries keep the rotation valid
        M = rig.M.copy()
        M.flat[i] += 1e-9
        assert not np.array_equal(camera_vector(CameraRig(rig.K, M, rig.image_size), "image"), base)
    for i in range(6):
        A = identity_augment()
        A.flat[i] += 1e-9
        assert not np.array_equal(camera_vector(CameraRig(rig.K, rig.M, rig.image_size, a_c=A), "image"), base)


def test_positional_encodings():
    pc = positional_encoding_image(3, 4)
    assert pc.shape == (2, 3, 4)
    assert tuple(pc[:, 0, 0]) == (0.0, 0.0)
    assert np.all(pc[0, :, -1] == 0.75)
    assert pc.min() >= 0 and pc.max() < 1
    pv = positional_encoding_volume(8, 4, 2)
    assert pv.shape == (3, 8, 4, 2)
    assert tuple(pv[:, 0, 0, 0]) == (0.0, 0.0, 0.0)
    assert pv[0, 4, 0, 0] == 0.5
    assert pv.min() >= 0 and pv.max() < 1


# -- rig validation --------------------------------------------------------------------------------

def test_rig_rejects_invalid_matrices():
    with pytest.raises(DomainError):
        CameraRig(np.diag([1.0, 1.0, 2.0]), np.hstack([np.eye(3), np.zeros((3, 1))]), (4, 4))
    with pytest.raises(DomainError):
        CameraRig(np.eye(3), np.hstack([2 * np.eye(3), np.zeros((3, 1))]), (4, 4))
    with pytest.raises(DomainError):
        CameraRig(np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]), (0, 4))


def test_look_at_builds_rotation_facing_target():
    M = look_at((10, 0, 5), (0, 0, 0))
    R = M[:, :3]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    rig = CameraRig(intrinsics(50, 32, 24), M, (48, 64))
    u, v, z = project_point(rig, (0, 0, 0))
    assert (u, v) == pytest.approx((32, 24), abs=1e-9)
    # a point above the target appears higher in the image (smaller v)
    assert project_point(rig, (0, 0, 1))[1] < v
