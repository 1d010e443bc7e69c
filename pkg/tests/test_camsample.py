import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infinicity.camsample import (
    CameraPose, NoValidPoseError, WalkableMask, label_walkable, refine_mask,
    sample_camera, sample_cameras,
)
from infinicity.satmap import BRIDGE, BUILDING, CdnTile, ROAD, WATER
from infinicity.voxelworld import assemble_world, complete_pillar, lift_tile


def flat_tile(cls=ROAD, size: int = 64) -> CdnTile:
    cat = np.full((size, size), cls, dtype=np.uint8)
    hgt = np.zeros((size, size), dtype=np.uint16)
    nrm = np.zeros((size, size, 3), dtype=np.float32)
    nrm[:, :, 2] = 1.0
    return CdnTile(0, 0, cat, hgt, nrm)


def flat_world():
    return assemble_world([complete_pillar(lift_tile(flat_tile()))])


# --- labeling ------------------------------------------------------------------

def test_label_walkable_class_and_height():
    tile = flat_tile()
    tile.category[3, 4] = WATER
    tile.category[5, 6] = BUILDING
    tile.category[7, 8] = BRIDGE
    tile.height_m[9, 10] = 2  # elevated road pixel: not ground-walkable
    wm = label_walkable(tile)
    assert not wm.mask[3, 4] and not wm.mask[5, 6]
    assert wm.mask[7, 8]
    assert not wm.mask[9, 10]
    assert wm.mask[0, 0]
    assert wm.count == 64 * 64 - 3
    assert wm.provenance


# --- refinement ------------------------------------------------------------------

def test_refine_square_shrinks_one_per_iteration():
    m = np.zeros((120, 120), dtype=bool)
    m[10:110, 10:110] = True  # 100x100
    out = refine_mask(WalkableMask(0, 0, m))
    expect = np.zeros_like(m)
    expect[13:107, 13:107] = True  # 94x94
    np.testing.assert_array_equal(out.mask, expect)


def test_refine_kills_six_wide_corridor():
    m = np.zeros((40, 80), dtype=bool)
    m[17:23, :] = True  # 6 px wide, full width
    out = refine_mask(WalkableMask(0, 0, m))
    assert out.count == 0
    seven = np.zeros((40, 80), dtype=bool)
    seven[17:24, :] = True  # 7 px survives erosion, then prune sees 1x74
    eroded_only = refine_mask(WalkableMask(0, 0, seven), min_component_px=1)
    assert eroded_only.count == 1 * (80 - 6)


def test_refine_prunes_small_components():
    m = np.zeros((200, 200), dtype=bool)
    m[10:40, 10:40] = True    # erodes to 24x24 = 576 >= 400: kept
    m[100:125, 100:125] = True  # erodes to 19x19 = 361 < 400: pruned
    out = refine_mask(WalkableMask(0, 0, m))
    assert out.mask[20, 20]
    assert not out.mask[110:120, 110:120].any()
    assert out.count == 24 * 24


def test_refine_border_counts_as_unwalkable():
    m = np.ones((30, 30), dtype=bool)
    out = refine_mask(WalkableMask(0, 0, m), min_component_px=1)
    expect = np.zeros_like(m)
    expect[3:27, 3:27] = True
    np.testing.assert_array_equal(out.mask, expect)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_refine_is_subset_of_input(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((48, 48)) < 0.7
    out = refine_mask(WalkableMask(0, 0, m))
    assert not (out.mask & ~m).any()
    assert out.provenance[-2:] == ["erode:cross x3", "prune:<400px"]


# --- pose sampling -----------------------------------------------------------------

def test_sample_cameras_deterministic_and_in_bounds():
    world = flat_world()
    wm = refine_mask(label_walkable(flat_tile()))
    a = sample_cameras(wm, world, 8, seed=5)
    b = sample_cameras(wm, world, 8, seed=5)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]
    c = sample_cameras(wm, world, 8, seed=6)
    assert [p.to_dict() for p in a] != [p.to_dict() for p in c]

    for p in a:
        px, py = int(np.floor(p.position[0])), int(np.floor(p.position[1]))
        assert wm.mask[py - wm.y, px - wm.x]
        assert 0.0 <= p.yaw_deg < 360.0
        assert 0.0 <= p.pitch_deg <= 45.0
        assert 0.0 <= p.roll_deg < 360.0
        # flat ground at z=0: eye sits at 1 + 1.7
        assert p.position[2] == pytest.approx(2.7)
        iz = int(np.floor(p.position[2]))
        assert not world.is_occupied(px, py, iz)
        assert not world.is_occupied(px, py, iz + 1)


def test_sample_cameras_rejection_loop_exhausts():
    # an eye height that sinks the eye into the ground voxel collides on
    # every attempt, so the retry budget must run out loudly
    world = flat_world()
    wm = label_walkable(flat_tile())
    with pytest.raises(NoValidPoseError, match="attempts"):
        sample_cameras(wm, world, 1, seed=0, eye_height_m=-0.5, max_attempts=20)


def test_sample_cameras_empty_mask_raises():
    world = flat_world()
    empty = WalkableMask(0, 0, np.zeros((64, 64), dtype=bool))
    with pytest.raises(NoValidPoseError):
        sample_cameras(empty, world, 1, seed=0)


def test_sample_cameras_rejects_negative_n():
    world = flat_world()
    wm = label_walkable(flat_tile())
    with pytest.raises(ValueError):
        sample_cameras(wm, world, -1, seed=0)
    assert sample_cameras(wm, world, 0, seed=0) == []


def test_sample_camera_single():
    world = flat_world()
    wm = label_walkable(flat_tile())
    p = sample_camera(wm, world, seed=3)
    assert isinstance(p, CameraPose)
    q = sample_cameras(wm, world, 1, seed=3)[0]
    assert p.to_dict() == q.to_dict()


def test_pose_dict_round_trip():
    p = CameraPose(np.array([1.5, -2.25, 3.0]), 10.0, 20.0, 30.0)
    q = CameraPose.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.position, p.position)
    assert (q.yaw_deg, q.pitch_deg, q.roll_deg) == (10.0, 20.0, 30.0)


def test_sample_cameras_on_real_map(seed1_world_and_tile, seed1_mask):
    world, _ = seed1_world_and_tile
    poses = sample_cameras(seed1_mask, world, 32, seed=11)
    assert len(poses) == 32
    for p in poses:
        px, py = int(np.floor(p.position[0])), int(np.floor(p.position[1]))
        assert seed1_mask.mask[py - seed1_mask.y, px - seed1_mask.x]
        iz = int(np.floor(p.position[2]))
        assert not world.is_occupied(px, py, iz)
        assert not world.is_occupied(px, py, iz + 1)
