import json

import numpy as np
import pytest

from infinicity.metrics import OccupancyStats, stats_distance, world_stats
from infinicity.satmap import BUILDING, ROAD
from infinicity.voxelworld import OctreeBlock, assemble_world


def world_from(occ_setter):
    blk = OctreeBlock(0, 0)
    occ_setter(blk)
    return assemble_world([blk])


def test_stats_single_cube_oracle():
    # 2x2x2 cube: 8 voxels, every face of the cube is exposed
    def build(b):
        b.occ[10:12, 10:12, 2:4] = True
        b.cls[b.occ] = BUILDING
    s = world_stats(world_from(build))
    assert s.occupied == 8
    assert s.class_hist[BUILDING] == 8 and s.class_hist.sum() == 8
    assert s.height_hist[2] == 4 and s.height_hist[3] == 4
    # 8 voxels x 6 faces = 48; interior contacts 2 per touching pair: 24 exposed
    assert s.surface_ratio == 24 / 48
    assert s.column_contiguity == 1.0


def test_stats_floating_voxel_breaks_contiguity():
    def build(b):
        b.occ[0, 0, 0] = True
        b.occ[0, 0, 5] = True   # gap below: column not one solid run
        b.occ[1, 1, 0] = True
        b.cls[b.occ] = ROAD
    s = world_stats(world_from(build))
    assert s.column_contiguity == 0.5
    assert s.surface_ratio == 1.0  # three isolated voxels, all faces exposed


def test_stats_empty_world():
    s = world_stats(world_from(lambda b: None))
    assert s.occupied == 0
    assert s.surface_ratio == 0.0
    assert s.column_contiguity == 0.0
    assert s.class_hist.sum() == 0


def test_stats_world_boundary_counts_as_exposed():
    def build(b):
        b.occ[:, :, 0] = True  # full ground sheet
        b.cls[b.occ] = ROAD
    s = world_stats(world_from(build))
    # every sheet voxel has top+bottom exposed, edges add the rim
    expect = 2 * 64 * 64 + 4 * 64
    assert s.surface_ratio == expect / (6.0 * 64 * 64)


def test_stats_rejects_foreign_class_ids():
    def build(b):
        b.occ[0, 0, 0] = True
        b.cls[0, 0, 0] = 12
    with pytest.raises(ValueError):
        world_stats(world_from(build))


def test_stats_json_round_trip():
    def build(b):
        b.occ[3, 4, 5] = True
        b.cls[3, 4, 5] = ROAD
    s = world_stats(world_from(build))
    d = json.loads(s.to_json())
    back = OccupancyStats.from_dict(d)
    assert back.occupied == s.occupied
    np.testing.assert_array_equal(back.class_hist, s.class_hist)
    np.testing.assert_array_equal(back.height_hist, s.height_hist)
    assert back.surface_ratio == s.surface_ratio
    assert stats_distance(s, back) == 0.0


def test_stats_distance_metric_properties():
    def a(b):
        b.occ[0:4, 0:4, 0:2] = True
        b.cls[b.occ] = ROAD

    def c(b):
        b.occ[0:4, 0:4, 0:3] = True
        b.cls[b.occ] = BUILDING

    sa, sc = world_stats(world_from(a)), world_stats(world_from(c))
    assert stats_distance(sa, sa) == 0.0
    assert stats_distance(sa, sc) == stats_distance(sc, sa) > 0.0
    # normalization: duplicating the same shape far away changes nothing
    def a2(b):
        b.occ[0:4, 0:4, 0:2] = True
        b.occ[20:24, 20:24, 0:2] = True
        b.cls[b.occ] = ROAD
    assert stats_distance(sa, world_stats(world_from(a2))) == 0.0


def test_stats_distance_rejects_mismatched_bins():
    s = world_stats(world_from(lambda b: None))
    other = OccupancyStats(0, np.zeros(5), np.zeros(64), 0.0, 0.0)
    with pytest.raises(ValueError):
        stats_distance(s, other)
