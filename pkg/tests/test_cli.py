import json

import numpy as np
import pytest

from infinicity import camsample, latentgrid, satmap, voxelworld
from infinicity.cli import main
from infinicity.latentgrid import Rect

TMESH = """# tmesh v1
v 0.0 0.0 0.0
v 4.0 0.0 0.0
v 4.0 4.0 0.0
v 0.0 4.0 0.0
f 0 1 2 4
f 0 2 3 4
"""


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def world_file(cli_dir):
    out = cli_dir / "world.iwrl"
    assert main(["world", "build", "--seed", "1", "--rect", "0,0,128,128",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def poses_file(cli_dir, world_file):
    out = cli_dir / "poses.jsonl"
    assert main(["camera", "sample", "--world", str(world_file),
                 "--n", "2", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["--version"])
    assert ei.value.code == 0
    assert "infinicity" in capsys.readouterr().out


def test_map_synth_matches_library(tmp_path):
    out = tmp_path / "t.icdn"
    assert main(["map", "synth", "--seed", "11", "--rect=-8,4,40,24",
                 "--out", str(out)]) == 0
    tile = satmap.load_tile(out, satmap.default_palette())
    want = latentgrid.synthesize_region(latentgrid.sample_field(11), Rect(-8, 4, 40, 24))
    np.testing.assert_array_equal(tile.category, want.category)
    np.testing.assert_array_equal(tile.height_m, want.height_m)
    np.testing.assert_allclose(tile.normal, want.normal, atol=1.0 / 32767)


def test_map_synth_clean_flag(tmp_path):
    out = tmp_path / "t.icdn"
    assert main(["map", "synth", "--seed", "11", "--rect", "0,0,32,32",
                 "--clean", "--out", str(out)]) == 0
    tile = satmap.load_tile(out, satmap.default_palette())
    want = satmap.clean_tile(
        latentgrid.synthesize_region(latentgrid.sample_field(11), Rect(0, 0, 32, 32)))
    np.testing.assert_array_equal(tile.height_m, want.height_m)


def test_map_synth_field_round_trip(tmp_path):
    fld = tmp_path / "f.iclf"
    t1 = tmp_path / "a.icdn"
    t2 = tmp_path / "b.icdn"
    assert main(["map", "synth", "--seed", "5", "--rect", "0,0,16,16",
                 "--out", str(t1), "--field-out", str(fld)]) == 0
    assert main(["map", "synth", "--field", str(fld), "--rect", "0,0,16,16",
                 "--out", str(t2)]) == 0
    assert t1.read_bytes() == t2.read_bytes()


def test_map_synth_usage_errors(tmp_path, capsys):
    assert main(["map", "synth", "--rect", "0,0,8,8",
                 "--out", str(tmp_path / "x.icdn")]) == 2
    assert "--seed or --field" in capsys.readouterr().err
    with pytest.raises(SystemExit) as ei:
        main(["map", "synth", "--seed", "1", "--rect", "1,2,3",
              "--out", str(tmp_path / "x.icdn")])
    assert ei.value.code == 2


def test_map_synth_missing_field_file(tmp_path, capsys):
    assert main(["map", "synth", "--field", str(tmp_path / "no.iclf"),
                 "--rect", "0,0,8,8", "--out", str(tmp_path / "x.icdn")]) == 3
    assert "STAGE=map ERROR=" in capsys.readouterr().err


def test_map_resample(tmp_path, capsys):
    fld = tmp_path / "f.iclf"
    tile_out = tmp_path / "t.icdn"
    assert main(["map", "resample", "--seed", "2", "--rect", "0,0,32,32",
                 "--resample-seed", "77", "--field-out", str(fld),
                 "--tile-out", str(tile_out)]) == 0
    out = capsys.readouterr().out
    assert "resampled 25 cells" in out

    loaded = latentgrid.load_field(fld)
    want, cells = latentgrid.resample_region(
        latentgrid.sample_field(2), Rect(0, 0, 32, 32), 77)
    assert len(cells) == 25
    foot = latentgrid.influence_rect(cells, latentgrid.DEFAULT_RADIUS_PX, 32)
    tile = satmap.load_tile(tile_out, satmap.default_palette())
    np.testing.assert_array_equal(
        tile.category, latentgrid.synthesize_region(want, foot).category)
    np.testing.assert_array_equal(
        latentgrid.synthesize_region(loaded, Rect(-16, -16, 64, 64)).height_m,
        latentgrid.synthesize_region(want, Rect(-16, -16, 64, 64)).height_m)


def test_ingest_quad(tmp_path, capsys):
    mesh = tmp_path / "quad.tmesh"
    mesh.write_text(TMESH)
    out = tmp_path / "blk.ioct"
    tile_out = tmp_path / "scan.icdn"
    assert main(["ingest", "--mesh", str(mesh), "--out", str(out),
                 "--tile-out", str(tile_out)]) == 0
    assert "-> 16 voxels" in capsys.readouterr().out
    blk = voxelworld.load_block(out)
    assert blk.occupied_count() == 16
    assert blk.cls[0, 0, 0] == 4
    tile = satmap.load_tile(tile_out, satmap.default_palette())
    assert tile.category[0, 0] == 4


def test_ingest_errors(tmp_path, capsys):
    assert main(["ingest", "--mesh", str(tmp_path / "no.tmesh"),
                 "--out", str(tmp_path / "x.ioct")]) == 3
    assert "STAGE=ingest" in capsys.readouterr().err
    bad = tmp_path / "bad.tmesh"
    bad.write_text("v 0 0 0\nq 1 2 3\n")
    assert main(["ingest", "--mesh", str(bad), "--out", str(tmp_path / "x.ioct")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_world_build_matches_library(world_file):
    blocks, completion = voxelworld.load_world_blocks(world_file)
    assert completion == "watertight"
    assert len(blocks) == 4
    tile = satmap.clean_tile(
        latentgrid.synthesize_region(latentgrid.sample_field(1), Rect(0, 0, 128, 128)))
    sub = tile.crop(0, 0, 64, 64)
    want = voxelworld.complete_watertight(voxelworld.lift_tile(sub, 0, 0))
    got = next(b for b in blocks if (b.bx, b.by) == (0, 0))
    np.testing.assert_array_equal(got.occ, want.occ)
    np.testing.assert_array_equal(got.cls, want.cls)
    np.testing.assert_array_equal(got.nrm[got.occ], want.nrm[want.occ])


def test_world_build_alignment_error(tmp_path, capsys):
    assert main(["world", "build", "--seed", "1", "--rect", "0,0,100,64",
                 "--out", str(tmp_path / "w.iwrl")]) == 2
    assert "aligned" in capsys.readouterr().err


def test_world_export_points(world_file, tmp_path):
    out = tmp_path / "pts.xyz"
    assert main(["world", "export-points", "--world", str(world_file),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# x y z class"
    world = voxelworld.load_world(world_file)
    assert len(lines) - 1 == world.occupied_count()
    first = lines[1].split()
    assert len(first) == 4
    assert all(p.endswith(".5") for p in first[:3]) and first[3].isdigit()


def test_camera_sample(poses_file, world_file, tmp_path):
    lines = [json.loads(s) for s in poses_file.read_text().splitlines()]
    assert len(lines) == 2
    for d in lines:
        p = camsample.CameraPose.from_dict(d)
        assert 0.0 <= p.pitch_deg <= 45.0
    again = tmp_path / "again.jsonl"
    assert main(["camera", "sample", "--world", str(world_file),
                 "--n", "2", "--seed", "3", "--out", str(again)]) == 0
    assert again.read_bytes() == poses_file.read_bytes()


def test_camera_sample_no_pose(world_file, tmp_path, capsys):
    assert main(["camera", "sample", "--world", str(world_file), "--n", "1",
                 "--min-component", str(10**9),
                 "--out", str(tmp_path / "p.jsonl")]) == 3
    assert "STAGE=camera" in capsys.readouterr().err


def test_render_single_pose(world_file, tmp_path):
    prefix = tmp_path / "frame"
    code = main(["render", "--world", str(world_file),
                 "--pose", "64,64,40,30,35,0", "--size", "64x48",
                 "--out-prefix", str(prefix)])
    assert code == 0
    from PIL import Image
    shaded = Image.open(tmp_path / "frame_shaded.png")
    assert shaded.size == (64, 48)
    depth = np.load(tmp_path / "frame_depth.npy")
    assert depth.shape == (48, 64)
    assert np.isfinite(depth).any()

    prefix2 = tmp_path / "frame2"
    assert main(["render", "--world", str(world_file),
                 "--pose", "64,64,40,30,35,0", "--size", "64x48",
                 "--out-prefix", str(prefix2)]) == 0
    assert (tmp_path / "frame2_shaded.png").read_bytes() == \
        (tmp_path / "frame_shaded.png").read_bytes()
    assert (tmp_path / "frame2_depth.npy").read_bytes() == \
        (tmp_path / "frame_depth.npy").read_bytes()


def test_render_poses_file(world_file, poses_file, tmp_path):
    prefix = tmp_path / "cam"
    assert main(["render", "--world", str(world_file), "--poses", str(poses_file),
                 "--size", "32x24", "--out-prefix", str(prefix)]) == 0
    for k in range(2):
        assert (tmp_path / f"cam_{k:03d}_semantic.png").exists()


def test_render_usage_and_stage_errors(world_file, tmp_path, capsys):
    assert main(["render", "--world", str(world_file),
                 "--out-prefix", str(tmp_path / "f")]) == 2
    assert "--pose or --poses" in capsys.readouterr().err
    assert main(["render", "--world", str(tmp_path / "no.iwrl"),
                 "--pose", "0,0,9,0,0,0",
                 "--out-prefix", str(tmp_path / "f")]) == 3
    assert "STAGE=render" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    assert main(["render", "--world", str(world_file), "--poses", str(bad),
                 "--out-prefix", str(tmp_path / "f")]) == 3


def test_stats_and_compare(world_file, tmp_path, capsys):
    out = tmp_path / "stats.json"
    assert main(["stats", "--world", str(world_file), "--out", str(out),
                 "--compare", str(world_file)]) == 0
    assert "distance: 0.0" in capsys.readouterr().out
    st = json.loads(out.read_text())
    assert st["occupied"] > 0 and len(st["class_hist"]) == 12


def test_pipeline_run_deterministic(cli_dir, capsys):
    args = ["pipeline", "run", "--seed", "1", "--extent", "128x128",
            "--cameras", "2", "--frame-size", "48x32"]
    a, b = cli_dir / "runA", cli_dir / "runB"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    capsys.readouterr()
    ma, mb = (a / "manifest.json").read_bytes(), (b / "manifest.json").read_bytes()
    assert ma == mb
    man = json.loads(ma)
    assert {s["name"] for s in man["stages"]} == {"map", "world", "camera", "render"}
    for stage in man["stages"]:
        for name, digest in stage["artifacts"].items():
            assert len(digest) == 64
            assert (a / name).exists() and (b / name).exists()
    assert (a / "frame_001_shaded.png").exists()


def test_pipeline_config_file(cli_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cameras": 1, "frame_size": "32x24", "fov": 55.0}))
    out = tmp_path / "run"
    assert main(["pipeline", "run", "--seed", "1", "--extent", "128x128",
                 "--out", str(out), "--cameras", "2", "--config", str(cfg)]) == 0
    capsys.readouterr()
    man = json.loads((out / "manifest.json").read_text())
    # explicit --cameras wins over the config value; the rest come from it
    assert man["parameters"]["cameras"] == 2
    assert man["parameters"]["frame_size"] == [32, 24]
    assert man["parameters"]["fov"] == 55.0


def test_pipeline_config_errors(tmp_path, capsys):
    assert main(["pipeline", "run", "--seed", "1", "--extent", "64x64",
                 "--out", str(tmp_path / "r"),
                 "--config", str(tmp_path / "no.json")]) == 3
    assert "STAGE=config" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["pipeline", "run", "--seed", "1", "--extent", "64x64",
                 "--out", str(tmp_path / "r"), "--config", str(bad)]) == 2
    assert "JSON object" in capsys.readouterr().err


def test_pipeline_extent_validation(tmp_path, capsys):
    assert main(["pipeline", "run", "--seed", "1", "--extent", "96x64",
                 "--out", str(tmp_path / "r")]) == 2
    assert "multiple of 64" in capsys.readouterr().err
