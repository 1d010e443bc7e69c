"""Command-line pipeline driver.

Exit codes: 0 success, 2 bad usage or configuration, 3 stage failure at
runtime (missing inputs, no valid camera pose, parse errors in data files).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import camsample, ingest, latentgrid, metrics, render, satmap, voxelworld
from .latentgrid import Rect


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _parse_rect(text: str) -> Rect:
    try:
        x, y, w, h = (int(p) for p in text.split(","))
        return Rect(x, y, w, h)
    except Exception:
        raise argparse.ArgumentTypeError(f"expected X,Y,W,H integers, got {text!r}")


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
        if w < 1 or h < 1:
            raise ValueError
        return w, h
    except Exception:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")


def _parse_pose(text: str) -> camsample.CameraPose:
    try:
        x, y, z, yaw, pitch, roll = (float(p) for p in text.split(","))
        return camsample.CameraPose(np.array([x, y, z]), yaw, pitch, roll)
    except Exception:
        raise argparse.ArgumentTypeError(f"expected x,y,z,yaw,pitch,roll, got {text!r}")


def _load_field(args, stage: str) -> latentgrid.LatentField:
    if getattr(args, "field", None):
        try:
            return latentgrid.load_field(args.field)
        except FileNotFoundError:
            raise StageError(stage, f"field file not found: {args.field}")
        except latentgrid.FieldFormatError as e:
            raise StageError(stage, f"bad field file: {e}")
    if getattr(args, "seed", None) is None:
        raise UsageError("either --seed or --field is required")
    return latentgrid.sample_field(args.seed, cell_stride=args.stride)


class UsageError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- subcommands -------------------------------------------------------------

def cmd_map_synth(args) -> int:
    lf = _load_field(args, "map")
    tile = latentgrid.synthesize_region(lf, args.rect)
    if args.clean:
        tile = satmap.clean_tile(tile)
    satmap.save_tile(tile, args.out, satmap.default_palette())
    if args.field_out:
        latentgrid.save_field(lf, args.field_out)
    print(f"synthesized {args.rect.w}x{args.rect.h} tile -> {args.out}")
    return 0


def cmd_map_resample(args) -> int:
    lf = _load_field(args, "map")
    new_field, cells = latentgrid.resample_region(lf, args.rect, args.resample_seed)
    latentgrid.save_field(new_field, args.field_out)
    foot = latentgrid.influence_rect(cells, latentgrid.DEFAULT_RADIUS_PX, lf.cell_stride)
    if args.tile_out:
        tile = latentgrid.synthesize_region(new_field, args.tile_rect or foot)
        satmap.save_tile(tile, args.tile_out, satmap.default_palette())
    print(f"resampled {len(cells)} cells; influence rect "
          f"{foot.x},{foot.y},{foot.w},{foot.h} -> {args.field_out}")
    return 0


def cmd_ingest(args) -> int:
    try:
        mesh = ingest.load_tmesh(args.mesh)
    except FileNotFoundError:
        raise StageError("ingest", f"mesh file not found: {args.mesh}")
    except ValueError as e:
        raise StageError("ingest", f"bad mesh file: {e}")
    points = ingest.sample_surface(mesh, args.voxel_size)
    block = ingest.voxelize(points, (args.block[0] * 64, args.block[1] * 64, 0),
                            args.voxel_size)
    voxelworld.save_block(block, args.out)
    if args.tile_out:
        satmap.save_tile(ingest.topdown_scan(block), args.tile_out, satmap.default_palette())
    print(f"sampled {len(points)} points -> {block.occupied_count()} voxels -> {args.out}")
    return 0


def _build_world(lf: latentgrid.LatentField, rect: Rect, completion: str):
    tile = latentgrid.synthesize_region(lf, rect)
    tile = satmap.clean_tile(tile)
    complete = (voxelworld.complete_pillar if completion == "pillar"
                else voxelworld.complete_watertight)
    blocks = []
    for sub in latentgrid.patch_cover(rect, voxelworld.BLOCK_EDGE):
        blk = voxelworld.lift_tile(tile.crop(sub.x, sub.y, sub.w, sub.h),
                                   sub.x // 64, sub.y // 64)
        blocks.append(complete(blk))
    return tile, blocks


def _require_aligned(rect: Rect) -> None:
    if rect.x % 64 or rect.y % 64 or rect.w % 64 or rect.h % 64:
        raise UsageError("world rect must be aligned to the 64 px block grid")


def cmd_world_build(args) -> int:
    _require_aligned(args.rect)
    lf = _load_field(args, "world")
    try:
        _, blocks = _build_world(lf, args.rect, args.completion)
        voxelworld.save_world_blocks(blocks, args.completion, args.out)
    except ValueError as e:
        raise StageError("world", str(e))
    nvox = sum(b.occupied_count() for b in blocks)
    print(f"built {len(blocks)} blocks ({nvox} voxels, {args.completion}) -> {args.out}")
    return 0


def cmd_world_export_points(args) -> int:
    world = _load_world(args.world, "export-points")
    n = voxelworld.export_points_xyz(world, args.out)
    print(f"exported {n} voxel centers -> {args.out}")
    return 0


def _load_world(path, stage: str) -> voxelworld.VoxelWorld:
    try:
        return voxelworld.load_world(path)
    except FileNotFoundError:
        raise StageError(stage, f"world file not found: {path}")
    except voxelworld.BlockParseError as e:
        raise StageError(stage, f"bad world file: {e}")


def _world_mask(path, stage: str, min_component: int):
    try:
        blocks, _ = voxelworld.load_world_blocks(path)
    except FileNotFoundError:
        raise StageError(stage, f"world file not found: {path}")
    except voxelworld.BlockParseError as e:
        raise StageError(stage, f"bad world file: {e}")
    world = voxelworld.assemble_world(blocks)
    tiles = [ingest.topdown_scan(b) for b in blocks]
    x0 = min(t.x for t in tiles)
    y0 = min(t.y for t in tiles)
    x1 = max(t.x + t.width for t in tiles)
    y1 = max(t.y + t.height for t in tiles)
    mask = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for t in tiles:
        m = camsample.label_walkable(t)
        mask[t.y - y0:t.y - y0 + t.height, t.x - x0:t.x - x0 + t.width] = m.mask
    raw = camsample.WalkableMask(x0, y0, mask, ["label_walkable:stitched"])
    return world, camsample.refine_mask(raw, min_component)


def cmd_camera_sample(args) -> int:
    world, mask = _world_mask(args.world, "camera", args.min_component)
    try:
        poses = camsample.sample_cameras(mask, world, args.n, args.seed)
    except camsample.NoValidPoseError as e:
        raise StageError("camera", str(e))
    with open(args.out, "w") as f:
        for p in poses:
            f.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")
    print(f"sampled {len(poses)} poses -> {args.out}")
    return 0


def _load_poses(path) -> list[camsample.CameraPose]:
    poses = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                poses.append(camsample.CameraPose.from_dict(json.loads(line)))
    return poses


def _save_frame(out: render.RenderOutput, prefix: Path, palette) -> dict[str, Path]:
    from PIL import Image

    lut = render.encode_palette_colors(palette)
    shaded8 = np.clip(np.floor(out.shaded.astype(np.float64) * 255.0 + 0.5),
                      0, 255).astype(np.uint8)
    sem8 = np.clip(np.floor(lut[out.semantic] * 255.0 + 0.5), 0, 255).astype(np.uint8)
    paths = {
        "shaded": prefix.with_name(prefix.name + "_shaded.png"),
        "semantic": prefix.with_name(prefix.name + "_semantic.png"),
        "depth": prefix.with_name(prefix.name + "_depth.npy"),
    }
    Image.fromarray(shaded8, "RGB").save(paths["shaded"])
    Image.fromarray(sem8, "RGB").save(paths["semantic"])
    np.save(paths["depth"], out.depth)
    return paths


def cmd_render(args) -> int:
    world = _load_world(args.world, "render")
    palette = satmap.default_palette()
    if args.pose is not None:
        poses = [args.pose]
    elif args.poses:
        try:
            poses = _load_poses(args.poses)
        except FileNotFoundError:
            raise StageError("render", f"poses file not found: {args.poses}")
        except (json.JSONDecodeError, KeyError) as e:
            raise StageError("render", f"bad poses file: {e}")
    else:
        raise UsageError("either --pose or --poses is required")
    if not poses:
        raise StageError("render", "no poses to render")
    w, h = args.size
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for k, pose in enumerate(poses):
        out = render.render_view(world, pose, w, h, args.fov, palette)
        name = prefix if len(poses) == 1 else prefix.with_name(f"{prefix.name}_{k:03d}")
        _save_frame(out, name, palette)
    print(f"rendered {len(poses)} frame(s) at {w}x{h} -> {prefix}*")
    return 0


def cmd_stats(args) -> int:
    world = _load_world(args.world, "stats")
    st = metrics.world_stats(world)
    text = st.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.compare:
        other = metrics.world_stats(_load_world(args.compare, "stats"))
        print(f"distance: {metrics.stats_distance(st, other)!r}")
    return 0


def cmd_pipeline_run(args) -> int:
    w, h = args.extent
    if w % 64 or h % 64:
        raise UsageError("extent must be a multiple of 64 in both axes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    palette = satmap.default_palette()
    stages = []

    def record(name: str, artifacts: dict[str, Path]):
        stages.append({"name": name,
                       "artifacts": {p.name: _sha256(p) for p in artifacts.values()}})

    # map stage
    lf = latentgrid.sample_field(args.seed)
    rect = Rect(0, 0, w, h)
    raw = latentgrid.synthesize_region(lf, rect)
    clean = satmap.clean_tile(raw)
    paths = {"raw": out / "map_raw.icdn", "clean": out / "map_clean.icdn",
             "palette": out / "palette.txt", "field": out / "field.iclf"}
    satmap.save_tile(raw, paths["raw"], palette)
    satmap.save_tile(clean, paths["clean"], palette)
    satmap.save_palette(palette, paths["palette"])
    latentgrid.save_field(lf, paths["field"])
    record("map", paths)

    # world stage
    try:
        complete = (voxelworld.complete_pillar if args.completion == "pillar"
                    else voxelworld.complete_watertight)
        blocks = []
        for sub in latentgrid.patch_cover(rect, voxelworld.BLOCK_EDGE):
            blk = voxelworld.lift_tile(clean.crop(sub.x, sub.y, sub.w, sub.h),
                                       sub.x // 64, sub.y // 64)
            blocks.append(complete(blk))
        world_path = out / "world.iwrl"
        voxelworld.save_world_blocks(blocks, args.completion, world_path)
        world = voxelworld.assemble_world(blocks)
    except ValueError as e:
        raise StageError("world", str(e))
    st = metrics.world_stats(world)
    stats_path = out / "stats.json"
    stats_path.write_text(st.to_json())
    record("world", {"world": world_path, "stats": stats_path})

    # camera stage
    mask = camsample.refine_mask(camsample.label_walkable(clean), args.min_component)
    from PIL import Image
    mask_path = out / "mask.png"
    Image.fromarray(mask.mask.astype(np.uint8) * 255, "L").save(mask_path)
    try:
        poses = camsample.sample_cameras(mask, world, args.cameras, args.seed)
    except camsample.NoValidPoseError as e:
        raise StageError("camera", str(e))
    poses_path = out / "poses.jsonl"
    with open(poses_path, "w") as f:
        for p in poses:
            f.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")
    record("camera", {"mask": mask_path, "poses": poses_path})

    # render stage
    fw, fh = args.frame_size
    frame_paths = {}
    for k, pose in enumerate(poses):
        ro = render.render_view(world, pose, fw, fh, args.fov, palette)
        for key, p in _save_frame(ro, out / f"frame_{k:03d}", palette).items():
            frame_paths[f"{k}:{key}"] = p
    record("render", frame_paths)

    manifest = {
        "tool": "infinicity",
        "version": __version__,
        "seed": args.seed,
        "extent": [w, h],
        "completion": args.completion,
        "parameters": {
            "cameras": args.cameras,
            "frame_size": [fw, fh],
            "fov": args.fov,
            "min_component": args.min_component,
        },
        "stages": stages,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"pipeline complete: {len(poses)} frames, manifest -> {out / 'manifest.json'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infinicity",
                                 description="deterministic map/world/render pipeline")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_field_args(p):
        p.add_argument("--seed", type=int, default=None, help="field seed")
        p.add_argument("--field", default=None, help="field snapshot (.iclf) instead of --seed")
        p.add_argument("--stride", type=int, default=latentgrid.DEFAULT_CELL_STRIDE,
                       help="latent cell stride in px (with --seed)")

    p_map = sub.add_parser("map", help="satellite-map synthesis").add_subparsers(
        dest="subcommand", required=True)

    p = p_map.add_parser("synth", help="synthesize a map rect to .icdn")
    add_field_args(p)
    p.add_argument("--rect", type=_parse_rect, required=True, metavar="X,Y,W,H")
    p.add_argument("--out", required=True)
    p.add_argument("--clean", action="store_true", help="apply the height cleanup schedule")
    p.add_argument("--field-out", default=None, help="also save the field snapshot")
    p.set_defaults(func=cmd_map_synth)

    p = p_map.add_parser("resample", help="redraw the latents under a rect")
    add_field_args(p)
    p.add_argument("--rect", type=_parse_rect, required=True, metavar="X,Y,W,H")
    p.add_argument("--resample-seed", type=int, required=True)
    p.add_argument("--field-out", required=True)
    p.add_argument("--tile-out", default=None, help="synthesize the influenced area to .icdn")
    p.add_argument("--tile-rect", type=_parse_rect, default=None)
    p.set_defaults(func=cmd_map_resample)

    p = sub.add_parser("ingest", help="mesh -> sampled points -> voxel block (.ioct)")
    p.add_argument("--mesh", required=True, help="labeled mesh (.tmesh)")
    p.add_argument("--out", required=True)
    p.add_argument("--voxel-size", type=float, default=1.0)
    p.add_argument("--block", type=int, nargs=2, default=(0, 0), metavar=("BX", "BY"))
    p.add_argument("--tile-out", default=None, help="also write the top-down rescan (.icdn)")
    p.set_defaults(func=cmd_ingest)

    p_world = sub.add_parser("world", help="voxel world operations").add_subparsers(
        dest="subcommand", required=True)

    p = p_world.add_parser("build", help="synthesize, lift and complete a world (.iwrl)")
    add_field_args(p)
    p.add_argument("--rect", type=_parse_rect, required=True, metavar="X,Y,W,H")
    p.add_argument("--completion", choices=sorted(voxelworld.COMPLETION_CODES),
                   default="watertight")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_world_build)

    p = p_world.add_parser("export-points", help="occupied voxel centers to xyz text")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_world_export_points)

    p = sub.add_parser("camera", help="camera pose sampling").add_subparsers(
        dest="subcommand", required=True)
    p2 = p.add_parser("sample", help="sample collision-free poses on walkable ground")
    p2.add_argument("--world", required=True)
    p2.add_argument("--n", type=int, default=1)
    p2.add_argument("--seed", type=int, default=0)
    p2.add_argument("--min-component", type=int, default=camsample.MIN_COMPONENT_PX)
    p2.add_argument("--out", required=True)
    p2.set_defaults(func=cmd_camera_sample)

    p = sub.add_parser("render", help="ray-cast frames from poses")
    p.add_argument("--world", required=True)
    p.add_argument("--pose", type=_parse_pose, default=None, metavar="x,y,z,yaw,pitch,roll")
    p.add_argument("--poses", default=None, help="poses.jsonl from camera sample")
    p.add_argument("--size", type=_parse_size, default=(256, 256), metavar="WxH")
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="world occupancy statistics")
    p.add_argument("--world", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--compare", default=None, help="second world; prints the stats distance")
    p.set_defaults(func=cmd_stats)

    p_pipe = sub.add_parser("pipeline", help="end-to-end run").add_subparsers(
        dest="subcommand", required=True)
    p = p_pipe.add_parser("run", help="map -> world -> cameras -> frames + manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--extent", type=_parse_size, required=True, metavar="WxH")
    p.add_argument("--out", required=True)
    p.add_argument("--completion", choices=sorted(voxelworld.COMPLETION_CODES),
                   default="watertight")
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--frame-size", type=_parse_size, default=(256, 256), metavar="WxH")
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--min-component", type=int, default=camsample.MIN_COMPONENT_PX)
    p.add_argument("--config", default=None, help="JSON file mirroring the flags")
    p.set_defaults(func=cmd_pipeline_run)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8151)
    p.set_defaults(func=cmd_serve)

    return ap


def _apply_config(argv: list[str]) -> list[str]:
    """Merge --config JSON into pipeline-run argv (explicit flags win)."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    try:
        cfg = json.loads(Path(argv[at + 1]).read_text())
    except FileNotFoundError:
        raise StageError("config", f"config file not found: {argv[at + 1]}")
    except (json.JSONDecodeError, IndexError) as e:
        raise UsageError(f"bad config file: {e}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    merged = list(argv)
    for key, val in sorted(cfg.items()):
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue  # explicit flag wins
        merged += [flag, str(val)]
    return merged


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(argv)
        ap = build_parser()
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"STAGE={e.stage} ERROR={e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
