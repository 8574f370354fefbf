"""Command line entry point: objslam <subcommand> [options]."""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
from pathlib import Path

from . import synth
from .association import ObjectMap, associate_frame
from .config import Config, build_config
from .errors import InvalidInput, ObjSlamError, SchemaError
from .exploration import POLICIES, TRACE_FIELDS, SimScene, explore, random_scene
from .io import canonical, dumps, iter_frames, read_json, read_map, write_frames, write_json, write_map
from .mapping import local_objects, run_mapping
from .metrics import eval_map
from .topomap import TopoNode, build_topo_map, relocalize

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

SCHEMA_HELP = """\
file formats:
  frames  JSONL, one object per line:
          {"frame_id": int, "timestamp": s, "T_c": 4x4 world->camera,
           "K": {"fx","fy","cx","cy","width","height"},
           "detections": [{"label", "bbox": [x0,y0,x1,y1], "confidence"}],
           "points": [[u, v, x, y, z], ...], "segments": [[u0, v0, u1, v1], ...]}
  map     JSON {"schema": 1, "objects": [{"id", "label", "kind": cube|quadric,
          "t": [x,y,z], "yaw", "s": [sx,sy,sz], "inlier_count", "flags"}], "provenance"}
  scene   JSON {"table": [x0,y0,x1,y1], "seed", "objects": [{"label",
          "shape": box|cylinder, "t", "yaw", "s", "texture"}], "noise": {...}}
  config  JSON {"seed": n, "assoc": {...}, "param": {...}, "mapping": {...},
          "topo": {...}, "explore": {...}}; unknown keys are rejected
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}\n\n{SCHEMA_HELP}")


def _load_config(args) -> Config:
    overrides = {}
    if args.config:
        overrides = read_json(args.config)
        if not isinstance(overrides, dict):
            raise InvalidInput("config must be a JSON object")
    return build_config(overrides, args.seed)


def _provenance(cfg: Config, **extra) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, **extra}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- subcommands


def cmd_associate(args, cfg: Config) -> int:
    obj_map = ObjectMap(cfg.seed)
    lines = []
    for fr in iter_frames(args.input):
        locals_ = local_objects(fr, cfg.mapping.depth_gate)
        rep = associate_frame(obj_map, locals_, fr.K, fr.T_c, cfg.assoc)
        rep.frame_id = fr.frame_id
        d = rep.to_dict()
        d["n_objects"] = len(obj_map)
        lines.append(json.dumps(canonical(d), sort_keys=True, separators=(",", ":")))
    summary = {"n_frames": len(lines), "n_objects": len(obj_map), "strategy": cfg.assoc.strategy,
               "provenance": _provenance(cfg)}
    _emit("".join(l + "\n" for l in lines), args.out)
    sys.stderr.write(dumps(summary))
    return EXIT_OK


def cmd_map(args, cfg: Config) -> int:
    _, mf = run_mapping(iter_frames(args.input), cfg.assoc, cfg.param, cfg.mapping, cfg.seed,
                        _provenance(cfg, source=Path(args.input).name))
    if args.out:
        write_map(args.out, mf)
    else:
        sys.stdout.write(dumps(mf.to_dict()))
    return EXIT_OK


def cmd_match(args, cfg: Config) -> int:
    prior = read_map(args.prior)
    query = read_map(args.query)
    graph = build_topo_map([TopoNode.from_object(o) for o in prior.objects], cfg.topo.k_nn, cfg.topo.d_max)
    res = relocalize(graph, [TopoNode.from_object(o) for o in query.objects], cfg.topo)
    out = res.to_dict()
    out["provenance"] = _provenance(cfg)
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_explore(args, cfg: Config) -> int:
    scene = SimScene.from_dict(read_json(args.scene))
    res = explore(scene, args.policy, cfg.explore, cfg.assoc, cfg.param)
    res.map_file.provenance.update(_provenance(cfg))
    if args.out:
        write_map(args.out, res.map_file)
    if args.trace:
        buf = _io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in res.trace:
            w.writerow({k: ("" if row[k] is None else canonical(row[k])) for k in TRACE_FIELDS})
        Path(args.trace).write_text(buf.getvalue(), encoding="utf-8")
    summary = {"policy": res.policy, "steps": res.steps, "metrics": res.final, "provenance": _provenance(cfg)}
    _emit(dumps(summary), args.report)
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    _emit(dumps(eval_map(read_map(args.map), read_map(args.gt))), args.out)
    return EXIT_OK


def cmd_gen_scene(args, cfg: Config) -> int:
    seed = cfg.seed
    if args.kind == "table":
        scene = random_scene(seed, args.objects)
        write_json(args.out, scene.to_dict())
    else:
        n = args.objects if args.objects is not None else 10
        if not 1 <= n <= 200:
            raise InvalidInput("--objects must lie in [1, 200]")
        frames, scene = synth.association_sequence(seed, n, args.frames)
        write_frames(args.out, frames)
        if args.scene_out:
            write_json(args.scene_out, scene.to_dict())
    if args.gt:
        write_map(args.gt, scene.gt_map())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file overriding defaults")
    common.add_argument("--seed", type=int, default=None, help="seed for every stochastic component")

    p = _Parser(prog="objslam", description="Object-level SLAM backend tools.", epilog=SCHEMA_HELP,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("associate", parents=[common], help="per-frame association decisions (JSONL)")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out")

    m = sub.add_parser("map", parents=[common], help="build an object map from a frame stream")
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--out")

    r = sub.add_parser("match", parents=[common], help="relocalize a query map against a prior map")
    r.add_argument("--prior", required=True)
    r.add_argument("--query", required=True)
    r.add_argument("--out")

    e = sub.add_parser("explore", parents=[common], help="simulated active exploration of a table scene")
    e.add_argument("--scene", required=True)
    e.add_argument("--policy", choices=POLICIES, default="nbv")
    e.add_argument("--out", help="final object map")
    e.add_argument("--trace", help="per-step metrics CSV")
    e.add_argument("--report", help="summary JSON (stdout when omitted)")

    v = sub.add_parser("eval", parents=[common], help="compare a map with ground truth")
    v.add_argument("--map", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--out")

    g = sub.add_parser("gen-scene", parents=[common], help="synthetic table scene or room frame sequence")
    g.add_argument("--kind", choices=("table", "sequence"), default="table")
    g.add_argument("--objects", type=int, default=None)
    g.add_argument("--frames", type=int, default=300)
    g.add_argument("--out", required=True, help="scene JSON (table) or frames JSONL (sequence)")
    g.add_argument("--gt", help="also write the ground-truth map")
    g.add_argument("--scene-out", dest="scene_out", help="sequence only: also write the scene JSON")
    return p


COMMANDS = {
    "associate": cmd_associate,
    "map": cmd_map,
    "match": cmd_match,
    "explore": cmd_explore,
    "eval": cmd_eval,
    "gen-scene": cmd_gen_scene,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        sys.stderr.write(str(e))
        return EXIT_INVALID
    except (InvalidInput, SchemaError) as e:
        sys.stderr.write(f"objslam: invalid input: {e}\n")
        return EXIT_INVALID
    except (ObjSlamError, OSError) as e:
        sys.stderr.write(f"objslam: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
