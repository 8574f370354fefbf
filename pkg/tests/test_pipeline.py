import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from objslam import pipeline, synth
from objslam.cli import main
from objslam.config import build_config
from objslam.errors import InvalidInput, SchemaError
from objslam.exploration import SimObject, SimScene, random_scene
from objslam.geometry import CubeModel, QuadricModel
from objslam.io import (
    MapObject,
    ObjectMapFile,
    dumps,
    map_from_dict,
    read_frames,
    read_map,
    write_frames,
    write_map,
)
from objslam.mapping import run_mapping
from objslam.metrics import eval_map, iou_2d, iou_3d, yaw_error_deg


@pytest.fixture(scope="module")
def orbit():
    return synth.table_orbit(random_scene(0, 3), 30)


# ---------------------------------------------------------------- io


def test_pipeline_namespace(tmp_path, orbit):
    write_frames(tmp_path / "seq.jsonl", orbit[:3])
    assert [f.frame_id for f in pipeline.ingest(tmp_path / "seq.jsonl")] == [f.frame_id for f in orbit[:3]]
    assert pipeline.run_mapping is run_mapping and pipeline.eval_map is eval_map


def test_empty_frame_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_frames(p) == []


def test_frame_round_trip(tmp_path, orbit):
    p = tmp_path / "f.jsonl"
    write_frames(p, orbit[:3])
    back = read_frames(p)
    assert len(back) == 3
    for a, b in zip(orbit, back):
        assert a.to_dict() == b.to_dict()
        assert np.array_equal(a.points, b.points) and np.array_equal(a.T_c.rotation, b.T_c.rotation)
    q = tmp_path / "g.jsonl"
    write_frames(q, back)
    assert p.read_bytes() == q.read_bytes()


def test_out_of_order_frames(tmp_path, orbit):
    p = tmp_path / "f.jsonl"
    write_frames(p, [orbit[1], orbit[0]])
    with pytest.raises(SchemaError) as e:
        read_frames(p)
    assert "frame_id" in str(e.value)


def test_malformed_line_reports_line_and_field(tmp_path, orbit):
    d = orbit[0].to_dict()
    del d["K"]
    p = tmp_path / "f.jsonl"
    p.write_text(json.dumps(orbit[0].to_dict()) + "\n" + json.dumps({**d, "frame_id": 5}) + "\n")
    with pytest.raises(SchemaError) as e:
        read_frames(p)
    assert "2" in str(e.value) and "K" in str(e.value)


def test_map_round_trip(tmp_path):
    mf = ObjectMapFile([MapObject(0, "book", CubeModel([1, 2, 3], 0.25, [0.1, 0.2, 0.3]), 40),
                        MapObject(3, "cup", QuadricModel([0, 0, 0.1], [0.04, 0.04, 0.05]), 12, ("under_observed",))],
                       {"seed": 1})
    p = tmp_path / "m.json"
    write_map(p, mf)
    back = read_map(p)
    q = tmp_path / "n.json"
    write_map(q, back)
    assert p.read_bytes() == q.read_bytes()
    assert [o.kind for o in back.objects] == ["cube", "quadric"]


def test_map_schema_errors():
    with pytest.raises(SchemaError):
        map_from_dict({"objects": [{"id": 1, "label": "a", "t": [0, 0, 0], "s": [1, 1, 1]}] * 2})
    with pytest.raises(SchemaError):
        map_from_dict({"objects": [{"id": 1, "label": "a", "t": [0, 0, 0], "s": [1, -1, 1]}]})
    with pytest.raises(SchemaError):
        map_from_dict({"objects": [{"id": 1, "label": "a", "t": [0, 0], "s": [1, 1, 1]}]})


def test_dumps_nine_digits():
    assert json.loads(dumps({"x": 1 / 3}))["x"] == 0.333333333


# ---------------------------------------------------------------- metrics


def _map(*models):
    return ObjectMapFile([MapObject(k, "book", m) for k, m in enumerate(models)])


def test_eval_identity():
    gt = _map(CubeModel([0, 0, 0.1], 0.3, [0.1, 0.2, 0.1]), QuadricModel([1, 1, 0.1], [0.05, 0.05, 0.1]))
    r = eval_map(gt, gt)
    assert r["mean_cde_cm"] == 0 and r["mean_yae_deg"] == 0
    assert r["mean_iou_2d"] == pytest.approx(1) and r["mean_iou_3d"] == pytest.approx(1)


def test_eval_shift_one_cm():
    gt = _map(CubeModel([0, 0, 0.1], 0.0, [0.1, 0.2, 0.1]))
    est = _map(CubeModel([0.01, 0, 0.1], 0.0, [0.1, 0.2, 0.1]))
    assert eval_map(est, gt)["objects"][0]["cde_cm"] == pytest.approx(1.0)
    assert eval_map(gt, est)["mean_cde_cm"] == pytest.approx(1.0)


def test_iou_half_offset():
    a = CubeModel([0, 0, 0], 0.0, [0.5, 0.5, 0.5])
    b = CubeModel([0.5, 0, 0], 0.0, [0.5, 0.5, 0.5])
    assert iou_3d(a, b) == pytest.approx(1 / 3)
    assert iou_2d(a, b) == pytest.approx(1 / 3)


def test_yaw_error_symmetry():
    assert yaw_error_deg(0.0, np.pi / 2) == pytest.approx(0.0)
    assert yaw_error_deg(np.radians(10), np.radians(-80)) == pytest.approx(0.0, abs=1e-9)
    assert yaw_error_deg(0.0, np.radians(50)) == pytest.approx(40.0)


def test_eval_misses_and_gate():
    gt = _map(CubeModel([0, 0, 0], 0.0, [0.1, 0.1, 0.1]), CubeModel([5, 0, 0], 0.0, [0.1, 0.1, 0.1]))
    est = _map(CubeModel([0.6, 0, 0], 0.0, [0.1, 0.1, 0.1]))
    r = eval_map(est, gt)
    assert r["n_matched"] == 0 and r["misses"] == [0, 1] and r["gt_mean_iou_3d"] == 0.0


# ---------------------------------------------------------------- mapping


def test_three_objects_three_map_objects(orbit):
    _, mf = run_mapping(orbit)
    assert sorted(o.label for o in mf.objects) == sorted(o.label for o in random_scene(0, 3).objects)
    r = eval_map(mf, random_scene(0, 3).gt_map())
    assert r["n_matched"] == 3 and r["mean_cde_cm"] < 3.0


def test_mapping_is_deterministic(orbit):
    a = dumps(run_mapping(orbit)[1].to_dict())
    b = dumps(run_mapping(orbit)[1].to_dict())
    assert a == b


def test_single_frame_object_is_flagged(orbit):
    fr = copy.deepcopy(orbit[0])
    keep = fr.detections[:1]
    box = keep[0].bbox
    inside = (fr.points[:, 0] >= box.xmin) & (fr.points[:, 0] <= box.xmax) & \
             (fr.points[:, 1] >= box.ymin) & (fr.points[:, 1] <= box.ymax)
    fr.detections = keep
    fr.points = fr.points[np.flatnonzero(inside)[:5]]
    _, mf = run_mapping([fr])
    assert len(mf.objects) == 1
    assert "under_observed" in mf.objects[0].flags and mf.objects[0].inlier_count == 5


# ---------------------------------------------------------------- config


def test_config_overrides_and_seed():
    cfg = build_config({"assoc": {"alpha": 0.01}, "seed": 3})
    assert cfg.assoc.alpha == 0.01 and cfg.topo.seed == 3 and cfg.explore.seed == 3
    assert build_config({}, seed=4).param.seed == 4
    assert cfg.hash() != build_config().hash()


@pytest.mark.parametrize("bad", [{"nope": {}}, {"assoc": {"nope": 1}}, {"assoc": {"alpha": "x"}},
                                 {"assoc": {"alpha": 2.0}}, {"topo": {"k_nn": 1.5}}])
def test_config_rejects(bad):
    with pytest.raises(InvalidInput):
        build_config(bad)


# ---------------------------------------------------------------- cli


def _scene_file(tmp_path):
    p = tmp_path / "scene.json"
    assert main(["gen-scene", "--kind", "table", "--objects", "2", "--seed", "1", "--out", str(p),
                 "--gt", str(tmp_path / "gt.json")]) == 0
    return p


def test_cli_map_and_eval(tmp_path, orbit, capsys):
    seq = tmp_path / "seq.jsonl"
    write_frames(seq, orbit)
    out = tmp_path / "map.json"
    assert main(["map", "--in", str(seq), "--out", str(out)]) == 0
    mf = read_map(out)
    assert len(mf.objects) == 3 and "config_hash" in mf.provenance
    gt = tmp_path / "gt.json"
    write_map(gt, random_scene(0, 3).gt_map())
    capsys.readouterr()
    assert main(["eval", "--map", str(out), "--gt", str(gt)]) == 0
    assert json.loads(capsys.readouterr().out)["n_matched"] == 3


def test_cli_associate(tmp_path, orbit, capsys):
    seq = tmp_path / "seq.jsonl"
    write_frames(seq, orbit[:5])
    assert main(["associate", "--in", str(seq)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and json.loads(lines[-1])["n_objects"] == 3


def test_cli_unknown_flag(capsys):
    assert main(["map", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "frames" in err


def test_cli_unknown_config_key(tmp_path, orbit):
    seq = tmp_path / "seq.jsonl"
    write_frames(seq, orbit[:2])
    cfg = tmp_path / "c.json"
    cfg.write_text('{"assoc": {"alpah": 0.1}}')
    assert main(["map", "--in", str(seq), "--config", str(cfg)]) == 1


def test_cli_schema_error_and_missing_file(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    assert main(["map", "--in", str(bad)]) == 1
    assert main(["map", "--in", str(tmp_path / "missing.jsonl")]) == 2


def test_cli_match_failure_is_runtime(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    write_map(a, _map(CubeModel([0, 0, 0], 0.0, [0.1, 0.1, 0.1])))
    write_map(b, ObjectMapFile([MapObject(0, "cup", QuadricModel([0, 0, 0], [0.1, 0.1, 0.1]))]))
    assert main(["match", "--prior", str(a), "--query", str(b)]) == 2


def test_cli_match(tmp_path, capsys):
    prior, moved, truth, _ = synth.reloc_trial(0, 6, 10)
    a, b = tmp_path / "a.json", tmp_path / "b.json"

    def to_map(nodes):
        return ObjectMapFile([MapObject(n.id, n.label, QuadricModel(n.t, n.s) if n.kind == "quadric"
                                        else CubeModel(n.t, n.yaw, n.s)) for n in nodes])
    write_map(a, to_map(prior))
    write_map(b, to_map(moved))
    capsys.readouterr()
    assert main(["match", "--prior", str(a), "--query", str(b)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["has_transform"] and res["rho"] == pytest.approx(1 / truth[0], rel=1e-6)


def test_cli_explore_deterministic(tmp_path):
    scene = _scene_file(tmp_path)
    outs = []
    for k in range(2):
        files = [tmp_path / f"{name}{k}" for name in ("map.json", "trace.csv", "report.json")]
        argv = ["explore", "--scene", str(scene), "--policy", "random", "--seed", "2",
                "--out", str(files[0]), "--trace", str(files[1]), "--report", str(files[2])]
        assert main(argv) == 0
        outs.append([f.read_bytes() for f in files])
    assert outs[0] == outs[1]
    assert outs[0][1].startswith(b"scene_seed,policy,step")


def test_cli_bad_scene(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(SimScene((0, 0, 1, 1), [SimObject("a", "box", [0, 0, 0], 0, [1, 1, 1])]).to_dict())
                 .replace('"box"', '"blob"'))
    assert main(["explore", "--scene", str(p)]) == 1


def test_cli_gen_sequence(tmp_path):
    out = tmp_path / "seq.jsonl"
    assert main(["gen-scene", "--kind", "sequence", "--objects", "3", "--frames", "5", "--out", str(out)]) == 0
    assert len(read_frames(out)) == 5
    assert main(["gen-scene", "--kind", "sequence", "--objects", "0", "--out", str(out)]) == 1


def test_cli_subprocess_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "objslam.cli", "gen-scene", "--bogus"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr
