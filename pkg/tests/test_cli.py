import json
import subprocess
import sys

import numpy as np
import pytest

from shapematch import shapes
from shapematch.cli import main
from shapematch.mesh import load_mesh, save_mesh
from shapematch.pointmap import PointMap, load_hard_map, save_hard_map

FAST = ["--k", "20", "--descriptor-dim", "32", "--match-iters", "10", "--interp-iters", "10", "--tta-iters", "30"]


def _perturbed_sphere(seed=0):
    m = shapes.icosphere(2)
    rng = np.random.default_rng(seed)
    return m.with_vertices(m.vertices * (1 + 0.02 * rng.standard_normal((m.n_vertices, 1))))


@pytest.fixture(scope="module")
def sphere_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("meshes") / "s.off"
    save_mesh(p, _perturbed_sphere())
    return p


def _rows(out):
    return {(s, k): v for s, k, v in (line.split("\t") for line in out.strip().splitlines())}


# ---------------------------------------------------------------------------
# configuration handling


def test_dump_config(capsys):
    assert main(["match", "--dump-config", "--k", "30"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["k"] == 30 and cfg["temperature"] == 0.07 and cfg["T"] == 6 and cfg["lambda_d"] == 0.1


def test_config_file_and_flag_precedence(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"k": 40, "T": 3}))
    assert main(["match", "--config", str(p), "--T", "4", "--dump-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert (cfg["k"], cfg["T"]) == (40, 4)


@pytest.mark.parametrize("content", ['{"k": 0}', '{"nope": 1}', '{"k": "ten"}', "not json"])
def test_bad_config_is_usage_error(tmp_path, sphere_file, capsys, content):
    p = tmp_path / "c.json"
    p.write_text(content)
    out = tmp_path / "out"
    code = main(["match", "--config", str(p), "--mesh-x", str(sphere_file), "--mesh-y", str(sphere_file),
                 "--outdir", str(out)])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err
    assert not out.exists()


def test_missing_paths_are_usage_errors(tmp_path):
    assert main(["match", "--outdir", str(tmp_path / "o")]) == 2
    assert main(["ssm", "--outdir", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_mesh_is_domain_error(tmp_path, sphere_file, capsys):
    missing = tmp_path / "absent.off"
    code = main(["match", "--mesh-x", str(missing), "--mesh-y", str(sphere_file), "--outdir", str(tmp_path / "o")])
    assert code == 1
    assert "absent.off" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "shapematch.cli", "eval", "--outdir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2


# ---------------------------------------------------------------------------
# stages


def test_identical_pipeline_small(tmp_path, sphere_file, capsys):
    out = tmp_path / "run"
    n = load_mesh(sphere_file).n_vertices
    gt = tmp_path / "gt.txt"
    save_hard_map(gt, PointMap.identity(n))
    code = main(["pipeline", "--mesh-x", str(sphere_file), "--mesh-y", str(sphere_file), "--gt", str(gt),
                 "--outdir", str(out), "--T", "2", *FAST])
    assert code == 0
    rows = _rows(capsys.readouterr().out)
    assert float(rows[("eval", "geo_err_x100")]) == 0.0 and float(rows[("eval", "auc")]) == 1.0
    np.testing.assert_array_equal(load_hard_map(out / "match" / "map_xy.txt").indices(), np.arange(n))
    for side in ("x", "y"):
        frames = sorted((out / "interpolate" / side).glob("frame_*.obj"))
        assert len(frames) == 3
        src = load_mesh(frames[0]).vertices
        for f in frames:
            np.testing.assert_allclose(load_mesh(f).vertices, src, atol=1e-8)
    manifest = json.loads((out / "interpolate" / "manifest.json").read_text())
    running = np.minimum.accumulate(manifest["loss_trace"])
    assert np.all(np.diff(running) <= 0)
    for name in ("match/loss.png", "interpolate/loss.png", "tta/objective.png", "eval/pck.png",
                 "eval/conformal.png", "eval/pck.csv", "eval/errors.csv", "tta/final_xy.txt", "match/fmap_xy.fmap"):
        assert (out / name).is_file(), name
    assert (out / "eval" / "pck.csv").read_text().splitlines()[0] == "threshold,fraction"


def test_interpolate_needs_match(tmp_path, sphere_file, capsys):
    code = main(["interpolate", "--mesh-x", str(sphere_file), "--mesh-y", str(sphere_file),
                 "--outdir", str(tmp_path / "o")])
    assert code == 1
    assert "map_xy.txt" in capsys.readouterr().err


def test_eval_with_pred_equal_gt(tmp_path, sphere_file, capsys):
    m = load_mesh(sphere_file)
    perm = np.random.default_rng(1).permutation(m.n_vertices)
    gt = tmp_path / "gt.txt"
    save_hard_map(gt, PointMap.from_indices(perm, m.n_vertices))
    code = main(["eval", "--mesh-x", str(sphere_file), "--mesh-y", str(sphere_file), "--gt", str(gt),
                 "--pred", str(gt), "--outdir", str(tmp_path / "o"), "--figures", "false"])
    assert code == 0
    rows = _rows(capsys.readouterr().out)
    assert float(rows[("eval", "geo_err_x100")]) == 0.0 and float(rows[("eval", "auc")]) == 1.0
    assert not (tmp_path / "o" / "eval" / "pck.png").exists()


def test_tta_on_translated_copies(tmp_path, sphere_file, capsys):
    m = load_mesh(sphere_file)
    moved = tmp_path / "moved.off"
    save_mesh(moved, m.with_vertices(m.vertices + [0.05, -0.03, 0.02]))
    out = tmp_path / "o"
    (out / "match").mkdir(parents=True)
    (out / "interpolate").mkdir()
    for name in ("map_xy.txt", "map_yx.txt"):
        save_hard_map(out / "match" / name, PointMap.identity(m.n_vertices))
    np.save(out / "interpolate" / "frames_x.npy", np.stack([m.vertices] * 3))
    np.save(out / "interpolate" / "frames_y.npy", np.stack([m.vertices + [0.05, -0.03, 0.02]] * 3))
    code = main(["tta", "--mesh-x", str(sphere_file), "--mesh-y", str(moved), "--normalize", "false",
                 "--outdir", str(out), "--figures", "false"])
    assert code == 0
    report = json.loads((out / "tta" / "report.json").read_text())
    for before, after in zip(report["chamfer_before"], report["chamfer_after"]):
        assert after <= 0.01 * before
    np.testing.assert_array_equal(load_hard_map(out / "tta" / "final_xy.txt").indices(), np.arange(m.n_vertices))


def test_ssm_rank_one(tmp_path, capsys):
    base = shapes.icosphere(1)
    v = base.vertices - base.vertices.mean(axis=0)
    # stretching along z is orthogonal to every rigid motion of a sphere
    u = np.zeros_like(v)
    u[:, 2] = v[:, 2]
    paths = []
    for i, t in enumerate((-0.2, 0.1, 0.3)):
        p = tmp_path / f"s{i}.obj"
        save_mesh(p, base.with_vertices(v + t * u))
        paths.append(str(p))
    out = tmp_path / "o"
    code = main(["ssm", "--shapes", *paths, "--outdir", str(out), "--ssm-trials", "20"])
    assert code == 0
    rows = _rows(capsys.readouterr().out)
    assert int(rows[("ssm", "modes")]) == 1
    assert float(rows[("ssm", "generality")]) <= 1e-6
    for name in ("model.ssm", "mean.obj", "mode1_plus2.obj", "mode1_minus2.obj", "generality.csv", "report.json"):
        assert (out / "ssm" / name).is_file(), name
