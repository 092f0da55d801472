import filecmp
import json

import numpy as np
import pytest

from springsplat.cli import main
from springsplat.io import load_trajectory, save_ply
from springsplat.scenes import blob_cloud


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_ply(blob_cloud(1500, seed=0), d / "cloud.ply")
    assert main(["sample-anchors", "--cloud", str(d / "cloud.ply"), "--n-anchors", "48",
                 "--n-k", "8", "--out", str(d / "anchors")]) == 0
    return d


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / s, b / s) for s in cmp.common_dirs)


def test_unknown_flag_exit_1(workdir, capsys):
    assert main(["simulate", "--bogus"]) == 1
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_data_error_exit_2(workdir, capsys):
    assert main(["simulate", "--anchors", str(workdir / "missing"), "--out", str(workdir / "x")]) == 2
    bad = workdir / "bad.ply"
    bad.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n")
    assert main(["sample-anchors", "--cloud", str(bad), "--out", str(workdir / "y")]) == 2
    assert "z" in capsys.readouterr().err


def test_render_without_camera_is_usage_error(workdir):
    out = workdir / "norender"
    assert main(["simulate", "--anchors", str(workdir / "anchors"), "--render", "--out", str(out)]) == 1
    assert not out.exists()


def test_simulate_twice_byte_identical(workdir):
    for name in ("s1", "s2"):
        assert main(["simulate", "--anchors", str(workdir / "anchors"), "--n-frames", "5",
                     "--v0", "0.3,0,-1", "--out", str(workdir / name)]) == 0
    assert same_tree(workdir / "s1", workdir / "s2")


def test_identify_then_simulate_lowers_cd(workdir):
    d, anchors = workdir, str(workdir / "anchors")
    assert main(["simulate", "--anchors", anchors, "--stiffness", "3000", "--v0", "0.5,0,-1",
                 "--n-frames", "6", "--n-t", "8", "--out", str(d / "obs")]) == 0
    cds = []
    for iters in ("1", "40"):
        ck, pred, rep = d / f"ck{iters}.json", d / f"pred{iters}", d / f"rep{iters}.json"
        assert main(["identify", "--anchors", anchors, "--observed", str(d / "obs"), "--iterations", iters,
                     "--n-t-init", "8", "--n-t-max", "8", "--out", str(ck)]) == 0
        assert main(["simulate", "--anchors", anchors, "--checkpoint", str(ck), "--n-frames", "6",
                     "--n-t", "8", "--out", str(pred)]) == 0
        assert main(["eval", "--pred", str(pred), "--obs", str(d / "obs"), "--out", str(rep)]) == 0
        cds.append(json.loads(rep.read_text())["cd"])
    assert cds[1] < cds[0]


def test_edit_gravity_doubles_apex(workdir):
    d, anchors = workdir, str(workdir / "anchors")
    apex = []
    for g in ("0,0,-9.8", "0,0,-4.9"):
        sc, traj = d / f"sc{g}.json", d / f"toss{g}"
        assert main(["edit-scenario", "--gravity", g, "--no-ground", "--v0", "0,0,2", "--n-frames", "30",
                     "--out", str(sc)]) == 0
        assert main(["simulate", "--anchors", anchors, "--scenario", str(sc), "--out", str(traj)]) == 0
        t = load_trajectory(traj)
        z = t.positions()[:, :, 2].mean(axis=1)
        # ballistic centroid is exactly quadratic in time; read the apex off the fit
        a, b, c = np.polyfit(t.times, z, 2)
        apex.append(-b * b / (4 * a))
    assert apex[1] / apex[0] == pytest.approx(2.0, rel=1e-2)


def test_edit_scenario_from_checkpoint_and_overrides(workdir):
    d = workdir
    assert main(["edit-scenario", "--ground-height", "0.2", "--sticky", "--stiffness-scale", "2",
                 "--out", str(d / "e.json")]) == 0
    sc = json.loads((d / "e.json").read_text())
    assert sc["ground"]["height"] == 0.2 and sc["ground"]["sticky"] is True
    assert sc["stiffness_scale"] == 2.0 and sc["format_version"] == 1
    assert main(["edit-scenario", "--stiffness-scale", "-1", "--out", str(d / "f.json")]) == 2


def test_eval_images(workdir, tmp_path):
    from springsplat.io import save_png
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    save_png(img, a / "0.png")
    save_png(img, b / "0.png")
    assert main(["eval", "--images", str(a), "--references", str(b), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["psnr"] == 100.0 and rep["ssim"] == pytest.approx(1.0)
    assert main(["eval", "--images", str(a)]) == 1
