import json

import numpy as np
import pytest

from springsplat.dynamics import Boundary, PhysicalParams
from springsplat.geometry import AnchorSystem, PointCloud, build_topology
from springsplat.io import (
    FormatError,
    ParamCheckpoint,
    ScenarioConfig,
    float32_cloud,
    load_checkpoint,
    load_ply,
    load_png,
    load_scenario,
    load_topology,
    load_trajectory,
    save_checkpoint,
    save_ply,
    save_png,
    save_scenario,
    save_topology,
    save_trajectory,
)
from springsplat.trajectory import Trajectory


def rand_cloud(n=1000, seed=0, attrs=True):
    rng = np.random.default_rng(seed)
    if not attrs:
        return PointCloud(rng.normal(size=(n, 3)))
    return PointCloud(rng.normal(size=(n, 3)), colors=rng.uniform(size=(n, 3)), opacities=rng.uniform(size=n))


def write_ascii_ply(path, pts, props=("x", "y", "z")):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}"]
    lines += [f"property float {p}" for p in props]
    lines.append("end_header")
    lines += [" ".join(repr(float(v)) for v in row) for row in pts]
    path.write_text("\n".join(lines) + "\n")


def test_ply_roundtrip_float32_exact(tmp_path):
    cloud = rand_cloud()
    save_ply(cloud, tmp_path / "a.ply")
    back = load_ply(tmp_path / "a.ply")
    expected = float32_cloud(cloud)
    np.testing.assert_array_equal(back.positions, expected.positions)
    np.testing.assert_array_equal(back.colors, expected.colors)
    np.testing.assert_array_equal(back.opacities, expected.opacities)
    assert (tmp_path / "a.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")


def test_ply_positions_only(tmp_path):
    cloud = rand_cloud(attrs=False)
    save_ply(cloud, tmp_path / "a.ply")
    back = load_ply(tmp_path / "a.ply")
    assert back.colors is None and back.opacities is None
    np.testing.assert_array_equal(back.positions, cloud.positions.astype(np.float32))


def test_ascii_ply_matches_binary(tmp_path):
    pts = np.random.default_rng(1).normal(size=(50, 3)).astype(np.float32).astype(np.float64)
    write_ascii_ply(tmp_path / "a.ply", pts)
    save_ply(PointCloud(pts), tmp_path / "b.ply")
    np.testing.assert_array_equal(load_ply(tmp_path / "a.ply").positions, load_ply(tmp_path / "b.ply").positions)


def test_ply_missing_z(tmp_path):
    write_ascii_ply(tmp_path / "a.ply", np.zeros((2, 2)), props=("x", "y"))
    with pytest.raises(FormatError, match="'z'|z"):
        load_ply(tmp_path / "a.ply")


def test_ply_malformed(tmp_path):
    (tmp_path / "a.ply").write_bytes(b"not a ply\n")
    with pytest.raises(FormatError):
        load_ply(tmp_path / "a.ply")
    (tmp_path / "b.ply").write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n")
    with pytest.raises(FormatError):
        load_ply(tmp_path / "b.ply")


def test_ply_nonfinite(tmp_path):
    write_ascii_ply(tmp_path / "a.ply", [[0, 0, float("nan")]])
    with pytest.raises(ValueError):
        load_ply(tmp_path / "a.ply")


def test_trajectory_roundtrip(tmp_path):
    pos = np.random.default_rng(2).normal(size=(3, 20, 3)).astype(np.float32).astype(np.float64)
    traj = Trajectory.from_positions(pos, 1 / 30)
    save_trajectory(traj, tmp_path / "t")
    back = load_trajectory(tmp_path / "t")
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.positions(), pos)
    manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert manifest["units"] == "m" and manifest["format_version"] == 1 and manifest["n_frames"] == 3


def test_trajectory_times_from_manifest(tmp_path):
    traj = Trajectory.from_positions(np.zeros((20, 1, 3)), 1 / 30)
    save_trajectory(traj, tmp_path / "t")
    np.testing.assert_allclose(load_trajectory(tmp_path / "t").times, np.arange(20) / 30, rtol=0, atol=1e-15)


def test_trajectory_missing_frame(tmp_path):
    save_trajectory(Trajectory.from_positions(np.zeros((3, 2, 3)), 0.1), tmp_path / "t")
    (tmp_path / "t" / "frames" / "frame_0001.ply").unlink()
    with pytest.raises(FormatError, match="frame_0001"):
        load_trajectory(tmp_path / "t")


def test_trajectory_extra_frame(tmp_path):
    save_trajectory(Trajectory.from_positions(np.zeros((3, 2, 3)), 0.1), tmp_path / "t")
    save_ply(PointCloud(np.zeros((2, 3))), tmp_path / "t" / "frames" / "frame_0003.ply")
    with pytest.raises(FormatError):
        load_trajectory(tmp_path / "t")


def test_topology_roundtrip_and_tamper(tmp_path):
    topo = build_topology(AnchorSystem(np.random.default_rng(3).normal(size=(20, 3))), 4)
    save_topology(topo, tmp_path / "topo.json")
    back = load_topology(tmp_path / "topo.json")
    assert back.fingerprint() == topo.fingerprint()
    d = json.loads((tmp_path / "topo.json").read_text())
    d["rest_lengths"][0][0] += 1e-9
    (tmp_path / "topo.json").write_text(json.dumps(d))
    with pytest.raises(FormatError):
        load_topology(tmp_path / "topo.json")


def test_checkpoint_roundtrip_and_fingerprint(tmp_path):
    rng = np.random.default_rng(4)
    topo = build_topology(AnchorSystem(rng.normal(size=(20, 3))), 4)
    other = build_topology(AnchorSystem(rng.normal(size=(20, 3))), 4)
    params = PhysicalParams(rng.normal(6, 1, 20), v0=(0.1, 0.2, 0.3), kappa=-0.4,
                            boundary=Boundary(0.05, 1.5, True), n_c=3)
    save_checkpoint(ParamCheckpoint(params, topo.fingerprint(), 4, n_t=16), tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json", topo)
    assert back.params.log_k.tolist() == params.log_k.tolist()
    assert back.params.boundary == params.boundary and back.n_t == 16
    assert back.params.kappa == params.kappa and back.params.n_c == 3
    with pytest.raises(FormatError, match="topology"):
        load_checkpoint(tmp_path / "c.json", other)


def test_version_checked(tmp_path):
    save_scenario(ScenarioConfig(), tmp_path / "s.json")
    d = json.loads((tmp_path / "s.json").read_text())
    d["format_version"] = 99
    (tmp_path / "s.json").write_text(json.dumps(d))
    with pytest.raises(FormatError, match="format_version"):
        load_scenario(tmp_path / "s.json")


def test_scenario_roundtrip_and_apply(tmp_path):
    sc = ScenarioConfig(gravity=(0, 0, -4.9), ground={"height": 0.1, "friction_logit": 0.0, "sticky": True},
                        stiffness_scale=2.0, v0=(1, 0, 0))
    save_scenario(sc, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back == sc
    params = back.apply(PhysicalParams(np.zeros(3)))
    np.testing.assert_allclose(params.k, 2.0)
    assert params.boundary.sticky and params.gravity.tolist() == [0, 0, -4.9]
    assert params.v0.tolist() == [1, 0, 0]
    with pytest.raises(ValueError):
        ScenarioConfig(fps=0)
    with pytest.raises(ValueError):
        ScenarioConfig(stiffness_scale=-1)


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(5).uniform(size=(8, 9, 3))
    save_png(img, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    np.testing.assert_allclose(back, np.round(img * 255) / 255, atol=1e-12)
    save_png(img[..., 0], tmp_path / "g.png")
    assert load_png(tmp_path / "g.png").shape == (8, 9)
