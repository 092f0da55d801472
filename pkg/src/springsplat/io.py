"""File formats: PLY clouds, trajectory directories, JSON checkpoints and scenarios, PNG."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import Boundary, PhysicalParams
from .geometry import PointCloud, SpringTopology
from .trajectory import Trajectory

FORMAT_VERSION = 1

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- PLY

def _read_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError("PLY header has no end_header line")
        words = raw.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            if len(words) < 2:
                raise FormatError("malformed PLY format line")
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3:
                raise FormatError(f"malformed element line: {raw!r}")
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise FormatError("property declared before any element")
            if words[1] == "list":
                if len(words) != 5:
                    raise FormatError(f"malformed list property: {raw!r}")
                elements[-1][2].append((words[4], "list", words[2], words[3]))
            else:
                if len(words) != 3 or words[1] not in _PLY_TYPES:
                    raise FormatError(f"unsupported property line: {raw!r}")
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        else:
            raise FormatError(f"unknown PLY header keyword {words[0]!r}")
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def load_ply(path) -> PointCloud:
    """Read the vertex element of a PLY file (ASCII or binary)."""
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh)
        if not elements or elements[0][0] != "vertex":
            raise FormatError("PLY file must start with a vertex element")
        _, count, props = elements[0]
        if any(p[1] == "list" for p in props):
            raise FormatError("list properties on vertices are not supported")
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise FormatError(f"PLY vertex element is missing property '{axis}'")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = fh.readline()
                if not line:
                    raise FormatError(f"PLY file ends before {count} vertices were read")
                rows.append(line.split()[:len(props)])
            data = {n: np.array([float(r[i]) for r in rows]) for i, n in enumerate(names)}
        else:
            end = "<" if fmt == "binary_little_endian" else ">"
            dtype = np.dtype([(n, end + t) for n, t in props])
            buf = fh.read(dtype.itemsize * count)
            if len(buf) < dtype.itemsize * count:
                raise FormatError(f"PLY file ends before {count} vertices were read")
            arr = np.frombuffer(buf, dtype=dtype, count=count)
            data = {n: arr[n].astype(np.float64) for n in names}
    pos = np.stack([data["x"], data["y"], data["z"]], axis=1)
    if not np.all(np.isfinite(pos)):
        raise FormatError(f"{path}: non-finite vertex coordinates")
    colors = None
    if all(c in data for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1) / 255.0
    opac = data.get("opacity")
    if opac is not None and not np.all(np.isfinite(opac)):
        raise FormatError(f"{path}: non-finite opacity values")
    return PointCloud(pos, colors=colors, opacities=opac)


def save_ply(cloud: PointCloud, path) -> None:
    """Write binary little-endian PLY: float32 xyz, optional uchar rgb, optional float32 opacity."""
    pos = cloud.positions
    if not np.all(np.isfinite(pos)):
        raise FormatError("refusing to write non-finite coordinates")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pos)}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if cloud.opacities is not None:
        fields.append(("opacity", "<f4"))
        header.append("property float opacity")
    header.append("end_header")
    arr = np.empty(len(pos), dtype=np.dtype(fields))
    arr["x"], arr["y"], arr["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    if cloud.colors is not None:
        rgb = np.round(np.clip(cloud.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
        arr["red"], arr["green"], arr["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    if cloud.opacities is not None:
        arr["opacity"] = cloud.opacities
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(arr.tobytes())


def float32_cloud(cloud: PointCloud) -> PointCloud:
    """The cloud as it will read back from PLY."""
    pos = cloud.positions.astype(np.float32).astype(np.float64)
    colors = None if cloud.colors is None else np.round(np.clip(cloud.colors, 0, 1) * 255.0) / 255.0
    opac = None if cloud.opacities is None else cloud.opacities.astype(np.float32).astype(np.float64)
    return PointCloud(pos, colors=colors, opacities=opac)


# --------------------------------------------------------- trajectories

def save_trajectory(traj: Trajectory, directory) -> None:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "fps": 1.0 / traj.dt_frame, "dt": traj.dt_frame,
                "n_frames": len(traj), "t0": float(traj.times[0]), "units": "m"}
    for i, frame in enumerate(traj.frames):
        save_ply(frame, d / "frames" / f"frame_{i:04d}.ply")
    _write_json(d / "manifest.json", manifest)


def load_trajectory(directory) -> Trajectory:
    d = Path(directory)
    manifest = _read_json(d / "manifest.json")
    _check_version(manifest, d / "manifest.json")
    n = int(manifest["n_frames"])
    dt = float(manifest["dt"]) if "dt" in manifest else 1.0 / float(manifest["fps"])
    frames = []
    for i in range(n):
        path = d / "frames" / f"frame_{i:04d}.ply"
        if not path.exists():
            raise FormatError(f"trajectory manifest lists {n} frames but {path.name} is missing")
        frames.append(load_ply(path))
    extra = sorted((d / "frames").glob("frame_*.ply"))
    if len(extra) != n:
        raise FormatError(f"manifest says {n} frames, directory holds {len(extra)}")
    t0 = float(manifest.get("t0", 0.0))
    return Trajectory(t0 + dt * np.arange(n), frames, dt, manifest.get("units", "m"))


# --------------------------------------------------------- topology / checkpoints

def save_topology(topology: SpringTopology, path) -> None:
    _write_json(path, {"format_version": FORMAT_VERSION, "n_k": topology.n_k,
                       "n_anchors": topology.n_anchors, "fingerprint": topology.fingerprint(),
                       "neighbors": topology.neighbors.tolist(),
                       "rest_lengths": topology.rest_lengths.tolist()})


def load_topology(path) -> SpringTopology:
    d = _read_json(path)
    _check_version(d, path)
    topo = SpringTopology(np.asarray(d["neighbors"], dtype=np.int64),
                          np.asarray(d["rest_lengths"], dtype=np.float64))
    if topo.fingerprint() != d["fingerprint"]:
        raise FormatError(f"{path}: topology fingerprint does not match its contents")
    return topo


@dataclass
class ParamCheckpoint:
    params: PhysicalParams
    fingerprint: str
    n_k: int
    n_b: int = 16
    p_b: float = 0.5
    n_t: int = 4
    fps: float = 30.0

    def to_dict(self) -> dict:
        p = self.params
        b = None if p.boundary is None else asdict(p.boundary)
        return {"format_version": FORMAT_VERSION, "v0": p.v0.tolist(), "log_k": p.log_k.tolist(),
                "kappa": p.kappa, "boundary": b,
                "constants": {"mass": p.mass, "damping": p.damping, "p_k": p.p_k, "p_b": self.p_b,
                              "n_k": self.n_k, "n_b": self.n_b, "n_c": p.n_c,
                              "gravity": p.gravity.tolist()},
                "n_t": self.n_t, "fps": self.fps, "topology_fingerprint": self.fingerprint}


def save_checkpoint(ckpt: ParamCheckpoint, path) -> None:
    _write_json(path, ckpt.to_dict())


def load_checkpoint(path, topology: Optional[SpringTopology] = None) -> ParamCheckpoint:
    """Load a checkpoint; refuses when it was fitted on a different topology."""
    d = _read_json(path)
    _check_version(d, path)
    c = d["constants"]
    if topology is not None and topology.fingerprint() != d["topology_fingerprint"]:
        raise FormatError(f"{path}: checkpoint was fitted on a different spring topology")
    bnd = None if d["boundary"] is None else Boundary(**d["boundary"])
    params = PhysicalParams(np.asarray(d["log_k"]), v0=d["v0"], kappa=d["kappa"], boundary=bnd,
                            mass=c["mass"], damping=c["damping"], p_k=c["p_k"], gravity=c["gravity"],
                            n_c=int(c["n_c"]))
    return ParamCheckpoint(params, d["topology_fingerprint"], int(c["n_k"]), int(c["n_b"]), float(c["p_b"]),
                           int(d.get("n_t", 4)), float(d.get("fps", 30.0)))


# --------------------------------------------------------- scenarios

@dataclass
class ScenarioConfig:
    gravity: tuple = (0.0, 0.0, -9.8)
    ground: Optional[dict] = field(default_factory=lambda: {"height": 0.0, "friction_logit": 0.0, "sticky": False})
    stiffness_scale: float = 1.0
    v0: Optional[tuple] = None
    fps: float = 30.0
    n_frames: int = 20
    n_t: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not self.stiffness_scale > 0:
            raise ValueError(f"stiffness scale must be positive, got {self.stiffness_scale}")
        self.gravity = tuple(float(g) for g in self.gravity)
        if self.v0 is not None:
            self.v0 = tuple(float(v) for v in self.v0)

    def apply(self, params: PhysicalParams) -> PhysicalParams:
        """Copy of ``params`` under this scenario's environment and edits."""
        out = params.copy()
        out.gravity = np.asarray(self.gravity, dtype=np.float64)
        out.boundary = None if self.ground is None else Boundary(
            float(self.ground["height"]), float(self.ground["friction_logit"]), bool(self.ground["sticky"]))
        out.log_k = out.log_k + np.log(self.stiffness_scale)
        if self.v0 is not None:
            out.v0 = np.asarray(self.v0, dtype=np.float64)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        d["v0"] = None if self.v0 is None else list(self.v0)
        d["format_version"] = FORMAT_VERSION
        return d


def save_scenario(sc: ScenarioConfig, path) -> None:
    _write_json(path, sc.to_dict())


def load_scenario(path) -> ScenarioConfig:
    d = _read_json(path)
    _check_version(d, path)
    d.pop("format_version")
    return ScenarioConfig(**d)


# --------------------------------------------------------- images

def save_png(image, path) -> None:
    from PIL import Image

    from .render import to_uint8
    arr = to_uint8(image)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L" if im.mode in ("L", "I", "1") else "RGB"), dtype=np.float64)
    return arr / 255.0


# --------------------------------------------------------- helpers

def _write_json(path, data) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def _read_json(path) -> dict:
    if not os.path.exists(path):
        raise FormatError(f"missing file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}: invalid JSON ({err})") from err


def _check_version(d: dict, path) -> None:
    v = d.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {v!r} (expected {FORMAT_VERSION})")
