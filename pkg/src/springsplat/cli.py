"""Command-line pipeline: sample anchors, simulate, identify, register, evaluate, edit scenarios.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .dynamics import Boundary, PhysicalParams, SimulationError, rollout
from .geometry import AnchorSystem, PointCloud, bind_kernels, build_topology, volume_sample
from .identification import IdentConfig, IdentificationError, identify
from .metrics import image_report, trajectory_report
from .registration import RegistrationConfig, RegistrationError, register
from .render import Camera, GaussianCloud, rasterize

log = logging.getLogger("springsplat")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
ANCHORS_FILE, TOPOLOGY_FILE = "anchors.ply", "topology.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _vec3(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(vals)


def _load_anchor_dir(directory):
    d = Path(directory)
    anchors = io.load_ply(d / ANCHORS_FILE)
    topology = io.load_topology(d / TOPOLOGY_FILE)
    if len(anchors) != topology.n_anchors:
        raise io.FormatError(f"{d}: {len(anchors)} anchors but topology has {topology.n_anchors}")
    return AnchorSystem(anchors.positions), topology


def _binding(args, anchors):
    if not args.kernels:
        return None, None
    kernels = io.load_ply(args.kernels)
    return kernels, bind_kernels(kernels, anchors, args.n_b, args.p_b)


# ------------------------------------------------------------------ commands

def cmd_sample_anchors(args) -> int:
    cloud = io.load_ply(args.cloud)
    # anchors are points of the loaded cloud, so they survive the float32 PLY round trip exactly
    anchors = volume_sample(cloud, args.n_anchors, seed=args.seed)
    topology = build_topology(anchors, args.n_k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_ply(PointCloud(anchors.positions), out / ANCHORS_FILE)
    io.save_topology(topology, out / TOPOLOGY_FILE)
    log.info("sampled %d anchors, n_k=%d -> %s", len(anchors), args.n_k, out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.render and not args.camera:
        raise UsageError("--render needs --camera")
    camera = Camera.from_dict(io._read_json(args.camera)) if args.render else None
    anchors, topology = _load_anchor_dir(args.anchors)
    if args.checkpoint:
        ckpt = io.load_checkpoint(args.checkpoint, topology)
        params, n_t, fps = ckpt.params, ckpt.n_t, ckpt.fps
    else:
        params = PhysicalParams.initial(len(anchors), args.stiffness, boundary=Boundary())
        n_t, fps = 16, 30.0
    n_frames = 20
    if args.scenario:
        scenario = io.load_scenario(args.scenario)
        params = scenario.apply(params)
        n_t, fps, n_frames = scenario.n_t, scenario.fps, scenario.n_frames
    n_t = args.n_t or n_t
    n_frames = args.n_frames or n_frames
    if args.v0 is not None:
        params.v0 = np.asarray(args.v0)
    kernels, binding = _binding(args, anchors)
    traj = rollout(anchors, topology, params, n_frames, n_t, 1.0 / fps, binding=binding)
    out = Path(args.out)
    io.save_trajectory(traj, out)
    if camera is not None:
        src = kernels if kernels is not None else PointCloud(traj.frames[0].positions)
        base = GaussianCloud.from_points(src, args.kernel_scale)
        for i, frame in enumerate(traj.frames):
            img = rasterize(base.with_centers(frame.positions), camera, args.background)
            io.save_png(img, out / f"render_{i:04d}.png")
    log.info("simulated %d frames (n_t=%d) -> %s", n_frames, n_t, out)
    return EXIT_OK


def cmd_identify(args) -> int:
    anchors, topology = _load_anchor_dir(args.anchors)
    observed = io.load_trajectory(args.observed)
    _, binding = _binding(args, anchors)
    config = IdentConfig(iterations=args.iterations, single_k=args.single_k, refine_v0=not args.freeze_v0,
                         learn_ground_height=args.learn_ground_height, sticky=args.sticky,
                         ground=not args.no_ground, n_t_init=args.n_t_init, n_t_max=args.n_t_max,
                         seed=args.seed)
    result = identify(anchors, topology, observed, config, binding=binding, history_path=args.loss_csv)
    ckpt = io.ParamCheckpoint(result.params, topology.fingerprint(), topology.n_k, args.n_b, args.p_b,
                              result.n_t, 1.0 / observed.dt_frame)
    io.save_checkpoint(ckpt, args.out)
    log.info("best loss %.4e at iteration %d -> %s", result.best_loss, result.best_iteration, args.out)
    return EXIT_OK


def cmd_register(args) -> int:
    source, target = io.load_ply(args.source), io.load_ply(args.target)
    transform = register(source, target, RegistrationConfig(iterations=args.iterations))
    Path(args.out).write_text(transform.to_json() + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.pred and args.obs:
        report = trajectory_report(io.load_trajectory(args.pred), io.load_trajectory(args.obs),
                                   table_units=args.table_units)
    elif args.images and args.references:
        names = sorted(p.name for p in Path(args.images).glob("*.png"))
        if not names:
            raise io.FormatError(f"no PNG images in {args.images}")
        missing = [n for n in names if not (Path(args.references) / n).exists()]
        if missing:
            raise io.FormatError(f"reference image missing: {missing[0]}")
        report = image_report([io.load_png(Path(args.images) / n) for n in names],
                              [io.load_png(Path(args.references) / n) for n in names])
    else:
        raise UsageError("eval needs --pred and --obs, or --images and --references")
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_edit_scenario(args) -> int:
    if args.base:
        scenario = io.load_scenario(args.base)
    else:
        scenario = io.ScenarioConfig()
        if args.checkpoint:
            p = io.load_checkpoint(args.checkpoint).params
            scenario.gravity = tuple(p.gravity.tolist())
            scenario.ground = None if p.boundary is None else {
                "height": p.boundary.height, "friction_logit": p.boundary.friction_logit,
                "sticky": p.boundary.sticky}
    if args.gravity is not None:
        scenario.gravity = args.gravity
    if args.no_ground:
        scenario.ground = None
    elif args.ground_height is not None or args.sticky is not None or args.friction_logit is not None:
        ground = dict(scenario.ground or {"height": 0.0, "friction_logit": 0.0, "sticky": False})
        if args.ground_height is not None:
            ground["height"] = args.ground_height
        if args.friction_logit is not None:
            ground["friction_logit"] = args.friction_logit
        if args.sticky is not None:
            ground["sticky"] = args.sticky
        scenario.ground = ground
    for name in ("stiffness_scale", "v0", "fps", "n_frames", "n_t"):
        value = getattr(args, name)
        if value is not None:
            setattr(scenario, name, value)
    scenario.seed = args.seed
    # replace() re-runs validation on the edited fields
    io.save_scenario(dataclasses.replace(scenario), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="springsplat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    def kernel_flags(p):
        p.add_argument("--kernels", help="kernel cloud (PLY) to drive by IDW interpolation")
        p.add_argument("--n-b", type=int, default=16, help="anchors bound to each kernel")
        p.add_argument("--p-b", type=float, default=0.5, help="inverse-distance weight exponent")

    p = command("sample-anchors", cmd_sample_anchors, "sample anchors and build the spring graph")
    p.add_argument("--cloud", required=True)
    p.add_argument("--n-anchors", type=int, default=512)
    p.add_argument("--n-k", type=int, default=32)
    p.add_argument("--out", required=True, help="output directory")

    p = command("simulate", cmd_simulate, "roll out a trajectory")
    p.add_argument("--anchors", required=True, help="directory from sample-anchors")
    p.add_argument("--checkpoint")
    p.add_argument("--scenario")
    p.add_argument("--stiffness", type=float, default=1000.0, help="uniform k without a checkpoint")
    p.add_argument("--v0", type=_vec3)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-t", type=int)
    kernel_flags(p)
    p.add_argument("--render", action="store_true")
    p.add_argument("--camera", help="camera JSON")
    p.add_argument("--kernel-scale", type=float, default=0.01)
    p.add_argument("--background", type=_vec3, default=(0.0, 0.0, 0.0))
    p.add_argument("--out", required=True, help="output trajectory directory")

    p = command("identify", cmd_identify, "fit physical parameters to an observed trajectory")
    p.add_argument("--anchors", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--single-k", action="store_true")
    p.add_argument("--freeze-v0", action="store_true")
    p.add_argument("--learn-ground-height", action="store_true")
    p.add_argument("--sticky", action="store_true")
    p.add_argument("--no-ground", action="store_true")
    p.add_argument("--n-t-init", type=int, default=4)
    p.add_argument("--n-t-max", type=int, default=64)
    kernel_flags(p)
    p.add_argument("--loss-csv")
    p.add_argument("--out", required=True, help="checkpoint JSON")

    p = command("register", cmd_register, "align a source cloud onto a target cloud")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--out", required=True)

    p = command("eval", cmd_eval, "compare trajectories (CD, EMD) or images (PSNR, SSIM)")
    p.add_argument("--pred")
    p.add_argument("--obs")
    p.add_argument("--images")
    p.add_argument("--references")
    p.add_argument("--table-units", action="store_true", help="report CD scaled by 1e3")
    p.add_argument("--out")

    p = command("edit-scenario", cmd_edit_scenario, "write a scenario with edited conditions")
    p.add_argument("--checkpoint")
    p.add_argument("--base", help="scenario JSON to start from")
    p.add_argument("--gravity", type=_vec3)
    p.add_argument("--ground-height", type=float)
    p.add_argument("--friction-logit", type=float)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sticky", dest="sticky", action="store_const", const=True)
    g.add_argument("--smooth", dest="sticky", action="store_const", const=False)
    p.add_argument("--no-ground", action="store_true")
    p.add_argument("--stiffness-scale", type=float)
    p.add_argument("--v0", type=_vec3)
    p.add_argument("--fps", type=float)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-t", type=int)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, SimulationError, IdentificationError, RegistrationError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
