"""Command-line entry point: ``poseadv <subcommand> [options]``.

Exit codes: 0 success, 1 other package error, 2 configuration/domain/file error,
3 detector protocol error, 4 numerical error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .body import CameraParams, LightParams, PoseParams, default_pose_bounds, pose_body, render_iuv
from .config import load_config
from .errors import ConfigError, PoseAdvError
from .gmm import fit_poses, load_gmm, save_gmm, save_poses
from .imageio import read_ppm, write_ppm
from .protocol import STUB_MODES, serve_stream, serve_tcp

GLOBAL = ("config", "seed", "threads", "out")


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="RunConfig JSON file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=d if suppress else 1, help="worker threads")
    p.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poseadv", description=__doc__.splitlines()[0])
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = cmd("fit-gmm", "fit the pose mixture to pose files (or the synthetic corpus)")
    p.add_argument("--poses", nargs="*", default=None, help="pose JSON files (concatenated)")
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--output", default=None, help="model file (default <out>/gmm.json)")

    p = cmd("sample-poses", "draw poses from a fitted mixture")
    p.add_argument("--gmm", required=True)
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--output", default=None, help="pose file (default <out>/poses.json)")

    p = cmd("render", "render one posed, textured body to PPM")
    p.add_argument("--pose", default=None, help="pose JSON file; first pose is used (default rest pose)")
    p.add_argument("--pose-index", type=int, default=0)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--distance", type=float, default=4.5)
    p.add_argument("--light", type=float, default=1.0)
    p.add_argument("--patch", default=None, help="patch PPM tiled over the clothing")
    p.add_argument("--background", default=None, help="background PPM (default black)")
    p.add_argument("--output", default=None, help="image file (default <out>/render.ppm)")

    cmd("attack", "optimise a patch (writes patch.ppm, latent.json, config.json, log.jsonl)")

    p = cmd("eval", "score a patch on held-out scenarios")
    p.add_argument("--patch", required=True)
    p.add_argument("--scenes", type=int, default=None, help="scene count (default from config)")
    p.add_argument("--gmm", default=None, help="pose model for the scenarios (default from config)")
    p.add_argument("--frames", action="store_true", help="include per-frame detections")
    p.add_argument("--output", default=None, help="result file (default <out>/eval.json)")

    p = cmd("stub-detector", "reference protocol server (stdio unless --tcp)")
    p.add_argument("--mode", choices=STUB_MODES, default="constant")
    p.add_argument("--conf", type=float, default=0.7)
    p.add_argument("--tcp", default=None, metavar="HOST:PORT", help="listen on TCP (port 0 picks one)")
    return ap


def _out(args, name: str, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _config(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    return cfg.with_overrides(**overrides)


def _cmd_fit_gmm(args) -> int:
    from .pipeline import Pipeline

    cfg = _config(args)
    pipe = Pipeline(cfg)
    if args.poses:
        from .gmm import load_poses

        theta, lo, hi = load_poses(*args.poses)
    else:
        theta, lo, hi = pipe.poses()
    k = args.components or int(cfg["gmm"]["components"])
    model = fit_poses(theta, lo, hi, k, int(cfg["gmm"]["max_iter"]), cfg.seed)
    path = _out(args, "gmm.json", args.output)
    save_gmm(model, path)
    print(json.dumps({"gmm": str(path), "components": k, "samples": len(theta),
                      "log_likelihood": model.log_likelihoods[-1] if len(model.log_likelihoods) else None}))
    return 0


def _cmd_sample_poses(args) -> int:
    if args.n < 1:
        raise ConfigError("-n must be >= 1")
    model = load_gmm(args.gmm)
    seed = 0 if args.seed is None else args.seed
    theta = model.sample(np.random.default_rng(seed), args.n)
    path = _out(args, "poses.json", args.output)
    save_poses(path, theta, model.theta_min, model.theta_max)
    print(json.dumps({"poses": str(path), "count": args.n}))
    return 0


def _cmd_render(args) -> int:
    from .body import default_body
    from .scene import default_stack
    from .texture import composite, tile_patch

    cfg = load_config(args.config) if args.config else None
    body = default_body()
    if cfg is not None and cfg["paths"]["body"]:
        from .body import load_body

        body = load_body(cfg.path(cfg["paths"]["body"]))
    if args.pose:
        from .gmm import load_poses

        theta, lo, hi = load_poses(args.pose)
        if not 0 <= args.pose_index < len(theta):
            raise ConfigError(f"pose index {args.pose_index} out of range")
        pose = PoseParams(theta[args.pose_index], lo, hi)
    else:
        lo, hi = default_pose_bounds(body.n_joints)
        pose = PoseParams(np.zeros(3 * body.n_joints), lo, hi)
    r = cfg["render"] if cfg is not None else {"width": 32, "height": 32, "fov": 30.0, "texture_size": 32, "step": None}
    W, H = int(r["width"]), int(r["height"])
    cam = CameraParams(args.azimuth, args.elevation, args.distance, W, H, float(r["fov"]),
                       tuple(float(x) for x in body.bounding_sphere()[0]))
    iuv = render_iuv(pose_body(body, pose), cam, r["step"])
    stack = default_stack(body, int(r["texture_size"]))
    if args.patch:
        stack = tile_patch(read_ppm(args.patch), stack)
    bg = read_ppm(args.background) if args.background else np.zeros((H, W, 3))
    img = composite(iuv, stack, bg, LightParams(intensity=args.light))
    path = _out(args, "render.ppm", args.output)
    write_ppm(img, path)
    box = iuv.bbox(0.5)
    print(json.dumps({"image": str(path), "gt": None if box is None else list(box)}))
    return 0


def _cmd_attack(args) -> int:
    from .pipeline import Pipeline, write_attack_outputs

    cfg = _config(args)
    out = Path(args.out or cfg.path(cfg["paths"]["out"]))
    pipe = Pipeline(cfg, args.threads)
    try:
        result = pipe.attack(log_fn=lambda e: print(json.dumps(e), flush=True))
    finally:
        pipe.close()
    write_attack_outputs(out, result, cfg)
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate_patch
    from .pipeline import Pipeline

    cfg = _config(args)
    pipe = Pipeline(cfg, args.threads)
    patch = read_ppm(args.patch)
    P = cfg.generator.patch_size
    if patch.shape != (P, P, 3):
        raise ConfigError(f"patch is {patch.shape[1]}x{patch.shape[0]}, config expects {P}x{P}")
    ev = cfg["eval"]
    n = args.scenes or int(ev["n_scenes"])
    gmm = load_gmm(args.gmm) if args.gmm else None
    results = []
    try:
        dets, _ = pipe.detectors()
        sampler = pipe.sampler(gmm)
        for entry, det in zip(cfg["detectors"], dets):
            res = evaluate_patch(patch, pipe.renderer, sampler, det, n, 0, pipe.workers,
                                 float(ev["tau_iou"]), float(ev["tau_conf"]))
            results.append({"detector": entry.get("endpoint", "toy"), **res.to_dict(args.frames)})
    finally:
        pipe.close()
    text = json.dumps({"results": results}, sort_keys=True, indent=1) + "\n"
    _out(args, "eval.json", args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_stub(args) -> int:
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        try:
            port = int(port)
        except ValueError:
            raise ConfigError(f"bad --tcp address {args.tcp!r}") from None

        def ready(addr):
            print(f"listening tcp://{addr[0]}:{addr[1]}", flush=True)

        serve_tcp(host or "127.0.0.1", port, args.mode, args.conf, ready)
        return 0
    serve_stream(sys.stdin.buffer, sys.stdout.buffer, args.mode, args.conf)
    return 0


COMMANDS = {
    "fit-gmm": _cmd_fit_gmm,
    "sample-poses": _cmd_sample_poses,
    "render": _cmd_render,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "stub-detector": _cmd_stub,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in GLOBAL:
        if not hasattr(args, name):
            setattr(args, name, None)
    if args.threads is None:
        args.threads = 1
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except PoseAdvError as exc:
        print(f"poseadv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        # unwritable output paths and the like
        print(f"poseadv {args.command}: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
