"""Command-line driver for the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .config import TrainConfig
from .errors import DataError

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> Parser:
    parser = Parser(prog="pointrig", description="Articulated neural point clouds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    gen = sub.add_parser("gen-data", help="render a synthetic articulated dataset")
    gen.add_argument("--rig", required=True, help="rig spec JSON file")
    gen.add_argument("--views", type=int, required=True)
    gen.add_argument("--timestamps", type=int, required=True)
    gen.add_argument("--res", required=True, help="WxH, e.g. 64x64")
    gen.add_argument("--out", required=True)

    ext = sub.add_parser("extract", help="point cloud + skeleton + weight init")
    ext.add_argument("--dataset", required=True)
    ext.add_argument("--out", required=True)
    ext.add_argument("--config", default=None)

    tr = sub.add_parser("train", help="joint optimization")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", default=None)

    rnd = sub.add_parser("render", help="render one frame from a checkpoint")
    rnd.add_argument("--ckpt", required=True)
    rnd.add_argument("--camera", type=int, required=True)
    rnd.add_argument("--time", type=float, required=True)
    rnd.add_argument("--out", required=True)
    rnd.add_argument("--opacity", default=None, help="optional grayscale opacity PNG")

    ev = sub.add_parser("evaluate", help="per-view PSNR against a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--views", default=None, help="comma-separated view ids; default all")

    simp = sub.add_parser("simplify", help="merge static bones, prune joints")
    simp.add_argument("--ckpt", required=True)
    simp.add_argument("--threshold-deg", type=float, default=20.0)
    simp.add_argument("--out", required=True)

    rep = sub.add_parser("repose", help="render a user pose")
    rep.add_argument("--ckpt", required=True)
    rep.add_argument("--pose", required=True, help="pose JSON file")
    rep.add_argument("--camera", type=int, required=True)
    rep.add_argument("--out", required=True)

    srv = sub.add_parser("serve", help="HTTP rendering service")
    srv.add_argument("--ckpt", required=True)
    srv.add_argument("--addr", default="127.0.0.1:8000")
    srv.add_argument("--reload", action="store_true", help="watch the checkpoint file and swap on change")
    return parser


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise DataError(f"bad resolution {text!r}; expected WxH like 64x64") from None


def load_config(path) -> TrainConfig:
    return TrainConfig.from_json(path) if path else TrainConfig()


def find_camera(model, camera_id: int):
    for cam in model.cameras:
        if cam.id == camera_id:
            return cam
    raise DataError(f"unknown camera id {camera_id}; checkpoint has {[c.id for c in model.cameras]}")


def cmd_gen_data(args) -> int:
    from .sceneio import SyntheticRig, generate_synthetic, save_dataset

    rig_path = Path(args.rig)
    if not rig_path.exists():
        raise DataError(f"rig spec not found: {rig_path}")
    with open(rig_path) as fh:
        try:
            rig = SyntheticRig.from_dict(json.load(fh))
        except json.JSONDecodeError as e:
            raise DataError(f"invalid rig JSON {rig_path}: {e}") from None
    width, height = parse_resolution(args.res)
    dataset = generate_synthetic(rig, args.views, args.timestamps, (width, height))
    save_dataset(dataset, args.out)
    print(f"wrote {args.views} views x {args.timestamps} timestamps to {args.out}")
    return 0


def cmd_extract(args) -> int:
    from .scene import extract_scene
    from .sceneio import load_dataset, save_checkpoint

    dataset = load_dataset(args.dataset)
    config = load_config(args.config)
    model = extract_scene(dataset, config)
    save_checkpoint(args.out, model)
    print(
        f"extracted {model.n_points} points, {model.skeleton.n_joints} joints "
        f"({model.skeleton.n_bones} bones) -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    from .sceneio import load_checkpoint, load_dataset, save_checkpoint
    from .trainer import fit

    dataset = load_dataset(args.dataset)
    model, opt_state, rng_state = load_checkpoint(args.ckpt)
    if args.config:
        model.config = load_config(args.config)
    out = Path(args.out)
    model, history = fit(
        model, dataset, out_dir=out.parent, optimizer_state=opt_state, rng_state=rng_state
    )
    save_checkpoint(out, model)
    final = history[-1]["losses"]["total"] if history else float("nan")
    print(f"trained to iteration {model.iteration}, final loss {final:.6f} -> {out}")
    return 0


def cmd_render(args) -> int:
    from .sceneio import load_checkpoint, save_image

    model, _, _ = load_checkpoint(args.ckpt)
    camera = find_camera(model, args.camera)
    img, opacity = model.render_camera(camera, model.pose_at(args.time))
    save_image(Path(args.out), img)
    if args.opacity:
        from PIL import Image

        data = np.clip(np.round(opacity * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="L").save(args.opacity)
    print(f"rendered camera {args.camera} at t={args.time} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .sceneio import load_checkpoint, load_dataset
    from .trainer import evaluate

    model, _, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.dataset)
    views = (
        [int(v) for v in args.views.split(",")] if args.views else list(range(dataset.n_views))
    )
    scores = evaluate(model, dataset, views)
    print(json.dumps(scores, indent=1))
    return 0


def cmd_simplify(args) -> int:
    from .sceneio import load_checkpoint, save_checkpoint

    model, _, _ = load_checkpoint(args.ckpt)
    simplified = model.apply_simplification(args.threshold_deg)
    save_checkpoint(args.out, simplified)
    print(
        f"simplified {model.skeleton.n_joints} -> {simplified.skeleton.n_joints} joints "
        f"({simplified.skeleton.n_bones} bones) -> {args.out}"
    )
    return 0


def cmd_repose(args) -> int:
    from .kinematics import Pose
    from .sceneio import load_checkpoint, save_image

    model, _, _ = load_checkpoint(args.ckpt)
    pose_path = Path(args.pose)
    if not pose_path.exists():
        raise DataError(f"pose file not found: {pose_path}")
    with open(pose_path) as fh:
        try:
            pose = Pose.from_dict(json.load(fh))
        except json.JSONDecodeError as e:
            raise DataError(f"invalid pose JSON {pose_path}: {e}") from None
    if pose.n_bones != model.n_bones:
        raise DataError(f"pose has {pose.n_bones} bones, checkpoint has {model.n_bones}")
    camera = find_camera(model, args.camera)
    img, _ = model.render_camera(camera, pose)
    save_image(Path(args.out), img)
    print(f"reposed render -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise DataError(f"bad address {args.addr!r}; expected HOST:PORT")
    app = create_app(args.ckpt, reload=args.reload)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "extract": cmd_extract,
    "train": cmd_train,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
    "simplify": cmd_simplify,
    "repose": cmd_repose,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
