"""Command-line interface: synth, encode, decode, train, eval, gradcheck.

Every command is deterministic given its flags; all randomness flows from a
single --seed through labeled sub-streams. Report commands write a PNG
figure next to each delimited output file. Exit codes: 0 success, 1 usage,
2 data/format, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .datagen import GenerationConfig, generate_dataset, load_dataset
from .errors import FormatError, InputError, NumericalError
from .gradcheck import CHECKS, DEFAULT_TRIALS, TOLERANCE, run_gradcheck
from .heatmap2d import render_bone_heatmaps, render_joint_heatmaps
from .depthvol import DepthVolume, encode_volume
from .lifting import (
    TrainConfig,
    forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
    train,
    training_arrays,
    unflatten_pose,
)
from .metrics import evaluate_poses
from .skeleton import (
    Pose2D,
    Pose3D,
    Pose25D,
    Skeleton,
    default_skeleton,
    normalize_scale,
    skeleton_from_json_dict,
    skeleton_to_json_dict,
)
from .softargmax import DEFAULT_GAIN, assemble_pose25d
from .tensorio import atomic_write_text, read_tensor, write_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Bad flag or environment value; distinct from bad data on disk."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract says 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_thread_cap() -> None:
    raw = os.environ.get("POSELIFT_THREADS", "").strip()
    if not raw:
        return
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"POSELIFT_THREADS must be an integer, got {raw!r}")
    if cap < 0:
        raise UsageError(f"POSELIFT_THREADS must be >= 0, got {cap}")
    if cap > 0:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=cap)


def _load_skeleton(path: str | None) -> Skeleton:
    if path is None:
        return default_skeleton()
    p = Path(path)
    if not p.exists():
        raise FormatError(f"skeleton file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid json: {exc}") from None
    return skeleton_from_json_dict(doc)


def _parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"grid must look like 64x64, got {text!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"grid must look like 64x64, got {text!r}") from None
    if w < 1 or h < 1:
        raise UsageError(f"grid dims must be positive, got {text!r}")
    return w, h


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def _write_manifest(path: Path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _to_grid(uv: np.ndarray, image_w: float, image_h: float, grid: tuple[int, int]) -> np.ndarray:
    """Map image-pixel centers onto grid-pixel centers (area-preserving affine)."""
    out = np.empty_like(uv)
    out[:, 0] = (uv[:, 0] + 0.5) * (grid[0] / image_w) - 0.5
    out[:, 1] = (uv[:, 1] + 0.5) * (grid[1] / image_h) - 0.5
    return out


def _from_grid(uv: np.ndarray, image_w: float, image_h: float, grid: tuple[int, int]) -> np.ndarray:
    out = np.empty_like(uv)
    out[:, 0] = (uv[:, 0] + 0.5) * (image_w / grid[0]) - 0.5
    out[:, 1] = (uv[:, 1] + 0.5) * (image_h / grid[1]) - 0.5
    return out


# ---------------------------------------------------------------- synth


def cmd_synth(args: argparse.Namespace) -> int:
    skel = _load_skeleton(args.skeleton)
    cfg = GenerationConfig(skeleton=skel, scale_jitter=args.scale_jitter)
    samples, manifest = generate_dataset(args.n, args.seed, args.out_dir, cfg)
    print(f"wrote {samples} and {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------- encode


def cmd_encode(args: argparse.Namespace) -> int:
    skel = _load_skeleton(args.skeleton)
    grid = _parse_grid(args.grid)
    if args.cube_size < 2:
        raise UsageError(f"--cube-size must be at least 2, got {args.cube_size}")
    if not args.sigma > 0:
        raise UsageError(f"--sigma must be positive, got {args.sigma}")
    if not args.depth_scale_mm > 0:
        raise UsageError(f"--depth-scale-mm must be positive, got {args.depth_scale_mm}")
    records = load_dataset(args.dataset)
    if args.limit is not None:
        records = records[: args.limit]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, rec in enumerate(records):
        grid_uv = _to_grid(rec.pose2d.coords, rec.camera.width, rec.camera.height, grid)
        pose2d = Pose2D(coords=grid_uv)
        pose25 = Pose25D(uv=grid_uv, z=rec.z_root_relative, depth_scale=args.depth_scale_mm)
        joints = render_joint_heatmaps(pose2d, grid[0], grid[1], args.sigma)
        bones = render_bone_heatmaps(pose2d, skel, grid[0], grid[1], args.sigma)
        volume = encode_volume(pose25, grid[0], grid[1], args.cube_size, args.sigma)
        stem = f"sample_{i:04d}"
        for suffix, data in (
            ("joints", joints.data),
            ("bones", bones.data),
            ("volume", volume.data),
        ):
            path = out / f"{stem}.{suffix}.tensor"
            write_tensor(path, data)
            files.append(path.name)
    _write_manifest(
        out / "encode_manifest.json",
        {
            "format": "poselift-encode-v1",
            "dataset": str(args.dataset),
            "n": len(records),
            "sigma": args.sigma,
            "cube_size": args.cube_size,
            "depth_scale_mm": args.depth_scale_mm,
            "grid": list(grid),
            "files": files,
        },
    )
    print(f"encoded {len(records)} samples into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- decode


def cmd_decode(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise FormatError(f"not a directory: {in_dir}")
    volume_files = sorted(in_dir.glob("*.volume.tensor"))
    if not volume_files:
        raise FormatError(f"no *.volume.tensor files in {in_dir}")
    if not args.depth_scale_mm > 0:
        raise UsageError(f"--depth-scale-mm must be positive, got {args.depth_scale_mm}")
    records = load_dataset(args.dataset) if args.dataset else None
    if records is not None and len(records) < len(volume_files):
        raise FormatError(
            f"{len(volume_files)} volumes but only {len(records)} ground-truth records"
        )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    decoded_lines = []
    error_rows = []
    first_pose = None
    grid_shape = None
    for i, path in enumerate(volume_files):
        data = read_tensor(path)
        if data.ndim != 4:
            raise FormatError(f"{path}: expected a (N, C, H, W) volume, got rank {data.ndim}")
        volume = DepthVolume(data=data, depth_scale=args.depth_scale_mm)
        pose = assemble_pose25d(volume, gain=args.gain)
        grid_shape = (data.shape[3], data.shape[2])
        if first_pose is None:
            first_pose = pose
        decoded_lines.append(
            json.dumps(
                {
                    "index": i,
                    "file": path.name,
                    "uv_grid": pose.uv.tolist(),
                    "z_mm": pose.z.tolist(),
                    "depth_scale_mm": args.depth_scale_mm,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
        if records is not None:
            rec = records[i]
            uv_image = _from_grid(pose.uv, rec.camera.width, rec.camera.height, grid_shape)
            for j in range(pose.n_joints):
                error_rows.append(
                    {
                        "sample": i,
                        "joint": j,
                        "u_err_px": float(uv_image[j, 0] - rec.pose2d.coords[j, 0]),
                        "v_err_px": float(uv_image[j, 1] - rec.pose2d.coords[j, 1]),
                        "z_err_mm": float(pose.z[j] - rec.z_root_relative[j]),
                    }
                )
    atomic_write_text(out / "decoded.jsonl", "\n".join(decoded_lines) + "\n")
    assert first_pose is not None and grid_shape is not None
    report.save_pose25d_figure(first_pose.uv, first_pose.z, out / "decoded.png", grid_shape)
    outputs = ["decoded.jsonl", "decoded.png"]
    if records is not None:
        _write_csv(
            out / "roundtrip.csv",
            ["sample", "joint", "u_err_px", "v_err_px", "z_err_mm"],
            error_rows,
        )
        uv_errs = np.hypot(
            [r["u_err_px"] for r in error_rows], [r["v_err_px"] for r in error_rows]
        )
        report.save_metric_histogram(
            uv_errs, out / "roundtrip.png", "decode roundtrip error", "uv error (px)"
        )
        outputs += ["roundtrip.csv", "roundtrip.png"]
    _write_manifest(
        out / "decode_manifest.json",
        {
            "format": "poselift-decode-v1",
            "in_dir": str(in_dir),
            "dataset": str(args.dataset) if args.dataset else None,
            "gain": args.gain,
            "depth_scale_mm": args.depth_scale_mm,
            "n": len(volume_files),
            "outputs": outputs,
        },
    )
    print(f"decoded {len(volume_files)} volumes into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args: argparse.Namespace) -> int:
    skel = _load_skeleton(args.skeleton)
    records = load_dataset(args.dataset)
    if not args.depth_scale_mm > 0:
        raise UsageError(f"--depth-scale-mm must be positive, got {args.depth_scale_mm}")
    inputs, targets = training_arrays(
        records, skel, depth_scale=args.depth_scale_mm, normalize_geodesic=args.normalize_geodesic
    )
    image_width = float(records[0].camera.width)
    try:
        net = init_network(
            skel.n_joints, args.seed, width=args.width, n_blocks=args.blocks,
            dropout_rate=args.dropout,
        )
        cfg = TrainConfig(
            learning_rate=args.lr,
            batch_size=args.batch,
            epochs=args.epochs,
            seed=args.seed,
            dropout_rate=args.dropout,
            lr_decay_epoch=args.lr_decay_epoch,
            lr_decay_factor=args.lr_decay_factor,
        )
    except InputError as exc:
        # these values all come straight from flags
        raise UsageError(str(exc)) from None
    net, history = train(net, inputs, targets, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out / "network.ckpt",
        net,
        extra={
            "image_width": image_width,
            "depth_scale_mm": args.depth_scale_mm,
            "normalize_geodesic": bool(args.normalize_geodesic),
            "seed": args.seed,
            "skeleton": skeleton_to_json_dict(skel),
        },
    )
    _write_csv(out / "history.csv", ["epoch", "lr", "train_loss", "train_mpjpe"], history)
    report.save_history_figure(history, out / "history.png")
    _write_manifest(
        out / "train_manifest.json",
        {
            "format": "poselift-train-v1",
            "dataset": str(args.dataset),
            "seed": args.seed,
            "epochs": args.epochs,
            "lr": args.lr,
            "batch": args.batch,
            "dropout": args.dropout,
            "lr_decay_epoch": args.lr_decay_epoch,
            "lr_decay_factor": args.lr_decay_factor,
            "width": args.width,
            "blocks": args.blocks,
            "normalize_geodesic": bool(args.normalize_geodesic),
            "depth_scale_mm": args.depth_scale_mm,
            "final_train_loss": history[-1]["train_loss"],
            "final_train_mpjpe": history[-1]["train_mpjpe"],
            "outputs": ["network.ckpt", "history.csv", "history.png"],
        },
    )
    print(
        f"trained {args.epochs} epochs; final loss {history[-1]['train_loss']:.3f}, "
        f"final MPJPE {history[-1]['train_mpjpe']:.3f}mm; wrote {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _gt_poses(records, skel: Skeleton, normalize_geodesic: bool) -> list[Pose3D]:
    poses = []
    for rec in records:
        pose = rec.pose3d_camera
        if normalize_geodesic:
            pose = normalize_scale(pose, skel)
        rel = pose.coords - pose.coords[skel.root_index]
        poses.append(Pose3D(coords=rel, frame_tag="root_relative"))
    return poses


def _load_pred_poses(path: Path, n_joints: int) -> list[Pose3D]:
    if not path.exists():
        raise FormatError(f"predictions not found: {path}")
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                coords = np.asarray(doc["coords"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad prediction record: {exc}") from None
            if coords.shape != (n_joints, 3):
                raise FormatError(
                    f"{path}:{lineno}: expected ({n_joints}, 3) coords, got {coords.shape}"
                )
            poses.append(Pose3D(coords=coords, frame_tag="root_relative"))
    if not poses:
        raise FormatError(f"no predictions in {path}")
    return poses


def cmd_eval(args: argparse.Namespace) -> int:
    if (args.pred is None) == (args.checkpoint is None):
        raise UsageError("exactly one of --pred or --checkpoint is required")
    skel = _load_skeleton(args.skeleton)
    records = load_dataset(args.dataset)
    normalize_geodesic = False
    if args.checkpoint is not None:
        net, extra = load_checkpoint(args.checkpoint)
        if net.n_joints != skel.n_joints:
            raise FormatError(
                f"checkpoint has {net.n_joints} joints, skeleton has {skel.n_joints}"
            )
        # evaluate in the model's own target space so normalized and raw
        # checkpoints both see consistent ground truth
        normalize_geodesic = bool(extra.get("normalize_geodesic", False))
        depth_scale = float(extra.get("depth_scale_mm", 1000.0))
        inputs, _ = training_arrays(records, skel, depth_scale=depth_scale)
        outputs = forward(net, inputs, mode="eval")
        preds = [unflatten_pose(row) for row in outputs]
    else:
        preds = _load_pred_poses(Path(args.pred), skel.n_joints)
        if len(preds) != len(records):
            raise FormatError(f"{len(preds)} predictions vs {len(records)} dataset records")
    gts = _gt_poses(records, skel, normalize_geodesic)
    rows, aggregate = evaluate_poses(preds, gts, skel.root_index, args.pck_threshold_mm)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_rows = list(rows) + [
        {
            "index": "mean",
            "mpjpe_mm": aggregate["mpjpe_mm"],
            "pa_mpjpe_mm": aggregate["pa_mpjpe_mm"],
            "pck3d": aggregate["pck3d"],
        }
    ]
    _write_csv(out / "metrics.csv", ["index", "mpjpe_mm", "pa_mpjpe_mm", "pck3d"], csv_rows)
    report.save_metric_histogram(
        np.array([r["mpjpe_mm"] for r in rows]),
        out / "metrics.png",
        "per-sample MPJPE",
        "MPJPE (mm)",
    )
    _write_manifest(
        out / "eval_manifest.json",
        {
            "format": "poselift-eval-v1",
            "dataset": str(args.dataset),
            "pred": str(args.pred) if args.pred else None,
            "checkpoint": str(args.checkpoint) if args.checkpoint else None,
            "normalize_geodesic": normalize_geodesic,
            "pck_threshold_mm": args.pck_threshold_mm,
            "n": len(rows),
            "aggregate": aggregate,
            "outputs": ["metrics.csv", "metrics.png"],
        },
    )
    print(
        f"evaluated {len(rows)} samples: MPJPE {aggregate['mpjpe_mm']:.3f}mm, "
        f"PA-MPJPE {aggregate['pa_mpjpe_mm']:.3f}mm, 3DPCK {aggregate['pck3d']:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args: argparse.Namespace) -> int:
    ops = args.ops.split(",") if args.ops else None
    if ops is not None:
        unknown = [op for op in ops if op not in CHECKS]
        if unknown:
            raise UsageError(
                f"unknown gradcheck ops: {', '.join(unknown)} (valid: {', '.join(CHECKS)})"
            )
    results = run_gradcheck(
        ops=ops,
        trials=args.trials,
        seed=args.seed,
        inject_sign_flip=args.inject_sign_flip,
    )
    failed = False
    for op, err in results.items():
        ok = err <= TOLERANCE
        failed = failed or not ok
        print(f"{op:22s} max_rel_err={err:.3e}  {'PASS' if ok else 'FAIL'}")
    if failed:
        print(f"gradcheck FAILED (tolerance {TOLERANCE})", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"all gradients within tolerance {TOLERANCE}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poselift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pose dataset")
    p.add_argument("--n", type=_positive_int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale-jitter", action="store_true", help="jitter subject scale in [0.8, 1.2]")
    p.add_argument("--skeleton", help="skeleton JSON file (default: built-in 17-joint tree)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="render heatmaps and depth volumes as tensor files")
    p.add_argument("--dataset", required=True, help="samples.jsonl from synth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--cube-size", type=int, default=64, help="depth channels C")
    p.add_argument("--depth-scale-mm", type=float, default=1000.0)
    p.add_argument("--grid", default="64x64", help="heatmap resolution WxH")
    p.add_argument("--limit", type=_positive_int, help="encode only the first N records")
    p.add_argument("--skeleton")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode volumes back to 2.5D poses")
    p.add_argument("--in-dir", required=True, help="directory with *.volume.tensor files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--gain", type=float, default=DEFAULT_GAIN)
    p.add_argument("--depth-scale-mm", type=float, default=1000.0)
    p.add_argument("--dataset", help="ground-truth samples.jsonl for a roundtrip error report")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train the lifting network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.25)
    p.add_argument("--normalize-geodesic", action="store_true",
                   help="rescale target poses to the canonical geodesic length")
    p.add_argument("--width", type=_positive_int, default=1024)
    p.add_argument("--blocks", type=_positive_int, default=5)
    p.add_argument("--lr-decay-epoch", type=int, default=17)
    p.add_argument("--lr-decay-factor", type=float, default=0.1)
    p.add_argument("--depth-scale-mm", type=float, default=1000.0)
    p.add_argument("--skeleton")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--dataset", required=True, help="ground-truth samples.jsonl")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pred", help="predictions JSONL (root-relative mm coords per line)")
    p.add_argument("--checkpoint", help="trained network checkpoint to run over the dataset")
    p.add_argument("--pck-threshold-mm", type=float, default=150.0)
    p.add_argument("--skeleton")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    p.add_argument("--ops", help=f"comma-separated subset of: {', '.join(CHECKS)}")
    p.add_argument("--trials", type=_positive_int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except UsageError as exc:
        print(f"poselift: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"poselift: format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InputError as exc:
        print(f"poselift: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"poselift: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
