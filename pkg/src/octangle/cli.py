"""Command-line entry point for the detection pipeline.

Subcommands: synth, detect-boundary, train-svr, detect-aca, train-mldn,
infer, eval.  Exit codes: 0 success, 1 runtime failure, 2 bad arguments.
Every artifact written to disk gets a JSON sidecar recording the resolved
configuration; timestamps live only in sidecars so reports stay
byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, metrics, pipeline
from .augment import DEFAULT_FACTORS, DEFAULT_OFFSETS, AugmentConfig, IDENTITY_AUGMENT
from .cornea import burn_overlay
from .imagecore import load_sample, read_manifest, write_image
from .mldn import desk_config, load_model, predict_proba, save_model
from .preprocess import column_edge_pairs, gaussian_smooth, gradient_to_image, vertical_gradient
from .svr import load_svr, save_svr
from .synthgen import generate_dataset


def _default_threads() -> int:
    env = os.environ.get("OCTANGLE_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _write_sidecar(artifact_path, command: str, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    sidecar = {
        "command": command,
        "config": cfg,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(f"{artifact_path}.sidecar.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _emit(text: str, out: str, command: str, args: argparse.Namespace) -> None:
    if out == "-":
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    _write_sidecar(out, command, args)


def _boundary_params(args) -> pipeline.BoundaryParams:
    return pipeline.BoundaryParams(
        sigma=args.sigma, rel_threshold=args.rel_threshold, outlier_passes=args.outlier_passes
    )


def _parse_factors(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_shifts(text: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        du, dv = chunk.split(",")
        pairs.append((int(du), int(dv)))
    return tuple(pairs)


def _cmd_synth(args) -> int:
    generate_dataset(n=args.n, out_dir=args.out, class_balance=args.balance, seed=args.seed)
    _write_sidecar(Path(args.out) / "manifest.jsonl", "synth", args)
    print(f"wrote {args.n} samples to {args.out}", file=sys.stderr)
    return 0


def _cmd_detect_boundary(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    params = _boundary_params(args)
    lines = []
    for record in manifest.records:
        img, _ = load_sample(record, root)
        boundary = pipeline.compute_boundary(img, params)
        lines.append(
            json.dumps(
                {
                    "image_path": record.image_path,
                    "upper": list(boundary.upper.coefficients),
                    "bottom": list(boundary.bottom.coefficients),
                    "upper_domain": [boundary.upper.v_min, boundary.upper.v_max],
                    "bottom_domain": [boundary.bottom.v_min, boundary.bottom.v_max],
                },
                sort_keys=True,
            )
        )
        if args.debug_dir:
            dbg = Path(args.debug_dir)
            dbg.mkdir(parents=True, exist_ok=True)
            stem = Path(record.image_path).stem
            grad = vertical_gradient(gaussian_smooth(img, sigma=params.sigma))
            write_image(gradient_to_image(grad), dbg / f"{stem}_gradient.pgm")
            write_image(burn_overlay(img, boundary), dbg / f"{stem}_overlay.pgm")
    _emit("\n".join(lines) + "\n", args.out, "detect-boundary", args)
    return 0


def _cmd_train_svr(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    model = pipeline.train_localizer(
        manifest,
        root,
        stride=args.stride,
        boundary_params=_boundary_params(args),
        C=args.svr_c,
        eps=args.epsilon,
        tol=args.tol,
        max_iter=args.max_iter,
    )
    save_svr(model, args.out)
    _write_sidecar(args.out, "train-svr", args)
    print(f"wrote localizer model to {args.out}", file=sys.stderr)
    return 0


def _cmd_detect_aca(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    model = load_svr(args.svr_model)
    results = pipeline.localization_results(
        manifest, root, model, stride=args.stride, boundary_params=_boundary_params(args)
    )
    lines = [json.dumps(r, sort_keys=True) for r in results]
    _emit("\n".join(lines) + "\n", args.out, "detect-aca", args)
    return 0


def _cmd_train_mldn(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    svr_model = load_svr(args.svr_model)
    samples = pipeline.training_samples(
        manifest, root, svr_model, stride=args.stride, boundary_params=_boundary_params(args)
    )
    if args.augment == "on":
        aug = AugmentConfig(
            intensity_factors=_parse_factors(args.factors),
            shift_offsets=_parse_shifts(args.shifts),
        )
    else:
        aug = IDENTITY_AUGMENT
    batch = pipeline.build_train_batch(samples, args.input_size, aug)
    config = desk_config(input_size=args.input_size, seed=args.seed)
    model = pipeline.train_classifier(
        batch,
        config,
        epochs=args.epochs,
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch,
        phase2_epochs=args.phase2_epochs,
        seed=args.seed + 1,
    )
    save_model(model, args.out)
    _write_sidecar(args.out, "train-mldn", args)
    with open(f"{args.out}.train_log.json", "w", encoding="utf-8") as fh:
        json.dump(model.train_log, fh, indent=2)
        fh.write("\n")
    print(f"wrote classifier model to {args.out}", file=sys.stderr)
    return 0


def _cmd_infer(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    svr_model = load_svr(args.svr_model)
    model = load_model(args.mldn_model)
    input_size = model.config.subnet_global.input_size
    batch, results = pipeline.build_eval_batch(
        manifest, root, svr_model, input_size, stride=args.stride, boundary_params=_boundary_params(args)
    )
    scores = predict_proba(model, batch)
    lines = []
    for entry, p in zip(results, scores):
        label = "closure" if p >= args.threshold else "open"
        lines.append(
            json.dumps(
                {"image_path": entry["image_path"], "p_closure": float(p), "label": label},
                sort_keys=True,
            )
        )
    _emit("\n".join(lines) + "\n", args.out, "infer", args)
    return 0


def _cmd_eval(args) -> int:
    manifest = read_manifest(args.manifest)
    root = args.root or Path(args.manifest).parent
    svr_model = load_svr(args.svr_model)
    model = load_model(args.mldn_model)
    input_size = model.config.subnet_global.input_size
    batch, results = pipeline.build_eval_batch(
        manifest,
        root,
        svr_model,
        input_size,
        stride=args.stride,
        boundary_params=_boundary_params(args),
        intensity_k=args.intensity_k,
    )
    class_report, scores = pipeline.classification_report(
        model, batch, n_resamples=args.resamples, seed=args.seed
    )
    report = {
        "seed": args.seed,
        "localization": pipeline.localization_summary(results, tol_px=args.tol_px),
        "classification": class_report,
    }
    _emit(json.dumps(report, sort_keys=True, indent=2) + "\n", args.out, "eval", args)
    if args.roc_csv:
        curve, _ = metrics.roc_auc(scores, batch.labels)
        with open(args.roc_csv, "w", encoding="utf-8") as fh:
            fh.write(metrics.roc_csv(curve))
        _write_sidecar(args.roc_csv, "eval", args)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="BLAS/worker thread cap (or OCTANGLE_THREADS; default 1)")
    common.add_argument("--config", default=None, help="JSON file with default flag values")

    boundary = argparse.ArgumentParser(add_help=False)
    boundary.add_argument("--sigma", type=float, default=2.0)
    boundary.add_argument("--rel-threshold", type=float, default=0.05)
    boundary.add_argument("--outlier-passes", type=int, default=1)
    boundary.add_argument("--stride", type=int, default=10)
    boundary.add_argument("--root", default=None, help="image root (default: manifest directory)")

    parser = argparse.ArgumentParser(prog="octangle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("detect-boundary", parents=[common, boundary], help="fit corneal boundary curves")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--debug-dir", default=None, help="dump gradient maps and boundary overlays")
    p.set_defaults(func=_cmd_detect_boundary)

    p = sub.add_parser("train-svr", parents=[common, boundary], help="train the window regressor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svr-c", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=_cmd_train_svr)

    p = sub.add_parser("detect-aca", parents=[common, boundary], help="localize the chamber angle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--svr-model", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_detect_aca)

    p = sub.add_parser("train-mldn", parents=[common, boundary], help="train the multi-level classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--svr-model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--phase2-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--input-size", type=int, default=112)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", choices=("on", "off"), default="off")
    p.add_argument("--factors", default=",".join(str(f) for f in DEFAULT_FACTORS))
    p.add_argument("--shifts", default=";".join(f"{du},{dv}" for du, dv in DEFAULT_OFFSETS))
    p.set_defaults(func=_cmd_train_mldn)

    p = sub.add_parser("infer", parents=[common, boundary], help="per-image closure probability")
    p.add_argument("--manifest", required=True)
    p.add_argument("--svr-model", required=True)
    p.add_argument("--mldn-model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", parents=[common, boundary], help="metrics report on a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--svr-model", required=True)
    p.add_argument("--mldn-model", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--roc-csv", default=None)
    p.add_argument("--resamples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed, recorded in the report")
    p.add_argument("--tol-px", type=int, default=10)
    p.add_argument("--intensity-k", type=float, default=None,
                   help="evaluate on an intensity-perturbed copy of the images")
    p.set_defaults(func=_cmd_eval)

    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Config-file values fill in flags not given on the command line."""
    if not args.config:
        return
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"config key {key!r} is not a flag of this subcommand")
        flag = "--" + dest.replace("_", "-")
        explicit = any(t == flag or t.startswith(flag + "=") for t in argv)
        if not explicit:
            setattr(args, dest, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config_file(args, argv)
        threads = getattr(args, "threads", 1)
        with threadpool_limits(limits=threads):
            return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
