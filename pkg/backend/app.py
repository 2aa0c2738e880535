"""Command-line entry point.

    weak-rbox gen-data --out data/shapes
    weak-rbox train --mode hbox --config configs/default.toml
    weak-rbox predict --checkpoint runs/default/model.wrbx --images data/shapes/images --out dets
    weak-rbox eval --detections dets --annotations data/shapes/test.json

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from dataio import (
    AnnotationFormat,
    AnnotationSet,
    LabelKind,
    degrade,
    eval_ap,
    eval_summary,
    inject_noise,
    load_annotations,
    load_image,
    read_detections,
    save_annotations,
    save_image,
    write_detections,
)
from dataio.images import draw_detections
from initialize_app import SupervisionMode, SymmetryConfig, load_config, prepare_runtime
from synthesis import gen_dataset
from training import AblationStudy, detect_images, resolve_model, run_ablation, train, verify_symmetry
from training.inference import DEFAULT_NMS_THRESH, DEFAULT_SCORE_THRESH
from utils.errors import ConfigError, DataError, NumericalError, UndefinedPhaseError
from utils.initialize_logger import initialize_logger

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "output", None):
        overrides["output_dir"] = str(args.output)
    if getattr(args, "epochs", None):
        overrides["epochs"] = args.epochs
    data = {}
    for flag, key in (("train_annotations", "train_annotations"), ("test_annotations", "test_annotations"),
                      ("image_dir", "image_dir"), ("format", "annotation_format")):
        value = getattr(args, flag, None)
        if value:
            data[key] = str(value)
    if data:
        overrides["data"] = data
    return overrides


def _write_split(images: List[np.ndarray], annotations: AnnotationSet, out: Path, name: str,
                 fmt: AnnotationFormat) -> Path:
    for image, anns in zip(images, annotations):
        save_image(out / "images" / f"{anns.image_id}.png", image)
    target = out / (f"{name}.json" if fmt is AnnotationFormat.INTERNAL else name)
    return save_annotations(annotations, target, fmt)


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=_train_overrides(args))
    rng = prepare_runtime(cfg.seed)
    out = Path(args.out)
    fmt = AnnotationFormat(args.out_format)
    train_count = args.train if args.train is not None else cfg.data.train_images
    test_count = args.test if args.test is not None else cfg.data.test_images
    for name, count in (("train", train_count), ("test", test_count)):
        if not count:
            continue
        images, annotations = gen_dataset(cfg.data.scene, count, rng, prefix=name)
        path = _write_split(images, annotations, out, name, fmt)
        print(f"{name}: {count} images, {annotations.num_instances()} objects -> {path}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed or 0)
    exact = load_annotations(args.input, args.input_format)
    target = LabelKind(args.to)
    converted = exact if target is LabelKind.RBOX else degrade(exact, target)
    if args.noise:
        converted = inject_noise(converted, args.noise, rng, reference=exact)
    path = save_annotations(converted, args.output, args.output_format)
    print(f"Wrote {converted.num_instances()} {target.value} labels in {len(converted)} images to {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=_train_overrides(args))
    result = train(cfg)
    ap50 = "-" if result.final_ap50 is None else f"{result.final_ap50:.4f}"
    print(f"Checkpoint: {result.checkpoint_path}")
    print(f"Metrics:    {result.metrics_path}")
    print(f"AP50:       {ap50}")
    return EXIT_OK


def _image_files(images: Path) -> List[Path]:
    files = sorted(images.glob("*.png")) if images.is_dir() else [images]
    if not files or not all(f.exists() for f in files):
        raise DataError(f"No PNG images found at {images}")
    return files


def cmd_predict(args: argparse.Namespace) -> int:
    model = resolve_model(args.checkpoint)
    files = _image_files(Path(args.images))
    images = [load_image(f) for f in files]
    results = detect_images(model, images, args.score_thresh, args.nms_thresh)
    detections = {f.stem: dets for f, dets in zip(files, results)}
    written = write_detections(detections, model.config.class_names, args.out)
    if args.draw:
        draw_dir = Path(args.draw)
        draw_dir.mkdir(parents=True, exist_ok=True)
        for file, image, dets in zip(files, images, results):
            draw_detections(image, dets).save(draw_dir / f"{file.stem}.png")
    total = sum(len(d) for d in results)
    print(f"{total} detections in {len(files)} images -> {len(written)} files in {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    gts = load_annotations(args.annotations, args.format)
    detections = read_detections(args.detections, gts.classes)
    if args.iou is not None:
        report = eval_ap(detections, gts, args.iou)
        print(report.table.to_string())
        print(f"mAP@{args.iou:.2f}: {report.mean_ap:.4f}")
        if report.excluded:
            print(f"excluded (no ground truth): {', '.join(report.excluded)}")
        return EXIT_OK
    summary = eval_summary(detections, gts)
    print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


def cmd_verify_symmetry(args: argparse.Namespace) -> int:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.asymmetric:
        overrides["asymmetric"] = True
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    cfg = load_config(args.config, section="symmetry", model=SymmetryConfig, overrides=overrides)
    report = verify_symmetry(cfg)
    print(json.dumps(report.summary(), indent=1))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=_train_overrides(args))
    table = run_ablation(args.study, cfg, args.output)
    print(table.to_string(index=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with [train] / [symmetry] tables")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="weak-rbox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    modes = [m.value for m in SupervisionMode]
    formats = [f.value for f in AnnotationFormat]

    p = sub.add_parser("gen-data", parents=[common], help="Render synthetic scenes with exact RBox labels")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train", type=int, help="Training images (default from config)")
    p.add_argument("--test", type=int, help="Held-out images (default from config)")
    p.add_argument("--format", dest="out_format", choices=formats, default=AnnotationFormat.INTERNAL.value)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("convert", parents=[common], help="Degrade box labels to HBoxes or points, with noise")
    p.add_argument("input", type=Path)
    p.add_argument("--to", choices=[k.value for k in LabelKind], required=True)
    p.add_argument("--noise", type=float, default=0.0, help="Noise level sigma in [0, 1)")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--input-format", choices=formats, default=AnnotationFormat.INTERNAL.value)
    p.add_argument("--output-format", choices=formats, default=AnnotationFormat.INTERNAL.value)
    p.set_defaults(handler=cmd_convert)

    p = sub.add_parser("train", parents=[common], help="Train a detector")
    p.add_argument("--mode", choices=modes)
    p.add_argument("--output", type=Path, help="Run directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-annotations", type=Path)
    p.add_argument("--test-annotations", type=Path)
    p.add_argument("--image-dir", type=Path)
    p.add_argument("--format", choices=formats)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="Detect objects and write per-class detection files")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True, help="A PNG file or a directory of PNG files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--draw", type=Path, help="Directory for overlay images")
    p.add_argument("--score-thresh", type=float, default=DEFAULT_SCORE_THRESH)
    p.add_argument("--nms-thresh", type=float, default=DEFAULT_NMS_THRESH)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="AP of detection files against box annotations")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--format", choices=formats, default=AnnotationFormat.INTERNAL.value)
    p.add_argument("--iou", type=float, help="Single IoU threshold; default reports AP50, AP75 and AP50:95")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("verify-symmetry", parents=[common],
                       help="Check that consistency training alone recovers symmetry axes")
    p.add_argument("--asymmetric", action="store_true", help="Run the asymmetric control")
    p.add_argument("--iterations", type=int)
    p.set_defaults(handler=cmd_verify_symmetry)

    p = sub.add_parser("ablate", parents=[common], help="Train every variant of one study and compare AP50")
    p.add_argument("study", choices=[s.value for s in AblationStudy])
    p.add_argument("--mode", choices=modes)
    p.add_argument("--epochs", type=int)
    p.add_argument("--output", type=Path, help="Parent directory of the study")
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    initialize_logger(log_level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        logging.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        logging.error(f"Data error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, UndefinedPhaseError) as e:
        dump = getattr(e, "dump_path", None)
        logging.error(f"Numerical failure: {e}" + (f" (diagnostics: {dump})" if dump else ""))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
