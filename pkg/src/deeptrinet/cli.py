"""Command line entry point: ``grid``, ``train``, ``predict`` and ``evaluate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import (
    DeepTriNetError,
    TrainConfig,
    ValidationError,
    load_class_map,
    load_config,
    validate_config,
)
from .preprocess import IMAGE_SUFFIXES, build_manifest, read_rgb, write_rgb

log = logging.getLogger("deeptrinet")


def _rasters(path: Path) -> dict[str, Path]:
    if path.is_file():
        return {path.stem: path}
    return {p.stem: p for p in sorted(path.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_grid(args) -> int:
    from .tiling import extract_patches, pad_image, plan_grid, write_patches

    images, masks = _rasters(Path(args.image)), _rasters(Path(args.mask))
    out = Path(args.out)
    stems = sorted(images.keys() & masks.keys())
    for stem in sorted(images.keys() ^ masks.keys()):
        log.warning("%s has no counterpart; skipped", stem)
    if not stems:
        raise DeepTriNetError("no paired rasters to grid")
    for stem in stems:
        image, mask = read_rgb(images[stem]), read_rgb(masks[stem])
        if image.shape != mask.shape:
            raise DeepTriNetError(f"{stem}: image {image.shape} and mask {mask.shape} differ")
        spec = plan_grid(image.shape[0], image.shape[1], args.patch, args.stride)
        # one spec for both keeps image and mask patches aligned
        write_patches(extract_patches(pad_image(image, spec), spec), spec, out / "images", stem)
        write_patches(extract_patches(pad_image(mask, spec), spec), spec, out / "masks", stem)
        log.info("%s: %dx%d -> %d patches", stem, image.shape[0], image.shape[1], spec.num_patches)
    cmap = load_class_map(args.classes) if args.classes else None
    tcfg = TrainConfig(validation_fraction=args.val_fraction, seed=args.seed)
    manifest = build_manifest(out / "images", out / "masks", cmap, tcfg)
    manifest.write(out / "manifest.tsv")
    print(out / "manifest.tsv")
    return 0


def cmd_train(args) -> int:
    from .model import build_model
    from .preprocess import DatasetManifest
    from .train import export_history, fit

    cmap = load_class_map(args.classes)
    overrides = {"epochs": args.epochs, "seed": args.seed}
    mcfg, tcfg = load_config(args.config, overrides, defaults={"num_classes": cmap.num_classes})
    if mcfg.num_classes != cmap.num_classes:
        raise ValidationError(f"config num_classes {mcfg.num_classes} != {cmap.num_classes} classes in {args.classes}")
    validate_config(mcfg, tcfg)
    manifest = DatasetManifest.read(args.manifest)
    model = build_model(mcfg, seed=tcfg.seed)
    log.info("model has %d parameters", model.num_parameters())
    out = Path(args.out)
    result = fit(model, manifest, tcfg, cmap, out, strict_colors=not args.lenient)
    export_history(result.history, out / "history.csv")
    with open(out / "checkpoints.log", "w") as fh:
        for epoch, value in result.checkpoints:
            fh.write(f"{epoch}\t{tcfg.checkpoint_metric}\t{value!r}\n")
    print(result.best_checkpoint)
    return 0


def cmd_predict(args) -> int:
    import numpy as np

    from .evaluate import predict_image
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    cmap = load_class_map(args.classes)
    image = read_rgb(args.image)
    pred = predict_image(
        model, image, cmap, args.stride,
        emit_patches=args.emit_patches, basename=Path(args.image).stem,
    )
    write_rgb(pred.colors, args.out)
    if args.probs:
        np.save(args.probs, pred.probs.astype(np.float32))
    print(args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import evaluate_image
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    cmap = load_class_map(args.classes)
    report = evaluate_image(
        model, read_rgb(args.image), read_rgb(args.mask), cmap, args.stride,
        ignore_background=args.ignore_background, strict=not args.lenient,
    )
    text_path, _ = report.write(args.report)
    sys.stdout.write(text_path.read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deeptrinet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="cut rasters and masks into aligned patches")
    p.add_argument("--image", required=True, help="raster file or directory")
    p.add_argument("--mask", required=True, help="mask file or directory (same basenames)")
    p.add_argument("--patch", type=int, default=256)
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", help="class-map file recorded in the manifest")
    p.add_argument("--val-fraction", type=float, default=TrainConfig.validation_fraction)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("train", help="train on a patch manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lenient", action="store_true", help="map unknown mask colors to class 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="smooth tiled prediction of a full raster")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--stride", type=int, default=None, help="default: half the patch size")
    p.add_argument("--out", required=True, help="color mask PNG")
    p.add_argument("--emit-patches", help="directory for per-patch prediction tiles")
    p.add_argument("--probs", help="optional .npy file for the probability map")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="pixel-wise metrics against a ground-truth mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--ignore-background", action="store_true", help="leave class 0 out of macro means")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (DeepTriNetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
