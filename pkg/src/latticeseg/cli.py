"""Command-line interface: synth, train, eval, predict, gradcheck, fusion-compare."""

import argparse
import csv
import os
import sys

import numpy as np

from latticeseg import data, synth
from latticeseg.config import Config, load_config
from latticeseg.metrics import evaluate
from latticeseg.model import forward_full, init_params, load_model, predict_labels, save_model
from latticeseg.tensor import dtype_for
from latticeseg.training import grad_check, train

GRADCHECK_TOLERANCE = 1e-4


def _load_config(args):
    config = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    return config


def _load_samples(manifest_path, config):
    _, samples = data.load_dataset(manifest_path)
    dtype = dtype_for(config.precision)
    for s in samples:
        s.image = s.image.astype(dtype)
    return samples


def cmd_synth(args):
    samples, manifest = synth.generate_synthetic(args.kind, args.count, args.size, args.seed)
    path = data.write_dataset(samples, manifest, args.out)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def cmd_train(args):
    config = _load_config(args)
    samples = _load_samples(args.data, config)
    result = train(
        samples,
        config,
        out_dir=args.out,
        progress=lambda row: print(
            f"epoch {row['epoch']:4d}  loss {row['loss']:.5f}  "
            f"pix {row['pixel_acc']:.4f}  cls {row['class_acc']:.4f}  lr {row['lr']:.2e}"
        ),
    )
    print(f"done in {result.elapsed:.1f}s; params in {args.out}")
    return 0


def cmd_eval(args):
    config = _load_config(args)
    samples = _load_samples(args.data, config)
    params = load_model(args.params, config)
    report = evaluate(params, config, samples)
    print(f"pixel accuracy: {report.pixel_accuracy:.4f}")
    print(f"class accuracy: {report.class_accuracy:.4f}")
    for idx, acc in enumerate(report.per_class):
        if not np.isnan(acc):
            print(f"  class {idx}: {acc:.4f}")
    return 0


def cmd_predict(args):
    config = _load_config(args)
    params = load_model(args.params, config)
    image = data.load_image(args.image).astype(dtype_for(config.precision))
    result = forward_full(image, params, config)
    labels = predict_labels(result.probs)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    data.save_labels(os.path.join(args.out, f"{stem}_labels.png"), labels)
    if args.palette:
        manifest = data.load_manifest(args.palette)
        data.save_color_labels(
            os.path.join(args.out, f"{stem}_color.png"), labels, manifest.palette
        )
    if args.export_attention:
        for q in range(result.fusion.weights.shape[2]):
            data.save_weight_map(
                os.path.join(args.out, f"{stem}_attention_level{q}.png"),
                result.fusion.weights[:, :, q],
            )
    print(f"prediction written to {args.out}")
    return 0


def cmd_gradcheck(args):
    config = _load_config(args)
    rng = np.random.default_rng(config.seed)
    size = args.size or config.gradcheck_size
    dtype = dtype_for("double")
    image = rng.uniform(0.05, 0.95, size=(size, size, config.image_channels)).astype(dtype)
    labels = rng.integers(0, config.class_count, size=(size, size)).astype(np.uint8)
    params = init_params(config.replace(precision="double"))
    report = grad_check(params, image, labels, config.replace(precision="double"),
                        per_family=args.per_family, seed=config.seed)
    print(report.format_table())
    print(f"max relative error: {report.max_error:.3e}")
    return 0 if report.max_error <= GRADCHECK_TOLERANCE else 1


def cmd_fusion_compare(args):
    config = _load_config(args)
    train_samples = _load_samples(args.train, config)
    test_samples = _load_samples(args.test, config)
    modes = ("average", "max", "attention")
    rows = []
    for seed in range(args.seeds):
        for mode in modes:
            run_config = config.replace(fusion=mode, seed=config.seed + seed)
            result = train(train_samples, run_config)
            report = evaluate(result.params, run_config, test_samples)
            rows.append(
                {
                    "seed": seed,
                    "mode": mode,
                    "pixel_acc": report.pixel_accuracy,
                    "class_acc": report.class_accuracy,
                }
            )
            print(
                f"seed {seed}  {mode:<9}  pixel {report.pixel_accuracy:.4f}  "
                f"class {report.class_accuracy:.4f}"
            )
    print(f"\n{'Method':<12}{'Pixel Accuracy':>16}{'Class Accuracy':>16}")
    for mode in modes:
        pix = np.mean([r["pixel_acc"] for r in rows if r["mode"] == mode])
        cls = np.mean([r["class_acc"] for r in rows if r["mode"] == mode])
        print(f"{mode:<12}{pix:>15.4f}{cls:>16.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "fusion_compare.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["seed", "mode", "pixel_acc", "class_acc"])
            writer.writeheader()
            writer.writerows(rows)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="latticeseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("kind", choices=("longrange", "multiscale"))
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset manifest")
    p.add_argument("--config")
    p.add_argument("--params", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label one image with a checkpoint")
    p.add_argument("--config")
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--palette", help="manifest supplying the color palette")
    p.add_argument("--export-attention", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--per-family", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fusion-compare", help="train all fusion modes and tabulate accuracy")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fusion_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single diagnostic line per contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
