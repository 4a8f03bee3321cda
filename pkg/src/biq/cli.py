"""Command-line entry point: ``biq train|build-model|score|distort|evaluate``.

Set ``BIQ_NUM_THREADS`` to cap the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from biq import __version__
from biq.autoencoder import Checkpoint, train
from biq.config import RunConfig, load_config
from biq.distortions import Manifest, generate_benchmark
from biq.imageio import atomic_write_bytes, atomic_write_text, list_images, load_folder, read_image
from biq.metrics import evaluate
from biq.natural_model import NaturalModel, build_natural_model, score_image


class CommandError(Exception):
    pass


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    return load_config(args.config, overrides)


def _load_images(directory, min_size: int) -> list[tuple[str, np.ndarray]]:
    try:
        images = load_folder(directory, min_size=min_size)
    except FileNotFoundError as exc:
        raise CommandError(str(exc)) from None
    except OSError as exc:
        raise CommandError(f"cannot decode image: {exc}") from None
    if not images:
        raise CommandError(f"{directory}: no usable images (need PNG/PGM/PPM of at least {min_size}x{min_size})")
    return images


def _read_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise CommandError(f"cannot read checkpoint: {exc}") from None


def _read_model(path) -> NaturalModel:
    try:
        return NaturalModel.from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise CommandError(f"cannot read natural model: {exc}") from None


def cmd_train(args) -> int:
    cfg = _config(args)
    net = cfg.network
    images = _load_images(args.images, net.patch_size)
    print(f"training on {len(images)} image(s): {cfg.describe()}")

    def report(epoch, loss):
        print(f"epoch {epoch + 1}/{net.epochs} loss {loss:.6f}", flush=True)

    ckpt = train([im for _, im in images], net, on_epoch=report)
    atomic_write_bytes(args.out, ckpt.to_bytes())
    print(f"wrote {args.out} (final loss {ckpt.final_loss:.6f})")
    return 0


def cmd_build_model(args) -> int:
    cfg = _config(args)
    ckpt = _read_checkpoint(args.ckpt)
    images = _load_images(args.images, ckpt.config.patch_size)
    model = build_natural_model(
        ckpt,
        [im for _, im in images],
        cap=cfg.cap,
        seed=cfg.model_seed,
        grid=cfg.grid,
        bandwidth_factor=cfg.bandwidth_factor,
        bandwidth_floor=cfg.bandwidth_floor,
    )
    atomic_write_bytes(args.out, model.to_bytes())
    print(f"wrote {args.out}: {len(model.channels)} channel KDEs from {len(images)} image(s)")
    return 0


def _score_path(model, ckpt, network, path) -> tuple[float, float]:
    try:
        image = read_image(path)
    except OSError as exc:
        raise CommandError(f"cannot decode {path}: {exc}") from None
    start = time.perf_counter()
    value = score_image(model, ckpt, image, network=network, verify=False).value
    return value, time.perf_counter() - start


def cmd_score(args) -> int:
    model = _read_model(args.model)
    ckpt = _read_checkpoint(args.ckpt)
    model.check_checkpoint(ckpt)
    network = ckpt.network()
    source = Path(args.input)
    if not source.exists():
        raise CommandError(f"{source}: no such file")
    if source.suffix.lower() != ".csv":
        value, _ = _score_path(model, ckpt, network, source)
        print(f"{value!r}")
        return 0

    manifest = Manifest.read(source)
    seconds = []
    for row in manifest.rows:
        row.score, dt = _score_path(model, ckpt, network, manifest.resolve(row, source.parent))
        seconds.append(dt)
    out = Path(args.out) if args.out else source
    manifest.comments = [c for c in manifest.comments if not c.startswith("scored with")]
    manifest.comments.append(f"scored with model={Path(args.model).name} checkpoint={Path(args.ckpt).name}")
    manifest.write(out)
    # wall-clock timings vary run to run, so they live beside the manifest
    timing = {"rows": len(seconds), "mean_seconds": float(np.mean(seconds)) if seconds else None}
    atomic_write_text(timing_path(out), json.dumps(timing) + "\n")
    print(f"scored {len(seconds)} image(s) -> {out} (mean {timing['mean_seconds']:.3f} s/image)")
    return 0


def timing_path(manifest_path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.name + ".timing.json")


def cmd_distort(args) -> int:
    cfg = _config(args)
    seed = cfg.distort_seed if args.seed is None else args.seed
    images = _load_images(args.images, 1)
    try:
        manifest = generate_benchmark(images, args.out, seed=seed, schedule=cfg.schedule)
    except OSError as exc:
        raise CommandError(f"cannot write corpus: {exc}") from None
    manifest.comments.append(f"config: {cfg.describe()}")
    manifest_path = Path(args.out) / "manifest.csv"
    manifest.write(manifest_path)
    print(f"wrote {len(manifest)} images and {manifest_path}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = Manifest.read(args.manifest)
    report = evaluate(manifest)
    tp = timing_path(args.manifest)
    if tp.exists():
        report.seconds_per_image = json.loads(tp.read_text()).get("mean_seconds")
    if report.incomplete:
        lines = [f"  {image_id}/{fam}: {why}" for image_id, fam, why in report.incomplete]
        print("incomplete groups:\n" + "\n".join(lines), file=sys.stderr)
    if args.out:
        header = "".join(f"# {c}\n" for c in manifest.comments)
        atomic_write_text(args.out, header + report.to_csv())
    print(report.summary())
    return 1 if report.incomplete else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"biq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return p

    p = with_config(sub.add_parser("train", help="train the autoencoder on pristine images"))
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("build-model", help="fit the natural model"))
    p.add_argument("--images", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("score", help="score one image or every row of a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="image file or manifest .csv")
    p.add_argument("--out", help="output manifest (default: update in place)")
    p.set_defaults(func=cmd_score)

    p = with_config(sub.add_parser("distort", help="generate the distortion benchmark"))
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("evaluate", help="correlate scores with distortion levels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("BIQ_NUM_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
