"""End-to-end run of the pipeline through the CLI: train, build, distort, score, evaluate."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from biq import samples
from biq.autoencoder import Checkpoint
from biq.cli import main
from biq.distortions import Manifest
from biq.imageio import write_png
from biq.metrics import EvaluationReport, evaluate


@dataclass
class PipelineRun:
    root: Path
    checkpoint: Path
    model: Path
    manifest: Path
    report: Path
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds.values())

    def artifacts(self) -> dict[str, Path]:
        return {"checkpoint": self.checkpoint, "model": self.model, "manifest": self.manifest, "report": self.report}

    def evaluation(self) -> EvaluationReport:
        return evaluate(Manifest.read(self.manifest))

    def training(self) -> Checkpoint:
        return Checkpoint.from_bytes(self.checkpoint.read_bytes())


def stage(entries, directory: Path) -> Path:
    """Decode bundled sample photographs and store their luma as 16-bit PNG."""
    directory.mkdir(parents=True, exist_ok=True)
    for image_id, image in samples.load(entries):
        write_png(directory / f"{image_id}.png", image)
    return directory


def _call(argv: list[str]) -> None:
    code = main(argv)
    if code != 0:
        raise RuntimeError(f"biq {argv[0]} exited with status {code}")


def run_pipeline(
    root: str | Path,
    overrides: list[str] | None = None,
    train=samples.TRAIN,
    natural=samples.NATURAL,
    held_out=samples.HELD_OUT,
    seed: int = 0,
) -> PipelineRun:
    root = Path(root)
    dirs = {name: stage(entries, root / "images" / name) for name, entries in
            (("train", train), ("natural", natural), ("held_out", held_out))}  # fmt: skip
    sets = [arg for kv in overrides or [] for arg in ("--set", kv)]
    run = PipelineRun(
        root,
        checkpoint=root / "net.ckpt",
        model=root / "natural.model",
        manifest=root / "corpus" / "manifest.csv",
        report=root / "report.csv",
    )

    steps = [
        ("train", ["train", "--images", str(dirs["train"]), "--out", str(run.checkpoint)] + sets),
        ("build-model", ["build-model", "--images", str(dirs["natural"]), "--ckpt", str(run.checkpoint),
                         "--out", str(run.model)] + sets),
        ("distort", ["distort", "--images", str(dirs["held_out"]), "--out", str(run.manifest.parent),
                     "--seed", str(seed)] + sets),
        ("score", ["score", "--model", str(run.model), "--ckpt", str(run.checkpoint), "--input", str(run.manifest)]),
        ("evaluate", ["evaluate", "--manifest", str(run.manifest), "--out", str(run.report)]),
    ]  # fmt: skip
    for name, argv in steps:
        start = time.perf_counter()
        _call(argv)
        run.seconds[name] = time.perf_counter() - start
    return run
