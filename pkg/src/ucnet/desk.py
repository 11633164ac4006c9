"""Desk-scale detection experiments on synthetic textured covers.

Covers are fabricated with :func:`ucnet.stegosim.synthetic_cover`, stegos
and the manifest are produced through the ``simulate`` subcommand, and the
desk configuration is trained with the recipe below.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from .channelrep import Domain
from .cli import run as cli_run
from .errors import UcnetError
from .imageio import write_ppm
from .jpegcodec import encode_jpeg
from .model import DESK_CONFIG, Model
from .stegosim import synthetic_cover, ternary_entropy
from .traineval import TrainConfig, read_manifest, train

SPATIAL_RECIPE = TrainConfig(epochs=10, batch_pairs=8, lr=0.01, lr_decay=0.5, lr_step_epochs=6,
                             weight_decay=5e-4, seed=0, eval_fraction=0.2)
JPEG_RECIPE = dataclasses.replace(SPATIAL_RECIPE, epochs=15)


def fabricate_covers(out_dir, n: int, domain, size: int = 64, seed: int = 0, quality: int = 75) -> list[Path]:
    """Write ``n`` synthetic covers: binary PPM for spatial, baseline JPEG at ``quality`` otherwise."""
    domain = Domain.parse(domain)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        img = synthetic_cover(rng, size)
        if domain is Domain.SPATIAL_RGB:
            path = out_dir / f"cover{i:04d}.ppm"
            write_ppm(img, path)
        else:
            path = out_dir / f"cover{i:04d}.jpg"
            path.write_bytes(encode_jpeg(img, quality)[0])
        paths.append(path)
    return paths


def make_dataset(work_dir, n: int, domain, beta: float, size: int = 64, seed: int = 0,
                 quality: int = 75) -> Path:
    """Covers, stegos at change rate ``beta`` and a manifest under ``work_dir``; returns the manifest."""
    domain = Domain.parse(domain)
    work = Path(work_dir)
    tag = "spatial" if domain is Domain.SPATIAL_RGB else "jpeg"
    fabricate_covers(work / "covers", n, domain, size, seed, quality)
    manifest = work / "pairs.tsv"
    code = cli_run(["simulate", "--cover-dir", str(work / "covers"), "--domain", tag,
                    "--alpha", repr(ternary_entropy(beta)), "--seed", str(seed + 1),
                    "--out-dir", str(work / "stegos"), "--manifest", str(manifest)])
    if code != 0:
        raise UcnetError(f"simulate failed with exit code {code}")
    return manifest


@dataclasses.dataclass
class ExperimentResult:
    model: Model
    history: list
    val_accuracy: float
    val_p_e: float
    seconds: float


def run_experiment(work_dir, domain, beta: float, pairs: int = 200, recipe: TrainConfig | None = None,
                   size: int = 64, seed: int = 0, progress=None) -> ExperimentResult:
    """Fabricate the dataset, train the desk config, and report the selected epoch's validation scores."""
    domain = Domain.parse(domain)
    if recipe is None:
        recipe = SPATIAL_RECIPE if domain is Domain.SPATIAL_RGB else JPEG_RECIPE
    manifest = make_dataset(work_dir, pairs, domain, beta, size, seed)
    start = time.perf_counter()
    model, history = train(read_manifest(manifest), recipe, dataclasses.replace(DESK_CONFIG, domain=domain),
                           progress=progress)
    best = min(history, key=lambda e: (e["val_p_e"], -e["val_accuracy"]))
    return ExperimentResult(model, history, best["val_accuracy"], best["val_p_e"], time.perf_counter() - start)
