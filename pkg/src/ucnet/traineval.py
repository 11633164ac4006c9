"""Pair-constrained training, evaluation metrics and cover/stego manifests."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channelrep import ColorPlanes, Domain, split_rgb
from .errors import ConfigError, ImageFormatError, JpegError, ManifestError
from .imageio import read_ppm
from .jpegcodec import decompress_to_ycbcr, read_jpeg
from .model import Model, UcnetConfig, build_model
from .nncore import Mode, softmax, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairRecord:
    cover_path: str
    stego_path: str
    domain: Domain
    alpha: float
    seed: int

    def line(self) -> str:
        return "\t".join([self.cover_path, self.stego_path, self.domain.value, repr(float(self.alpha)),
                          str(self.seed)])


def read_manifest(path) -> list[PairRecord]:
    """Parse ``cover<TAB>stego<TAB>domain<TAB>alpha<TAB>seed`` lines. Relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"manifest {path} line {lineno}: expected 5 tab-separated fields")
        cover, stego, domain, alpha, seed = parts
        try:
            records.append(PairRecord(str(base / cover), str(base / stego), Domain.parse(domain),
                                      float(alpha), int(seed)))
        except (ValueError, ConfigError) as exc:
            raise ManifestError(f"manifest {path} line {lineno}: {exc}") from None
    return records


def write_manifest(records: Sequence[PairRecord], path) -> None:
    Path(path).write_text("".join(r.line() + "\n" for r in records), encoding="utf-8")


def _as_records(manifest) -> list[PairRecord]:
    if isinstance(manifest, (str, Path)):
        records = read_manifest(manifest)
        name = str(manifest)
    else:
        records = list(manifest)
        name = "<records>"
    if not records:
        raise ManifestError(f"manifest {name} is empty")
    return records


def load_planes(path, domain: Domain) -> ColorPlanes:
    """Decode one image file into the color planes of its embedding domain."""
    try:
        if domain is Domain.SPATIAL_RGB:
            return split_rgb(read_ppm(path))
        return decompress_to_ycbcr(read_jpeg(path))
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc.strerror or exc}") from None
    except (ImageFormatError, JpegError) as exc:
        raise ManifestError(f"cannot decode {path}: {exc}") from None


def _augment(planes: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    out = planes[:, :, ::-1] if flip else planes
    return np.rot90(out, rot, axes=(1, 2))


class PairDataset:
    """Channel representations of cover/stego pairs, row ``2i`` cover and ``2i + 1`` stego."""

    def __init__(self, records: Sequence[PairRecord], model: Model, workers: int = 1, keep_planes: bool = False):
        self.records = list(records)
        self.model = model
        paths = [(r.cover_path, r.domain) for r in self.records] + [(r.stego_path, r.domain) for r in self.records]
        for r in self.records:
            if r.domain is not model.config.domain:
                raise ManifestError(f"pair {r.cover_path} is {r.domain.value}, model expects "
                                    f"{model.config.domain.value}")

        def load(item):
            planes = load_planes(*item)
            return planes, (None if keep_planes else model.preprocess(planes).maps)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                loaded = list(pool.map(load, paths))
        else:
            loaded = [load(p) for p in paths]
        n = len(self.records)
        shapes = {pl.planes.shape for pl, _ in loaded}
        for i, r in enumerate(self.records):
            if loaded[i][0].planes.shape != loaded[n + i][0].planes.shape:
                raise ManifestError(f"cover {r.cover_path} and stego {r.stego_path} differ in size")
        if len(shapes) != 1:
            raise ManifestError(f"all images must share one size, found {sorted(shapes)}")
        self.planes = None
        self.reps = None
        if keep_planes:
            self.planes = np.stack([pl.planes for pl, _ in loaded])
        else:
            self.reps = np.empty((2 * n,) + loaded[0][1].shape, dtype=model.dtype)
            for i in range(n):
                self.reps[2 * i] = loaded[i][1]
                self.reps[2 * i + 1] = loaded[n + i][1]

    def __len__(self):
        return len(self.records)

    def batch(self, pair_ids, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Inputs and labels for the given pairs; each cover is followed by its own stego."""
        rows = np.stack([2 * np.asarray(pair_ids), 2 * np.asarray(pair_ids) + 1], axis=1).ravel()
        labels = np.tile([0, 1], len(pair_ids))
        if self.reps is not None:
            return self.reps[rows], labels
        out = []
        for i in pair_ids:
            # cover and stego share one transform so the pair stays aligned
            flip, rot = (bool(rng.integers(2)), int(rng.integers(4))) if rng is not None else (False, 0)
            for src in (self._planes_of(i, 0), self._planes_of(i, 1)):
                cp = ColorPlanes(self.model.config.domain, np.ascontiguousarray(_augment(src, flip, rot)))
                out.append(self.model.preprocess(cp).maps)
        return np.stack(out), labels

    def _planes_of(self, pair, which):
        return self.planes[pair] if which == 0 else self.planes[len(self.records) + pair]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_pairs: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 0.5
    lr_step_epochs: int = 10
    weight_decay: float = 0.0
    seed: int = 0
    eval_fraction: float = 0.2
    augment: bool = False
    recalibrate_bn: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_pairs < 1 or self.lr_step_epochs < 1:
            raise ConfigError("epochs, batch_pairs and lr_step_epochs must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


@dataclass
class Metrics:
    accuracy: float
    p_e: float
    tp: int
    fp: int
    tn: int
    fn: int
    items: list = field(default_factory=list)  # (path, label, stego score)

    def to_json(self) -> str:
        d = asdict(self)
        d["items"] = [{"path": p, "label": int(lbl), "score": float(s)} for p, lbl, s in self.items]
        return json.dumps(d, indent=2)


def p_e(scores, labels) -> float:
    """Minimum over thresholds of (P_FA + P_MD) / 2, sweeping the sorted unique scores.

    An item is called stego when its score is at or above the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ConfigError("scores and labels differ in length")
    cover = np.sort(scores[labels == 0])
    stego = np.sort(scores[labels == 1])
    n0, n1 = len(cover), len(stego)
    if n0 == 0 or n1 == 0 or n0 + n1 != len(labels):
        raise ConfigError("P_E needs labels in {0, 1} with both classes present")
    thresholds = np.append(np.unique(scores), np.inf)
    false_alarms = n0 - np.searchsorted(cover, thresholds, side="left")
    misses = np.searchsorted(stego, thresholds, side="left")
    # exact integer numerator, one rounding in the final division
    best = min(int(fa) * n1 + int(md) * n0 for fa, md in zip(false_alarms, misses))
    return best / (2 * n0 * n1)


def predict_scores(model: Model, reps: np.ndarray, batch: int = 16) -> np.ndarray:
    """Stego-class softmax probability for each row of ``reps`` (EVAL mode)."""
    out = []
    for i in range(0, len(reps), batch):
        out.append(softmax(model.forward(reps[i:i + batch], Mode.EVAL))[:, 1])
    return np.concatenate(out).astype(np.float64)


def metrics_from_scores(scores, labels, paths=None) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores > 0.5
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    paths = paths if paths is not None else [""] * len(scores)
    return Metrics((tp + tn) / len(scores), p_e(scores, labels), tp, fp, tn, fn,
                   list(zip(paths, labels.tolist(), scores.tolist())))


def _evaluate_dataset(model: Model, ds: PairDataset, ids=None) -> Metrics:
    ids = np.arange(len(ds)) if ids is None else np.asarray(ids)
    scores, labels, paths = [], [], []
    for start in range(0, len(ids), 8):
        chunk = ids[start:start + 8]
        x, y = ds.batch(chunk)
        scores.append(predict_scores(model, x))
        labels.append(y)
        for i in chunk:
            paths += [ds.records[i].cover_path, ds.records[i].stego_path]
    return metrics_from_scores(np.concatenate(scores), np.concatenate(labels), paths)


def evaluate(model: Model, manifest, workers: int = 1) -> Metrics:
    """Score every cover and stego in the manifest; cover label 0, stego label 1."""
    records = _as_records(manifest)
    return _evaluate_dataset(model, PairDataset(records, model, workers))


def split_pairs(n_pairs: int, eval_fraction: float, rng: np.random.Generator):
    """Seeded shuffle, then the first ``round(eval_fraction * n)`` pairs (at least one) go to validation."""
    order = rng.permutation(n_pairs)
    n_val = min(max(1, int(round(eval_fraction * n_pairs))), n_pairs - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def recalibrate_bn(model: Model, ds: PairDataset, pair_ids, batch_pairs: int) -> None:
    """Replace every BN running statistic by the equal-weight average of batch statistics
    over ``pair_ids`` under the current weights.

    The exponential running average lags behind the weights and leaves the
    stego probability badly offset around the 0.5 threshold; this pass
    leaves parameters untouched.
    """
    bns = [unit.bn for block in model.blocks for unit in block.units]
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.running_mean[...] = 0
        bn.running_var[...] = 0
    try:
        for k, start in enumerate(range(0, len(pair_ids), batch_pairs), 1):
            for bn in bns:
                bn.momentum = 1.0 - 1.0 / k
            x, _ = ds.batch(pair_ids[start:start + batch_pairs])
            model.forward(x, Mode.TRAIN)
    finally:
        for bn, mom in zip(bns, saved):
            bn.momentum = mom


def _blas_single_thread(enabled: bool):
    if not enabled:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - threadpoolctl is a declared dependency
        return nullcontext()
    return threadpool_limits(limits=1)


def train(manifest, cfg: TrainConfig = TrainConfig(), model_cfg: UcnetConfig = UcnetConfig(),
          workers: int = 1, progress=None) -> tuple[Model, list[dict]]:
    """Train with SGD + momentum on pair-constrained batches.

    Returns the model state from the epoch with the lowest validation P_E
    and the per-epoch history. ``workers == 1`` also pins BLAS to one
    thread so repeated runs are bit-identical.
    """
    records = _as_records(manifest)
    if len(records) < 2:
        raise ManifestError("training needs at least 2 pairs")
    rng = np.random.default_rng(cfg.seed)
    train_ids, val_ids = split_pairs(len(records), cfg.eval_fraction, rng)
    with _blas_single_thread(workers <= 1):
        model = build_model(model_cfg, seed=cfg.seed)
        ds = PairDataset(records, model, workers, keep_planes=cfg.augment)
        velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
        history = []
        best_key, best_state = None, None
        for epoch in range(cfg.epochs):
            lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_step_epochs)
            order = rng.permutation(train_ids)
            losses = []
            for start in range(0, len(order), cfg.batch_pairs):
                x, y = ds.batch(order[start:start + cfg.batch_pairs], rng if cfg.augment else None)
                loss, grad = softmax_cross_entropy(model.forward(x, Mode.TRAIN), y)
                if not math.isfinite(loss):
                    raise ConfigError(f"training diverged at epoch {epoch + 1} (loss {loss})")
                losses.append(loss)
                for name, g in model.backward(grad).items():
                    p = model.params[name]
                    if cfg.weight_decay and name.endswith(".weight"):
                        g = g + cfg.weight_decay * p
                    v = velocity[name]
                    v *= cfg.momentum
                    v += g
                    p -= (lr * v).astype(p.dtype, copy=False)
            if cfg.recalibrate_bn:
                recalibrate_bn(model, ds, train_ids, cfg.batch_pairs)
            m = _evaluate_dataset(model, ds, val_ids)
            entry = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses)),
                     "val_accuracy": m.accuracy, "val_p_e": m.p_e}
            history.append(entry)
            log.info("epoch %d loss %.4f val_acc %.4f val_pe %.4f", epoch + 1, entry["train_loss"],
                     m.accuracy, m.p_e)
            if progress is not None:
                progress(entry)
            # ties on P_E go to the higher thresholded accuracy
            key = (m.p_e, -m.accuracy)
            if best_key is None or key < best_key:
                best_key = key
                best_state = {k: v.copy() for k, v in model.state().items()}
        model.load_state(best_state)
    model.val_ids = val_ids
    model.train_ids = train_ids
    return model, history
