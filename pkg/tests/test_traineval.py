from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucnet.channelrep import ColorPlanes, Domain
from ucnet.desk import make_dataset
from ucnet.errors import ConfigError, ManifestError
from ucnet.model import T1, T2, T3, UcnetConfig, build_model, save_checkpoint
from ucnet.traineval import (Metrics, _evaluate_dataset, PairDataset, PairRecord, TrainConfig, evaluate, metrics_from_scores,
                             p_e, read_manifest, split_pairs, train, write_manifest)

SMALL = UcnetConfig(stem_width=8, stages=(T3(8, 2), T2(8, 16), T1(16)))


def brute_force_pe(scores, labels):
    """Every midpoint between sorted unique scores plus both extremes, exact rational arithmetic."""
    u = sorted(set(float(s) for s in scores))
    cuts = [Fraction(u[0]) - 1] + [(Fraction(a) + Fraction(b)) / 2 for a, b in zip(u, u[1:])] + [Fraction(u[-1]) + 1]
    n0 = sum(1 for l in labels if l == 0)
    n1 = len(labels) - n0
    best = None
    for t in cuts:
        fa = sum(1 for s, l in zip(scores, labels) if l == 0 and Fraction(float(s)) >= t)
        md = sum(1 for s, l in zip(scores, labels) if l == 1 and Fraction(float(s)) < t)
        v = (Fraction(fa, n0) + Fraction(md, n1)) / 2
        best = v if best is None else min(best, v)
    return best


def test_pe_examples():
    assert p_e([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 0.0
    assert p_e([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    with pytest.raises(ConfigError):
        p_e([0.1, 0.2], [1, 1])


def test_pe_random_20_item(rng):
    for _ in range(30):
        scores = rng.integers(0, 8, 20) / 7
        labels = rng.permutation([0] * 10 + [1] * 10)
        assert p_e(scores, labels) == float(brute_force_pe(scores, labels))


def test_pe_independent_labels_near_half():
    r = np.random.default_rng(5)
    vals = []
    for _ in range(20):
        scores = r.random(2000)
        labels = r.integers(0, 2, 2000)
        vals.append(p_e(scores, labels))
    # permutation oracle: shuffling labels leaves P_E near 0.5
    assert 0.45 < np.mean(vals) < 0.5 + 1 / 2000


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 1)), min_size=2, max_size=30))
def test_pe_properties(items):
    scores = np.array([s for s, _ in items], dtype=float)
    labels = np.array([l for _, l in items])
    if labels.min() == labels.max():
        return
    v = p_e(scores, labels)
    assert v <= 0.5 + 1 / len(labels)
    assert p_e(np.exp(scores) * 3 - 7, labels) == v
    assert v == float(brute_force_pe(scores, labels))


def test_metrics_single_pair():
    m = metrics_from_scores([0.1, 0.9], [0, 1], ["c", "s"])
    assert m.accuracy == 1.0 and m.p_e == 0.0 and (m.tp, m.fp, m.tn, m.fn) == (1, 0, 1, 0)
    doc = m.to_json()
    assert '"accuracy": 1.0' in doc and '"score": 0.9' in doc


def test_metrics_threshold_is_strict():
    m = metrics_from_scores([0.5, 0.5], [0, 1])
    assert (m.tn, m.fn) == (1, 1)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(eval_fraction=1.0)


def test_split_is_seeded_and_disjoint():
    a = split_pairs(10, 0.2, np.random.default_rng(1))
    b = split_pairs(10, 0.2, np.random.default_rng(1))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert len(a[1]) == 2 and not set(a[0]) & set(a[1]) and len(set(a[0]) | set(a[1])) == 10


@pytest.fixture(scope="module")
def spatial_manifest(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("sp"), 6, "spatial", 0.2, size=16, seed=3)


def test_manifest_round_trip(tmp_path, spatial_manifest):
    recs = read_manifest(spatial_manifest)
    assert len(recs) == 6 and all(r.domain is Domain.SPATIAL_RGB for r in recs)
    out = tmp_path / "copy.tsv"
    write_manifest(recs, out)
    assert read_manifest(out) == recs


def test_manifest_errors(tmp_path):
    (tmp_path / "empty.tsv").write_text("")
    with pytest.raises(ManifestError, match="empty"):
        evaluate(build_model(SMALL), tmp_path / "empty.tsv")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "missing.tsv")
    (tmp_path / "bad.tsv").write_text("a\tb\tspatial\n")
    with pytest.raises(ManifestError, match="line 1"):
        read_manifest(tmp_path / "bad.tsv")
    (tmp_path / "gone.tsv").write_text("x.ppm\ty.ppm\tspatial\t0.5\t1\n" * 2)
    with pytest.raises(ManifestError, match="x.ppm"):
        train(tmp_path / "gone.tsv", TrainConfig(epochs=1), SMALL)


def test_pair_constraint(spatial_manifest):
    recs = read_manifest(spatial_manifest)
    model = build_model(SMALL)
    for augment in (False, True):
        ds = PairDataset(recs, model, keep_planes=augment)
        rng = np.random.default_rng(0) if augment else None
        x, y = ds.batch([4, 1, 3], rng)
        assert y.tolist() == [0, 1] * 3
        solo = PairDataset(recs, model)
        for j, pid in enumerate([4, 1, 3]):
            cover, stego = solo.batch([pid])[0]
            if not augment:
                assert np.array_equal(x[2 * j], cover) and np.array_equal(x[2 * j + 1], stego)


def test_augmentation_keeps_pair_aligned(spatial_manifest):
    recs = read_manifest(spatial_manifest)
    model = build_model(SMALL)
    ds = PairDataset(recs, model, keep_planes=True)
    n = len(recs)
    for seed in range(4):
        x, _ = ds.batch([2], np.random.default_rng(seed))
        draw = np.random.default_rng(seed)
        flip, rot = bool(draw.integers(2)), int(draw.integers(4))
        for row, src in enumerate((ds.planes[2], ds.planes[n + 2])):
            t = src[:, :, ::-1] if flip else src
            t = np.ascontiguousarray(np.rot90(t, rot, axes=(1, 2)))
            expected = model.preprocess(ColorPlanes(Domain.SPATIAL_RGB, t)).maps
            assert np.array_equal(x[row], expected)


def test_evaluate_and_train_history(spatial_manifest):
    model, history = train(spatial_manifest, TrainConfig(epochs=2, batch_pairs=2, seed=1), SMALL)
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["train_loss"]) for h in history)
    best = min(h["val_p_e"] for h in history)
    ds = PairDataset(read_manifest(spatial_manifest), model)
    assert _evaluate_dataset(model, ds, model.val_ids).p_e == best
    m = evaluate(model, spatial_manifest)
    assert isinstance(m, Metrics) and len(m.items) == 12
    assert m.tp + m.fp + m.tn + m.fn == 12


def test_identical_pairs_give_chance_accuracy(tmp_path):
    manifest = make_dataset(tmp_path, 10, "spatial", 0.0, size=16, seed=2)
    model, history = train(manifest, TrainConfig(epochs=2, batch_pairs=2), SMALL)
    for h in history:
        assert abs(h["val_accuracy"] - 0.5) <= 0.1 and np.isfinite(h["train_loss"])


def test_domain_mismatch_rejected(spatial_manifest):
    jpeg_cfg = UcnetConfig(stem_width=8, stages=(), domain=Domain.JPEG_YCBCR)
    with pytest.raises(ManifestError, match="JPEG_YCBCR"):
        train(spatial_manifest, TrainConfig(epochs=1), jpeg_cfg)


def test_jpeg_dataset_trains(tmp_path):
    manifest = make_dataset(tmp_path, 4, "jpeg", 0.1, size=16, seed=1)
    recs = read_manifest(manifest)
    assert recs[0].cover_path.endswith(".jpg")
    cfg = UcnetConfig(stem_width=8, stages=(T1(8),), domain=Domain.JPEG_YCBCR)
    _, history = train(recs, TrainConfig(epochs=1, batch_pairs=2), cfg)
    assert len(history) == 1


def test_determinism_small(spatial_manifest, tmp_path):
    runs = []
    for i in range(2):
        model, history = train(spatial_manifest, TrainConfig(epochs=2, batch_pairs=2, seed=7), SMALL)
        save_checkpoint(model, tmp_path / f"{i}.ucnt")
        runs.append(history)
    assert runs[0] == runs[1]
    assert (tmp_path / "0.ucnt").read_bytes() == (tmp_path / "1.ucnt").read_bytes()


def test_record_line():
    r = PairRecord("a.ppm", "b.ppm", Domain.SPATIAL_RGB, 0.5, 3)
    assert r.line() == "a.ppm\tb.ppm\tSPATIAL_RGB\t0.5\t3"
