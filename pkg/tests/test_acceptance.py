"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import rel_err
from ucnet.channelrep import ColorPlanes, Domain, channel_representation, split_rgb
from ucnet.cli import run as cli_run
from ucnet.desk import JPEG_RECIPE, SPATIAL_RECIPE, fabricate_covers, run_experiment
from ucnet.errors import ProgressiveUnsupported
from ucnet.filterbank import Family, apply_bank, full_bank
from ucnet.jpegcodec import encode_jpeg, idct_block, parse_jpeg
from ucnet.model import T1, T2, T3, UcnetConfig, build_model, param_count
from ucnet.nncore import (BnParams, ConvParams, Mode, batch_norm, batch_norm_grad, conv2d, conv2d_grad,
                          fully_connected, fully_connected_grad, global_avg_pool, global_avg_pool_grad, relu,
                          relu_grad, softmax_cross_entropy)
from ucnet.stegosim import (LOG2_3, EmbedSpec, inverse_ternary_entropy, jpeg_embed, lsbm_embed,
                            ternary_entropy)
from ucnet.traineval import p_e


# --------------------------------------------------------------------------- 1

def _direct_bank(plane, weights, T):
    """Direct summation over every output pixel and tap, vectorized only across kernels."""
    h, w = plane.shape
    p = np.pad(plane, 2)
    out = np.zeros((len(weights), h, w))
    for i in range(h):
        for j in range(w):
            acc = np.zeros(len(weights))
            for a in range(5):
                for b in range(5):
                    acc += weights[:, a, b] * p[i + a, j + b]
            out[:, i, j] = acc
    return np.clip(out, -T, T)


def test_criterion_01_filter_bank(acceptance_report):
    start = time.perf_counter()
    bank = full_bank()
    n_srm = sum(k.family is not Family.GABOR for k in bank)
    n_gabor = sum(k.family is Family.GABOR for k in bank)
    zero_sum = max(abs(k.normalized.sum()) for k in bank)
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        plane = rng.uniform(0, 255, (16, 16))
        worst = max(worst, float(np.abs(apply_bank(plane, bank) - _direct_bank(plane, bank.weights, 3.0)).max()))
    elapsed = time.perf_counter() - start
    ok = len(bank) == 62 and n_srm == 30 and n_gabor == 32 and zero_sum < 1e-6 and worst < 1e-6 and elapsed < 10
    acceptance_report(1, "filter bank", ok, f"{len(bank)} kernels ({n_srm} SRM + {n_gabor} Gabor), "
                      f"max |sum| {zero_sum:.1e}, oracle diff {worst:.1e}, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------- 2

def test_criterion_02_channel_representation(acceptance_report):
    start = time.perf_counter()
    bank = full_bank()
    rng = np.random.default_rng(202)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    base = channel_representation(split_rgb(img), bank, dtype=np.float64).maps
    count_ok = base.shape == (186, 32, 32)
    range_ok = base.min() >= -3 and base.max() <= 3
    independent = True
    for c in range(3):
        for _ in range(5):
            pert = img.copy()
            i, j = rng.integers(0, 32, 2)
            pert[i, j, c] = np.uint8((int(pert[i, j, c]) + int(rng.integers(1, 255))) % 256)
            rep = channel_representation(split_rgb(pert), bank, dtype=np.float64).maps
            changed = np.flatnonzero(np.any(rep != base, axis=(1, 2)))
            independent &= changed.size > 0 and bool(np.all((changed >= 62 * c) & (changed < 62 * c + 62)))
            range_ok &= rep.min() >= -3 and rep.max() <= 3
    elapsed = time.perf_counter() - start
    ok = count_ok and range_ok and independent and elapsed < 10
    acceptance_report(2, "channel representation", ok,
                      f"{base.shape[0]} planes, block independence {independent}, range ok {range_ok}, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------- 3

def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def _layer_errors(rng):
    """Worst relative error per layer on one random instance."""
    errs = {}
    n, c = int(rng.integers(1, 3)), int(rng.choice([2, 4]))
    h, w = int(rng.integers(4, 7)), int(rng.integers(4, 7))
    x = rng.normal(size=(n, c, h, w))

    groups = int(rng.choice([1, 2]))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    p = ConvParams(rng.normal(size=(4, c // groups, k, k)), rng.normal(size=4), stride, k // 2, groups)
    gy = rng.normal(size=conv2d(x, p).shape)
    gx, gw, gb = conv2d_grad(x, p, gy)
    f = lambda: float((conv2d(x, p) * gy).sum())
    errs["conv"] = max(rel_err(gx, _fd(f, x)), rel_err(gw, _fd(f, p.weight)), rel_err(gb, _fd(f, p.bias)))

    for mode in (Mode.TRAIN, Mode.EVAL):
        bn = BnParams(rng.normal(size=c), rng.normal(size=c), rng.normal(size=c), rng.uniform(0.5, 2, c))
        gy = rng.normal(size=x.shape)
        gx, gg, gbeta = batch_norm_grad(x, bn, gy, mode)
        keep = bn.running_mean.copy(), bn.running_var.copy()

        def fb():
            v = float((batch_norm(x, bn, mode) * gy).sum())
            bn.running_mean[...], bn.running_var[...] = keep
            return v

        errs[f"bn_{mode.name.lower()}"] = max(rel_err(gx, _fd(fb, x)), rel_err(gg, _fd(fb, bn.gamma)),
                                              rel_err(gbeta, _fd(fb, bn.beta)))

    xr = x + np.sign(x) * 0.01  # keep entries away from the kink
    gy = rng.normal(size=x.shape)
    errs["relu"] = rel_err(relu_grad(xr, gy), _fd(lambda: float((relu(xr) * gy).sum()), xr))
    gp = rng.normal(size=(n, c))
    errs["gap"] = rel_err(global_avg_pool_grad(x.shape, gp), _fd(lambda: float((global_avg_pool(x) * gp).sum()), x))

    feat, wfc, bfc = rng.normal(size=(n, c)), rng.normal(size=(c, 2)), rng.normal(size=2)
    go = rng.normal(size=(n, 2))
    gx, gw, gb = fully_connected_grad(feat, wfc, go)
    ff = lambda: float((fully_connected(feat, wfc, bfc) * go).sum())
    errs["fc"] = max(rel_err(gx, _fd(ff, feat)), rel_err(gw, _fd(ff, wfc)), rel_err(gb, _fd(ff, bfc)))

    z = rng.normal(scale=3, size=(n + 1, 2))
    y = rng.integers(0, 2, n + 1)
    errs["softmax_ce"] = rel_err(softmax_cross_entropy(z, y)[1], _fd(lambda: softmax_cross_entropy(z, y)[0], z))
    return errs


TINY = UcnetConfig(stem_width=8, stages=(T1(8), T2(8, 16), T3(16, 4)))


def _end_to_end_error(seed):
    m = build_model(TINY, seed=seed, dtype=np.float64)
    r = np.random.default_rng(seed)
    x = r.uniform(-3, 3, size=(2, 186, 16, 16))
    y = np.array([0, 1])
    for bn in (u.bn for b in m.blocks for u in b.units):
        bn.gamma[...] = r.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta[...] = r.normal(0, 0.1, bn.beta.shape)
    keep = {k: v.copy() for k, v in m.buffers.items()}

    def loss():
        v = softmax_cross_entropy(m.forward(x, Mode.TRAIN), y)[0]
        for k2, v2 in keep.items():
            m.buffers[k2][...] = v2
        return v

    _, g = softmax_cross_entropy(m.forward(x, Mode.TRAIN), y)
    grads = m.backward(g)
    analytic, numeric = [], []
    eps = 1e-6
    for name, p in m.params.items():
        flat = p.reshape(-1)
        for i in r.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            fp = loss()
            flat[i] = old - eps
            fm = loss()
            flat[i] = old
            numeric.append((fp - fm) / (2 * eps))
            analytic.append(grads[name].reshape(-1)[i])
    return rel_err(analytic, numeric)


def test_criterion_03_gradients(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = {}
    for _ in range(20):
        for name, e in _layer_errors(rng).items():
            worst[name] = max(worst.get(name, 0.0), e)
    e2e = max(_end_to_end_error(seed) for seed in range(20))
    elapsed = time.perf_counter() - start
    layer_ok = all(v < 1e-5 for v in worst.values())
    ok = layer_ok and e2e < 1e-4 and elapsed < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    acceptance_report(3, "gradient checks", ok, f"20 instances each; {detail}; end-to-end {e2e:.1e}; {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------- 4

def test_criterion_04_grouped_economy(acceptance_report):
    ok = True
    cases = []
    for width, groups in ((32, 4), (64, 4), (64, 8), (48, 3), (128, 16)):
        t1 = build_model(UcnetConfig(stem_width=width, stages=(T1(width),)))
        t3 = build_model(UcnetConfig(stem_width=width, stages=(T3(width, groups),)))
        w1 = t1.params["stage0.conv.weight"].size
        w3 = t3.params["stage0.conv.weight"].size
        ok &= w3 * groups == w1 and param_count(t1) - param_count(t3) == w1 - w3
        cases.append(f"w{width}/g{groups}: {w1}->{w3}")
    acceptance_report(4, "grouped-conv parameter economy", ok, "; ".join(cases))
    assert ok


# --------------------------------------------------------------------------- 5

def test_criterion_05_jpeg(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    identity = True
    for q in (30, 75, 95):
        for _ in range(5):
            img = rng.integers(0, 256, (40, 48, 3), dtype=np.uint8)
            data, written = encode_jpeg(img, q)
            parsed = parse_jpeg(data)
            identity &= all(np.array_equal(a, b) for a, b in zip(parsed.coeff_blocks, written.coeff_blocks))
    dc = np.zeros((8, 8), int)
    dc[0, 0] = 77
    dc_dev = float(np.abs(idct_block(dc, np.full(64, 3)) - (77 * 3 / 8 + 128)).max())
    parseval = 0.0
    for _ in range(100):
        s, q = rng.integers(-60, 60, (8, 8)), rng.integers(1, 40, (8, 8))
        e_coef = float(((s * q).astype(float) ** 2).sum())
        e_pix = float(((idct_block(s, q) - 128) ** 2).sum())
        parseval = max(parseval, abs(e_pix - e_coef) / max(1.0, e_coef))
    data, _ = encode_jpeg(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), 75)
    i = data.index(b"\xff\xc0")
    try:
        parse_jpeg(data[:i + 1] + b"\xc2" + data[i + 2:])
        sof2 = False
    except ProgressiveUnsupported:
        sof2 = True
    elapsed = time.perf_counter() - start
    ok = identity and dc_dev <= 1e-9 and parseval < 1e-6 and sof2 and elapsed < 30
    acceptance_report(5, "JPEG codec", ok, f"round trip exact {identity}, DC dev {dc_dev:.1e}, "
                      f"Parseval rel {parseval:.1e}, SOF2 rejected {sof2}, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------- 6

def test_criterion_06_simulators(acceptance_report):
    rng = np.random.default_rng(606)
    cp = split_rgb(rng.integers(0, 256, (200, 200, 3), dtype=np.uint8))
    identity = np.array_equal(lsbm_embed(cp, EmbedSpec(0.0, seed=1)).planes, cp.planes)
    _, j = encode_jpeg(rng.integers(0, 256, (256, 256, 3), dtype=np.uint8), 95)
    identity &= all(np.array_equal(a, b) for a, b in zip(jpeg_embed(j, EmbedSpec(0.0)).coeff_blocks,
                                                         j.coeff_blocks))
    worst_sigma = 0.0
    for beta in (0.05, 0.2, 1 / 3):
        out = lsbm_embed(cp, EmbedSpec.from_beta(beta, seed=int(beta * 1000)))
        n = cp.planes.size
        rate = np.count_nonzero(out.planes != cp.planes) / n
        worst_sigma = max(worst_sigma, abs(rate - beta) / math.sqrt(beta * (1 - beta) / n))
    for beta in (0.1, 0.3):
        out = jpeg_embed(j, EmbedSpec.from_beta(beta, seed=7))
        sites = changed = 0
        for a, b in zip(j.coeff_blocks, out.coeff_blocks):
            mask = a != 0
            mask[..., 0, 0] = False
            sites += int(mask.sum())
            changed += int((a != b)[mask].sum())
        worst_sigma = max(worst_sigma, abs(changed / sites - beta) / math.sqrt(beta * (1 - beta) / sites))
    sites_ok = cp.planes.size >= 1e5 and sites >= 1e5
    top = abs(inverse_ternary_entropy(LOG2_3) - 1 / 3)
    grid = max(abs(ternary_entropy(inverse_ternary_entropy(a)) - a) for a in np.linspace(0, LOG2_3, 50))
    ok = identity and sites_ok and worst_sigma < 3 and top < 1e-9 and grid < 1e-8
    acceptance_report(6, "embedding simulators", ok, f"beta=0 identity {identity}, worst deviation "
                      f"{worst_sigma:.2f} sigma on >=1e5 sites, |inv(log2 3) - 1/3| {top:.1e}, grid {grid:.1e}")
    assert ok


# --------------------------------------------------------------------------- 7

@pytest.mark.slow
def test_criterion_07_spatial_detection(acceptance_report, tmp_path):
    start = time.perf_counter()
    res = run_experiment(tmp_path / "lsbm", "spatial", 0.2, pairs=200, recipe=SPATIAL_RECIPE)
    elapsed = time.perf_counter() - start
    control = run_experiment(tmp_path / "control", "spatial", 0.0, pairs=200, recipe=SPATIAL_RECIPE)
    ok = (res.val_accuracy >= 0.85 and res.val_p_e <= 0.15 and elapsed <= 900
          and abs(control.val_accuracy - 0.5) <= 0.1 and SPATIAL_RECIPE.epochs <= 30)
    acceptance_report(7, "desk detection, spatial LSBM beta=0.2", ok,
                      f"val acc {res.val_accuracy:.4f}, P_E {res.val_p_e:.4f}, {SPATIAL_RECIPE.epochs} epochs, "
                      f"{elapsed:.0f}s; beta=0 control val acc {control.val_accuracy:.4f}")
    assert ok


# --------------------------------------------------------------------------- 8

@pytest.mark.slow
def test_criterion_08_jpeg_detection(acceptance_report, tmp_path):
    start = time.perf_counter()
    res = run_experiment(tmp_path / "jpeg", "jpeg", 0.1, pairs=200, recipe=JPEG_RECIPE)
    elapsed = time.perf_counter() - start
    ok = res.val_accuracy > 0.70
    acceptance_report(8, "desk detection, JPEG q75 beta=0.1", ok,
                      f"val acc {res.val_accuracy:.4f}, P_E {res.val_p_e:.4f}, {JPEG_RECIPE.epochs} epochs, "
                      f"{elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------- 9

def test_criterion_09_determinism(acceptance_report, tmp_path, capsys):
    fabricate_covers(tmp_path / "covers", 16, "spatial", size=32, seed=9)
    assert cli_run(["simulate", "--cover-dir", str(tmp_path / "covers"), "--domain", "spatial",
                    "--alpha", "1.0", "--seed", "3", "--out-dir", str(tmp_path / "stegos"),
                    "--manifest", str(tmp_path / "pairs.tsv")]) == 0
    histories = []
    for i in range(2):
        capsys.readouterr()
        assert cli_run(["train", "--manifest", str(tmp_path / "pairs.tsv"), "--model-out",
                        str(tmp_path / f"run{i}.ucnt"), "--epochs", "2", "--batch-pairs", "4",
                        "--lr", "0.01", "--seed", "11", "--workers", "1"]) == 0
        histories.append([line for line in capsys.readouterr().out.splitlines() if line.startswith("epoch ")])
    same_history = histories[0] == histories[1] and len(histories[0]) == 2
    same_bytes = (tmp_path / "run0.ucnt").read_bytes() == (tmp_path / "run1.ucnt").read_bytes()
    ok = same_history and same_bytes
    acceptance_report(9, "determinism", ok, f"identical loss history {same_history}, identical checkpoint {same_bytes}")
    assert ok


# --------------------------------------------------------------------------- 10

def _exhaustive_pe(scores, labels):
    """Evaluate every threshold between consecutive distinct scores and beyond both ends, exactly."""
    u = sorted(set(scores))
    cuts = [Fraction(u[0]) - 1] + [(Fraction(a) + Fraction(b)) / 2 for a, b in zip(u, u[1:])] + [Fraction(u[-1]) + 1]
    n0 = labels.count(0)
    n1 = labels.count(1)
    best = Fraction(1)
    for t in cuts:
        fa = sum(1 for s, l in zip(scores, labels) if l == 0 and s >= t)
        md = sum(1 for s, l in zip(scores, labels) if l == 1 and s < t)
        best = min(best, (Fraction(fa, n0) + Fraction(md, n1)) / 2)
    return best


def test_criterion_10_pe(acceptance_report):
    rng = np.random.default_rng(1010)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 25))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        # coarse grid forces ties on some instances
        scores = rng.integers(0, int(rng.integers(2, 12)), n) / 7 if rng.random() < 0.5 else rng.random(n)
        if p_e(scores, labels) != float(_exhaustive_pe(scores.tolist(), labels.tolist())):
            mismatches += 1
    ok = mismatches == 0
    acceptance_report(10, "P_E exactness", ok, f"{mismatches} mismatches on 1000 instances")
    assert ok
