import numpy as np
import pytest


def naive_conv(x, w, b=None, stride=1, pad=0, groups=1):
    """Direct nested-loop grouped cross-correlation, NCHW / (Cout, Cin/g, k, k)."""
    n, c_in, h, wd = x.shape
    c_out, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cog = c_out // groups
    y = np.zeros((n, c_out, ho, wo))
    for ni in range(n):
        for co in range(c_out):
            gi = co // cog
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cg):
                        for a in range(k):
                            for bb in range(k):
                                acc += w[co, ci, a, bb] * xp[ni, gi * cg + ci, i * stride + a, j * stride + bb]
                    y[ni, co, i, j] = acc + (0.0 if b is None else b[co])
    return y


def naive_bank(plane, weights, T):
    """Quintuple-loop zero-padded correlation of one plane with every 5x5 kernel, then clamp."""
    h, w = plane.shape
    p = np.pad(plane, 2)
    out = np.zeros((len(weights), h, w))
    for k in range(len(weights)):
        for i in range(h):
            for j in range(w):
                s = 0.0
                for a in range(5):
                    for b in range(5):
                        s += weights[k, a, b] * p[i + a, j + b]
                out[k, i, j] = s
    return np.clip(out, -T, T)


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    """Norm-wise relative error between two gradient tensors."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
