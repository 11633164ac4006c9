"""Desk-scale detection run: 200 synthetic pairs, desk config, validation accuracy and P_E."""

import argparse
import json
import tempfile

from ucnet.desk import run_experiment

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--domain", choices=["spatial", "jpeg"], default="spatial")
ap.add_argument("--beta", type=float, default=None, help="change rate (default 0.2 spatial, 0.1 jpeg)")
ap.add_argument("--pairs", type=int, default=200)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--work-dir", default=None, help="keep covers/stegos here (default: temporary)")
a = ap.parse_args()
beta = a.beta if a.beta is not None else (0.2 if a.domain == "spatial" else 0.1)


def go(work):
    res = run_experiment(work, a.domain, beta, a.pairs, seed=a.seed,
                         progress=lambda e: print(json.dumps(e), flush=True))
    print(f"domain={a.domain} beta={beta} val_accuracy={res.val_accuracy:.4f} "
          f"val_p_e={res.val_p_e:.4f} train_seconds={res.seconds:.0f}")


if a.work_dir:
    go(a.work_dir)
else:
    with tempfile.TemporaryDirectory() as tmp:
        go(tmp)
