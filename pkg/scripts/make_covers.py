"""Fabricate synthetic textured covers (PPM or quality-75 JPEG)."""

import argparse

from ucnet.desk import fabricate_covers

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--out-dir", required=True)
ap.add_argument("--count", type=int, default=200)
ap.add_argument("--domain", choices=["spatial", "jpeg"], default="spatial")
ap.add_argument("--size", type=int, default=64)
ap.add_argument("--quality", type=int, default=75)
ap.add_argument("--seed", type=int, default=0)
a = ap.parse_args()
paths = fabricate_covers(a.out_dir, a.count, a.domain, a.size, a.seed, a.quality)
print(f"wrote {len(paths)} covers to {a.out_dir}")
