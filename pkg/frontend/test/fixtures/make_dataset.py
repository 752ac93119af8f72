"""Build a small dataset + manifest for UI tests.

Usage: make_dataset.py OUT_ROOT --pair-methods M1,M2,... --singles N

One shared target gets a composite per listed method (so every unordered
method pair becomes exactly one duel); N extra targets get one composite
each (triage-only, no duel partners).
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from harmonytk import imgcore as ic


def write_target(root, tid, rng):
    img = ic.ImageRGB(np.clip(0.25 + 0.5 * rng.random((48, 48, 3)), 0, 1))
    mask = ic.MaskImage(np.zeros((48, 48), bool))
    mask.data[12:36, 12:36] = True
    ic.write_image(img, root / "real" / f"{tid}.png")
    ic.write_mask(mask, root / "mask" / f"{tid}.png")
    return img


def write_composite(root, rid, base, shade, rng):
    tinted = base.data.copy()
    tinted[12:36, 12:36] = np.clip(
        base.data[12:36, 12:36] * (0.7 + 0.3 * shade) + 0.1 * rng.random(3), 0, 1)
    ic.write_image(ic.ImageRGB(tinted), root / "composite" / f"{rid}.png")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_root")
    ap.add_argument("--pair-methods", default="")
    ap.add_argument("--singles", type=int, default=0)
    args = ap.parse_args()

    root = Path(args.out_root)
    for sub in ("real", "mask", "composite"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(99)
    rows = []

    def row(rid, tid, method):
        return {
            "record_id": rid,
            "composite_path": f"composite/{rid}.png",
            "real_path": f"real/{tid}.png",
            "mask_path": f"mask/{tid}.png",
            "method": method,
            "reference_id": tid,
            "seed": 0,
            "filter_verdicts": [],
            "human_verdict": None,
            "category_label": "fixture",
            "split": "train",
        }

    methods = [m for m in args.pair_methods.split(",") if m]
    if methods:
        base = write_target(root, "t00", rng)
        for k, method in enumerate(methods):
            rid = f"t00-c{k}"
            write_composite(root, rid, base, k / max(len(methods) - 1, 1), rng)
            rows.append(row(rid, "t00", method))

    for n in range(args.singles):
        tid = f"s{n:02d}"
        base = write_target(root, tid, rng)
        rid = f"{tid}-c0"
        write_composite(root, rid, base, 0.5, rng)
        rows.append(row(rid, tid, "XIAO_RGB"))

    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"{len(rows)} records", file=sys.stderr)


if __name__ == "__main__":
    main()
