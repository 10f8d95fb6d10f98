"""Beam-width, horizon and noise sweeps on synthetic worlds.

    python3 scripts/simulator_sweeps.py --out runs/sim
"""

import argparse
import json
import time
from pathlib import Path

from pasplan.simulator import run_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--worlds", type=int, default=50)
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--actions", type=int, default=12)
    ap.add_argument("--branching", type=int, default=3)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = range(args.worlds)
    rows = []

    def log(name, pts, dt):
        for p in pts:
            rows.append({"sweep": name, **p.to_record()})
            print(f"{name:8s} {json.dumps(p.params)}  SR {p.sr:.4f} ± {p.se:.4f}  mAcc {p.macc:.4f}  mIoU {p.miou:.4f}")
        print(f"{name:8s} done in {dt:.0f}s")

    t = time.perf_counter()
    log("beam", run_sweep(seeds, args.actions, args.branching, 0.3, 3, args.queries, beam_widths=(1, 2, 3, 5)),
        time.perf_counter() - t)
    for noise in (0.0, 0.3, 0.5, 1.0):
        t = time.perf_counter()
        pts = [run_sweep(seeds, args.actions, args.branching, noise, T, args.queries)[0] for T in (1, 2, 3, 4)]
        log(f"noise={noise}", pts, time.perf_counter() - t)
    with open(args.out / "sweeps.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
