"""Share of null mini-city fixtures (rho = 0, no lagged effect) where the pipeline keeps OLS."""

import argparse
import json
import logging
import shutil
import tempfile
from pathlib import Path

from tncspatial.cli import cmd_fit, cmd_ingest, load_config
from tncspatial.fixture import FixtureSpec, make_minicity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=10)
    ap.add_argument("--cols", type=int, default=10)
    ap.add_argument("--side-mi", type=float, default=0.6)
    ap.add_argument("--noise-sd", type=float, default=0.3)
    ap.add_argument("--trips", type=int, default=20_000)
    ap.add_argument("--reps", type=int, default=100)
    args = ap.parse_args()
    logging.disable(logging.WARNING)
    keeps = {"solo": 0, "pooled": 0}
    work = Path(tempfile.mkdtemp())
    try:
        for seed in range(args.reps):
            root = work / str(seed)
            spec = FixtureSpec(
                rows=args.rows, cols=args.cols, side_mi=args.side_mi, rho=0.0, solo_gamma=0.0, pooled_gamma=0.0,
                noise_sd=args.noise_sd, target_trips=args.trips, seed=seed,
            )
            make_minicity(root, spec)
            cfg = load_config(str(root / "config.toml"), {"permutations": 199, "draws": 200})
            cmd_ingest(cfg)
            cmd_fit(cfg)
            for dep in keeps:
                doc = json.loads((cfg.out / f"diagnostics_{dep}.json").read_text())
                keeps[dep] += doc["recommendation"] == "OLS"
            shutil.rmtree(root)
    finally:
        shutil.rmtree(work, ignore_errors=True)
    n = args.rows * args.cols
    print(f"{n} areas, {args.reps} seeds: " + ", ".join(f"{d} keeps OLS {k / args.reps:.2f}" for d, k in keeps.items()))


if __name__ == "__main__":
    main()
