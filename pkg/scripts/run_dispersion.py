#!/usr/bin/env python3
"""Full w_m/w_p sweep for both orientations; prints the optima and writes CSV.

    python3 scripts/run_dispersion.py --out results/dispersion
"""
import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from lbaw import dispersion


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="sweep config file (default: built-in geometry)")
    ap.add_argument("--out", default="results/dispersion")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--t-film", type=float, help="override film thickness (m); recess scales to 80%%")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.config:
        cfg = dispersion.parse_sweep_config(Path(args.config).read_text(), Path(args.config).parent)
    else:
        cfg = dispersion.SweepConfig()
    if args.t_film:
        cfg = dataclasses.replace(cfg, t_film=args.t_film, t_recess=0.8 * args.t_film)

    t0 = time.perf_counter()
    res = dispersion.run_sweep(cfg, jobs=args.jobs)
    logging.info("sweep took %.1f s", time.perf_counter() - t0)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dispersion.csv").write_text(dispersion.export_csv(res.points))
    summary = dispersion.summarize(res)
    (out / "optimum.json").write_text(json.dumps({"optima": summary, "gaps": res.gaps}, indent=2) + "\n")

    for mode, order in res.families():
        print(f"\n{mode} {order}")
        print(f"{'w_m/w_p':>8} {'fs (MHz)':>10} {'kt2':>7} {'eta':>7}")
        for p in res.family(mode, order):
            print(f"{p.wm_wp:8.4f} {p.fs / 1e6:10.2f} {p.kt2:7.4f} {p.eta:7.4f}")
    print()
    for row in summary:
        print(f"optimum {row['mode']} {row['order']}: w_m/w_p={row['wm_wp']:.4f} kt2={row['kt2']:.4f}")
    for g in res.gaps:
        print("gap:", *g)


if __name__ == "__main__":
    main()
