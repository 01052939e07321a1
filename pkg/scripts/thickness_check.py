#!/usr/bin/env python3
"""SH0 fundamental kt2 optimum versus film thickness.

The optimum ratio should stay put when the film gets thicker, since the
lateral electrode pattern sets the wavelength.
"""
import argparse

from lbaw import dispersion
from lbaw.materials import EulerAngles


def optimum_at(t, jobs, ratios):
    cfg = dispersion.SweepConfig(t_film=t, t_recess=0.8 * t, orders=("fundamental",), ratios=ratios,
                                 orientations={"SH0": EulerAngles(-90, -90, -10)})
    res = dispersion.run_sweep(cfg, jobs=jobs)
    return dispersion.find_optimum(res.family("SH0", "fundamental"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--thickness", type=float, nargs="+", default=[100e-9, 150e-9, 200e-9])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--points", type=int, default=30)
    args = ap.parse_args()

    ratios = dispersion.default_ratios(n=args.points)
    print(f"{'t (nm)':>7} {'w_m/w_p':>8} {'kt2':>7} {'fs (MHz)':>9}")
    base = None
    for t in args.thickness:
        best = optimum_at(t, args.jobs, ratios)
        base = best.wm_wp if base is None else base
        print(f"{t * 1e9:7.0f} {best.wm_wp:8.4f} {best.kt2:7.4f} {best.fs / 1e6:9.2f}"
              f"   shift {best.wm_wp - base:+.4f}")


if __name__ == "__main__":
    main()
