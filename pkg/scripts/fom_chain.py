#!/usr/bin/env python3
"""Synthesize .s2p files for target FoM values and fit them back.

Writes each file to --out, then reads it through the Touchstone parser and
the S->Y conversion before fitting, the same path a measured file takes.
"""
import argparse
from pathlib import Path

import numpy as np

from lbaw import mbvd, rfio

# fs, kt2, Qs, C0, Qp, Rs; kt2 * Qs gives the FoM
TARGETS = {
    "fom437": (673e6, 0.43, 437 / 0.43, 0.5e-12, 300.0, 0.3),
    "fom53": (1.05e9, 0.12, 53 / 0.12, 0.5e-12, 150.0, 0.5),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/fom_chain")
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seeds", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for name, (fs, kt2, qs, c0, qp, rs) in TARGETS.items():
        p = mbvd.MbvdParams.from_targets(fs, kt2, qs, c0, Qp=qp, Rs=rs)
        target = mbvd.derive_metrics(p).FoM
        foms = []
        for seed in range(args.seeds):
            spec = mbvd.synthesize(p, noise=args.noise, rng=seed)
            path = out / f"{name}_{seed}.s2p"
            path.write_text(rfio.write_touchstone(rfio.series_two_port(spec.frequencies, spec.y)))
            f, Y, _ = rfio.s_to_y(rfio.parse_touchstone(path.read_text()))
            res = mbvd.fit(rfio.extract_y12(f, Y))
            foms.append(res.metrics.FoM)
        foms = np.array(foms)
        print(f"{name}: target {target:.1f}, fitted median {np.median(foms):.2f} "
              f"(min {foms.min():.2f}, max {foms.max():.2f}, {len(foms)} seeds, noise {args.noise})")


if __name__ == "__main__":
    main()
