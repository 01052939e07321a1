"""Command line entry point: ``lbaw {rotate,disperse,fit,synth,convert}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dispersion, fem, materials, mbvd, mesh, rfio

log = logging.getLogger("lbaw")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# rotate

def cmd_rotate(args) -> int:
    db = (materials.load_material_db(_existing(args.materials).read_text())
          if args.materials else materials.default_materials())
    if args.material not in db:
        raise UsageError(f"unknown material {args.material!r}; known: {', '.join(sorted(db))}")
    angles = materials.EulerAngles(*args.euler)
    rot = materials.rotate_tensors(db[args.material], angles, method=args.method)
    name = args.name or f"{args.material}_rot"
    text = materials.dump_material(dataclasses.replace(rot, name=name))
    path = _out_dir(args) / f"{name}.txt"
    _write(path, text)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# disperse

def _svg_dispersion(result: dispersion.SweepResult, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lbaw"
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    for mode, order in result.families():
        pts = result.family(mode, order)
        r = [p.wm_wp for p in pts]
        ax1.plot(r, [p.kt2 for p in pts], marker="o", ms=3, label=f"{mode} {order}")
        ax2.plot(r, [p.eta for p in pts], marker="o", ms=3)
    ax1.set_ylabel("kt2")
    ax2.set_ylabel("eta")
    ax2.set_xlabel("w_m / w_p")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_disperse(args) -> int:
    cfg_path = _existing(args.config)
    cfg = dispersion.parse_sweep_config(cfg_path.read_text(), base_dir=cfg_path.parent)
    if args.ratios:
        cfg = dataclasses.replace(cfg, ratios=tuple(args.ratios))
    result = dispersion.run_sweep(cfg, jobs=args.jobs)
    out = _out_dir(args)
    _write(out / "dispersion.csv", dispersion.export_csv(result.points))
    summary = {
        "optima": dispersion.summarize(result),
        "gaps": [{"mode": m, "order": o, "wm_wp": r, "reason": why} for m, o, r, why in result.gaps],
        "warnings": result.warnings,
        "config": str(cfg_path),
    }
    _write(out / "optimum.json", json.dumps(summary, indent=2) + "\n")
    if args.svg:
        _svg_dispersion(result, out / "dispersion.svg")
    for row in summary["optima"]:
        print(f"{row['mode']:>4} {row['order']:<12} w_m/w_p={row['wm_wp']:.4f} "
              f"kt2={row['kt2']:.4f} fs={row['fs_hz'] / 1e9:.4f} GHz eta={row['eta']:.4f}")
    if not result.points:
        log.error("no mode branch could be tracked")
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit / convert / synth

def _load_spectrum(path: Path, fmt: str = "auto") -> mbvd.AdmittanceSpectrum:
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "s2p"
    text = path.read_text()
    if fmt == "csv":
        return rfio.spectrum_from_csv(text)
    data = rfio.parse_touchstone(text)
    f, Y, _ = rfio.s_to_y(data)
    return rfio.extract_y12(f, Y)


def _svg_fit(spec: mbvd.AdmittanceSpectrum, res: mbvd.FitResult, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lbaw"
    f = spec.frequencies
    model = mbvd.admittance(res.params, f)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(f / 1e9, 20 * np.log10(np.abs(spec.y)), label="data")
    ax.plot(f / 1e9, 20 * np.log10(np.abs(model)), "--", label="mBVD")
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("|Y| (dB S)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_fit(args) -> int:
    path = _existing(args.input)
    spec = _load_spectrum(path, args.format)
    res = mbvd.fit(spec)
    text = mbvd.report_json(res, input_file=path.name)
    out = _out_dir(args)
    _write(out / f"{path.stem}_fit.json", text)
    if args.svg:
        _svg_fit(spec, res, out / f"{path.stem}_fit.svg")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_convert(args) -> int:
    path = _existing(args.input)
    spec = _load_spectrum(path, "s2p")
    dest = _out_dir(args) / f"{path.stem}_y.csv"
    _write(dest, rfio.spectrum_to_csv(spec))
    print(dest)
    return EXIT_OK


def _synth_params(args) -> mbvd.MbvdParams:
    direct = [args.rm, args.lm, args.cm]
    targets = [args.fs, args.kt2, args.qs]
    if all(v is not None for v in direct):
        return mbvd.MbvdParams(args.rm, args.lm, args.cm, args.c0, args.r0 or 0.0, args.rs or 0.0)
    if all(v is not None for v in targets):
        return mbvd.MbvdParams.from_targets(args.fs, args.kt2, args.qs, args.c0,
                                            Qp=args.qp, Rs=args.rs or 0.0)
    raise UsageError("give either --rm --lm --cm or --fs --kt2 --qs (with --c0)")


def cmd_synth(args) -> int:
    try:
        p = _synth_params(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    m = mbvd.derive_metrics(p)
    lo = args.f_min if args.f_min is not None else 0.8 * m.fs
    hi = args.f_max if args.f_max is not None else 1.2 * m.fp
    if not 0 < lo < hi or args.points < 2:
        raise UsageError("need 0 < f_min < f_max and at least 2 points")
    f = np.linspace(lo, hi, args.points)
    rng = np.random.default_rng(args.seed)
    spec = mbvd.synthesize(p, f, noise=args.noise, rng=rng)
    out = _out_dir(args)
    if args.format == "csv":
        dest = out / f"{args.name}.csv"
        _write(dest, rfio.spectrum_to_csv(spec))
    else:
        data = rfio.series_two_port(spec.frequencies, spec.y, z0=args.z0)
        note = ("mBVD synthesis " + " ".join(f"{k}={v!r}" for k, v in zip(mbvd.PARAM_NAMES, p.as_array()))
                + f"\nnoise={args.noise!r} seed={args.seed}")
        dest = out / f"{args.name}.s2p"
        _write(dest, rfio.write_touchstone(data, fmt="RI", unit="HZ", comment=note))
    print(dest)
    print(f"fs={m.fs!r} fp={m.fp!r} kt2={m.kt2_eff!r} Qs={m.Qs!r} FoM={m.FoM!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they do not overwrite values given
    # before the subcommand name
    def d(v):
        return argparse.SUPPRESS if suppress else v

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--out", default=d("."), help="output directory (default: current)")
    g.add_argument("--jobs", type=int, default=d(1), help="worker processes for sweeps")
    g.add_argument("--seed", type=int, default=d(0), help="seed for every random draw")
    g.add_argument("--verbose", "-v", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    ap = argparse.ArgumentParser(prog="lbaw", description=__doc__.splitlines()[0],
                                 parents=[_global_flags(suppress=False)])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rotate", parents=[common], help="rotate a material into device axes")
    p.add_argument("--material", required=True)
    p.add_argument("--euler", type=float, nargs=3, required=True, metavar=("PHI", "THETA", "PSI"))
    p.add_argument("--materials", help="material database file (default: bundled)")
    p.add_argument("--method", choices=("bond", "full"), default="bond")
    p.add_argument("--name", help="name of the rotated entry and output file")
    p.set_defaults(func=cmd_rotate)

    p = sub.add_parser("disperse", parents=[common], help="w_m/w_p sweep from a config file")
    p.add_argument("config")
    p.add_argument("--ratios", type=float, nargs="+", help="override the ratio grid")
    p.add_argument("--svg", action="store_true", help="also write dispersion.svg")
    p.set_defaults(func=cmd_disperse)

    p = sub.add_parser("fit", parents=[common], help="fit the mBVD model to a spectrum")
    p.add_argument("input")
    p.add_argument("--format", choices=("auto", "s2p", "csv"), default="auto")
    p.add_argument("--svg", action="store_true", help="also write a |Y| overlay chart")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", parents=[common], help="synthesize an mBVD spectrum")
    for flag in ("rm", "lm", "cm", "r0", "rs", "fs", "kt2", "qs", "qp"):
        p.add_argument(f"--{flag}", type=float)
    p.add_argument("--c0", type=float, default=1e-12)
    p.add_argument("--points", type=int, default=2001)
    p.add_argument("--f-min", type=float)
    p.add_argument("--f-max", type=float)
    p.add_argument("--noise", type=float, default=0.0, help="relative complex Gaussian noise")
    p.add_argument("--z0", type=float, default=50.0)
    p.add_argument("--format", choices=("s2p", "csv"), default="s2p")
    p.add_argument("--name", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", parents=[common], help="s2p to -Y12 admittance CSV")
    p.add_argument("input")
    p.set_defaults(func=cmd_convert)
    return ap


_USAGE_ERRORS = (UsageError, dispersion.ConfigError, materials.MaterialError, mesh.MeshError)
_DATA_ERRORS = (rfio.RFIOError, mbvd.NoResonanceFound, dispersion.InsufficientData,
                dispersion.DomainError, ValueError)
_NUMERICAL_ERRORS = (mbvd.FitDiverged, fem.FEMError, np.linalg.LinAlgError, FloatingPointError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", rfio.SingularConversion)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
