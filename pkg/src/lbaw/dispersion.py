"""w_m/w_p sweeps: coupling, confinement and branch tracking per mode family."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import fem
from .materials import EulerAngles, MaterialTensors, default_materials, load_material_db, rotate_tensors
from .mesh import ELECTRODE_A, ELECTRODE_B, PIEZO, UnitCellGeometry, build_unit_cell, mesh_quality

log = logging.getLogger(__name__)

BRANCH_MAC = 0.6
CSV_HEADER = ["wm_wp", "mode", "order", "fs_hz", "fp_hz", "kt2", "eta", "mac"]


class DispersionError(Exception):
    pass


class DomainError(DispersionError, ValueError):
    pass


class InsufficientData(DispersionError):
    pass


class ConfigError(DispersionError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def default_ratios(lo: float = 0.05, hi: float = 1.5, n: int = 30) -> Tuple[float, ...]:
    return tuple(float(r) for r in np.geomspace(lo, hi, n))


def kt2_from_pair(fs: float, fp: float, convention: str = "effective") -> float:
    """Coupling from resonance/antiresonance.

    ``effective``: ``1 - (fs/fp)^2``; ``berlincourt``: ``pi^2/8 * (1 - (fs/fp)^2)``.
    """
    if not (fs > 0 and fp > 0):
        raise DomainError(f"frequencies must be positive, got fs={fs}, fp={fp}")
    if fs > fp:
        raise DomainError(f"fs={fs} exceeds fp={fp}")
    k = 1.0 - (fs / fp) ** 2
    if convention == "effective":
        return k
    if convention == "berlincourt":
        return math.pi ** 2 / 8.0 * k
    raise ValueError(f"unknown kt2 convention {convention!r}")


@dataclass(frozen=True)
class DispersionPoint:
    wm_wp: float
    mode: str
    order: str
    fs: float
    fp: float
    kt2: float
    eta: float
    mac: float

    def __post_init__(self):
        if not self.fp >= self.fs:
            raise DomainError(f"fp < fs at ratio {self.wm_wp}")
        if not 0.0 <= self.kt2 < 1.0:
            raise DomainError(f"kt2 out of range: {self.kt2}")
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"eta out of range: {self.eta}")

    @property
    def family(self) -> Tuple[str, str]:
        return (self.mode, self.order)


def _default_orientations():
    return {"S0": EulerAngles(-90, -90, 30), "SH0": EulerAngles(-90, -90, -10)}


@dataclass(frozen=True)
class SweepConfig:
    t_film: float = 100e-9
    t_recess: float = 80e-9
    w_p: float = 2e-6
    piezo: str = "linbo3"
    electrode: str = "alsicu"
    orientations: Dict[str, EulerAngles] = field(default_factory=_default_orientations)
    ratios: Tuple[float, ...] = field(default_factory=default_ratios)
    orders: Tuple[str, ...] = ("fundamental", "overtone-3")
    f_window: Tuple[float, float] = (1e6, 6e9)
    nx_per_micron: float = 10.0
    nz: int = 5
    min_segment_elements: int = 4
    kt2_convention: str = "effective"
    piezo_scale: float = 1.0
    materials_file: Optional[str] = None

    def __post_init__(self):
        rs = tuple(sorted(float(r) for r in self.ratios))
        if not rs:
            raise ConfigError("ratio grid is empty")
        if rs[0] < 0 or any(b <= a for a, b in zip(rs, rs[1:])):
            raise ConfigError("ratio grid must be non-negative without duplicates")
        object.__setattr__(self, "ratios", rs)
        if not self.orientations:
            raise ConfigError("no mode family orientations given")
        for fam in self.orientations:
            if fam not in ("S0", "SH0", "Flexural", "Other"):
                raise ConfigError(f"unknown mode family {fam!r}")
        UnitCellGeometry(self.t_film, self.t_recess, self.w_p, 0.0)
        if self.f_window[0] >= self.f_window[1]:
            raise ConfigError("empty frequency window")

    def geometry(self, ratio: float) -> UnitCellGeometry:
        return UnitCellGeometry(self.t_film, self.t_recess, self.w_p, ratio * self.w_p)

    def load_materials(self) -> Dict[str, MaterialTensors]:
        if self.materials_file:
            return load_material_db(Path(self.materials_file).read_text())
        return default_materials()


# ---------------------------------------------------------------------------
# config file

_FLOAT_KEYS = {"t_film", "t_recess", "w_p", "nx_per_micron", "piezo_scale"}


def parse_sweep_config(text: str, base_dir: Optional[Path] = None) -> SweepConfig:
    """Parse the ``key = value`` sweep configuration format."""
    kw: dict = {}
    orientations = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        toks = value.split()
        try:
            if key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key in ("nz", "min_segment_elements"):
                kw[key] = int(value)
            elif key in ("piezo", "electrode", "kt2_convention"):
                kw[key] = value
            elif key == "materials":
                p = Path(value)
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                kw["materials_file"] = str(p)
            elif key.startswith("euler."):
                if len(toks) != 3:
                    raise ConfigError(f"{key} needs 3 angles", lineno)
                orientations[key.split(".", 1)[1]] = EulerAngles(*map(float, toks))
            elif key == "ratios":
                if toks and toks[0] == "logspace":
                    if len(toks) != 4:
                        raise ConfigError("ratios = logspace <lo> <hi> <n>", lineno)
                    kw["ratios"] = default_ratios(float(toks[1]), float(toks[2]), int(toks[3]))
                else:
                    kw["ratios"] = tuple(float(t) for t in toks)
            elif key == "orders":
                kw["orders"] = tuple(toks)
            elif key == "f_window":
                if len(toks) != 2:
                    raise ConfigError("f_window needs 2 values", lineno)
                kw["f_window"] = (float(toks[0]), float(toks[1]))
            else:
                raise ConfigError(f"unknown key {key!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}", lineno) from None
    if orientations:
        kw["orientations"] = orientations
    try:
        return SweepConfig(**kw)
    except ConfigError:
        raise
    except Exception as exc:  # geometry errors and the like
        raise ConfigError(str(exc)) from exc


def format_sweep_config(cfg: SweepConfig) -> str:
    lines = [f"t_film = {cfg.t_film!r}", f"t_recess = {cfg.t_recess!r}", f"w_p = {cfg.w_p!r}",
             f"piezo = {cfg.piezo}", f"electrode = {cfg.electrode}"]
    for fam, a in cfg.orientations.items():
        lines.append(f"euler.{fam} = {a.phi!r} {a.theta!r} {a.psi!r}")
    lines += ["ratios = " + " ".join(repr(r) for r in cfg.ratios),
              "orders = " + " ".join(cfg.orders),
              f"f_window = {cfg.f_window[0]!r} {cfg.f_window[1]!r}",
              f"nx_per_micron = {cfg.nx_per_micron!r}", f"nz = {cfg.nz}",
              f"min_segment_elements = {cfg.min_segment_elements}",
              f"kt2_convention = {cfg.kt2_convention}", f"piezo_scale = {cfg.piezo_scale!r}"]
    if cfg.materials_file:
        lines.append(f"materials = {cfg.materials_file}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-ratio evaluation

@dataclass
class Candidate:
    ratio: float
    mode: str
    order: str
    fs: float
    fp: float
    kt2: float
    eta: float
    mac: float
    signature: np.ndarray


@dataclass
class RatioResult:
    family: str
    ratio: float
    candidates: List[Candidate]
    error: Optional[str] = None
    warnings: List[str] = field(default_factory=list)


def field_signature(mode: fem.ModeSolution, mesh, nx: int = 64, nz: int = 3) -> np.ndarray:
    """Displacement resampled on a normalized (x/period, z/t) grid, for cross-geometry MAC."""
    xs, zs = mesh.xs, mesh.zs
    U = mode.u.reshape(len(zs), len(xs), 3)
    sx = (np.arange(nx) + 0.5) / nx * xs[-1]
    sz = (np.arange(nz) + 0.5) / nz * zs[-1]
    Z, X = np.meshgrid(sz, sx, indexing="ij")
    pts = np.column_stack([Z.ravel(), X.ravel()])
    return np.concatenate([RegularGridInterpolator((zs, xs), U[..., c])(pts) for c in range(3)])


def build_system(cfg: SweepConfig, family: str, ratio: float, materials=None):
    materials = materials or cfg.load_materials()
    for name in (cfg.piezo, cfg.electrode):
        if name not in materials:
            raise ConfigError(f"unknown material {name!r}")
    piezo = rotate_tensors(materials[cfg.piezo], cfg.orientations[family])
    if cfg.piezo_scale != 1.0:
        piezo = piezo.with_piezo_scale(cfg.piezo_scale)
    metal = materials[cfg.electrode]
    mesh = build_unit_cell(cfg.geometry(ratio), cfg.nx_per_micron, cfg.nz,
                           min_segment_elements=cfg.min_segment_elements)
    return mesh, fem.assemble(mesh, {PIEZO: piezo, ELECTRODE_A: metal, ELECTRODE_B: metal})


def evaluate_ratio(cfg: SweepConfig, family: str, ratio: float) -> RatioResult:
    """Solve one geometry and return the paired candidates of ``family``."""
    try:
        mesh, sys_ = build_system(cfg, family, ratio)
        warns = []
        q = mesh_quality(mesh)
        if q["max_aspect_ratio"] > 50:
            warns.append(f"ratio {ratio:.4g}: max aspect ratio {q['max_aspect_ratio']:.1f}")
        f_lo, f_hi = cfg.f_window
        short = fem.solve_modes(sys_, fem.Electrical.SHORT, (f_lo, f_hi))
        # float modes shift up by up to kt2; widen so pairs near the top edge survive
        floating = fem.solve_modes(sys_, fem.Electrical.FLOAT, (f_lo, 1.5 * f_hi))
        pairing = fem.pair_modes(short, floating, sys_.M)
        out = []
        for p in pairing.pairs:
            if p.label.family != family or p.label.order not in cfg.orders:
                continue
            out.append(Candidate(
                ratio=ratio, mode=family, order=p.label.order, fs=p.fs, fp=p.fp,
                kt2=kt2_from_pair(p.fs, p.fp, cfg.kt2_convention),
                eta=fem.energy_partition(p.short, mesh, sys_.materials), mac=p.mac,
                signature=field_signature(p.short, mesh)))
        return RatioResult(family, ratio, out, warnings=warns)
    except Exception as exc:
        log.warning("ratio %.4g (%s) failed: %s", ratio, family, exc)
        return RatioResult(family, ratio, [], error=f"{type(exc).__name__}: {exc}")


def _evaluate_task(args):
    return evaluate_ratio(*args)


# ---------------------------------------------------------------------------
# sweep

@dataclass
class SweepResult:
    points: List[DispersionPoint]
    gaps: List[Tuple[str, str, float, str]]
    warnings: List[str] = field(default_factory=list)

    def family(self, mode: str, order: str) -> List[DispersionPoint]:
        return [p for p in self.points if p.mode == mode and p.order == order]

    def families(self) -> List[Tuple[str, str]]:
        seen = []
        for p in self.points:
            if p.family not in seen:
                seen.append(p.family)
        return seen


def _signature_mac(a: np.ndarray, b: np.ndarray) -> float:
    return fem.mac(a, b)


def track_branches(results: Sequence[RatioResult], orders: Sequence[str]):
    """Follow each (family, order) branch across ratios by MAC continuity."""
    by_family: Dict[str, List[RatioResult]] = {}
    for r in results:
        by_family.setdefault(r.family, []).append(r)
    points, gaps = [], []
    for family in by_family:
        rows = sorted(by_family[family], key=lambda r: r.ratio)
        for order in orders:
            prev = None
            for row in rows:
                cands = [c for c in row.candidates if c.order == order]
                if row.error:
                    gaps.append((family, order, row.ratio, row.error))
                    prev = None
                    continue
                if not cands:
                    gaps.append((family, order, row.ratio, "no paired mode"))
                    prev = None
                    continue
                chosen = None
                if prev is not None:
                    macs = [_signature_mac(prev.signature, c.signature) for c in cands]
                    best = int(np.argmax(macs))
                    if macs[best] >= BRANCH_MAC:
                        chosen = cands[best]
                    else:
                        gaps.append((family, order, row.ratio, f"branch restart (MAC {macs[best]:.2f})"))
                if chosen is None:
                    chosen = max(cands, key=lambda c: (c.kt2, c.eta))
                points.append(DispersionPoint(chosen.ratio, family, order, chosen.fs, chosen.fp,
                                              chosen.kt2, chosen.eta, chosen.mac))
                prev = chosen
    points.sort(key=lambda p: (p.mode, p.order, p.wm_wp))
    return points, gaps


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> SweepResult:
    """Evaluate every (family, ratio) and assemble tracked branches."""
    tasks = [(cfg, fam, r) for fam in cfg.orientations for r in cfg.ratios]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_task, tasks))
    else:
        results = [_evaluate_task(t) for t in tasks]
    points, gaps = track_branches(results, cfg.orders)
    warns = [w for r in results for w in r.warnings]
    return SweepResult(points, gaps, warns)


def find_optimum(points: Sequence[DispersionPoint]) -> DispersionPoint:
    """Maximum-kt2 point; ties go to larger eta, then smaller ratio."""
    if len(points) < 3:
        raise InsufficientData(f"need at least 3 points, got {len(points)}")
    return max(points, key=lambda p: (p.kt2, p.eta, -p.wm_wp))


def nearest_local_max(values: Sequence[float], index: int) -> int:
    """Index of the local maximum reached by hill-climbing from ``index``."""
    v = list(values)
    i = index
    while True:
        left = v[i - 1] if i > 0 else -math.inf
        right = v[i + 1] if i < len(v) - 1 else -math.inf
        if left <= v[i] >= right:
            return i
        i = i - 1 if left > right else i + 1


def export_csv(points: Sequence[DispersionPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in points:
        w.writerow([repr(p.wm_wp), p.mode, p.order, repr(p.fs), repr(p.fp),
                    repr(p.kt2), repr(p.eta), repr(p.mac)])
    return buf.getvalue()


def parse_csv(text: str) -> List[DispersionPoint]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError("missing dispersion CSV header")
    return [DispersionPoint(float(r[0]), r[1], r[2], float(r[3]), float(r[4]),
                            float(r[5]), float(r[6]), float(r[7])) for r in rows[1:] if r]


def summarize(result: SweepResult) -> List[dict]:
    out = []
    for mode, order in result.families():
        pts = result.family(mode, order)
        try:
            best = find_optimum(pts)
        except InsufficientData:
            continue
        out.append({"mode": mode, "order": order, "wm_wp": best.wm_wp, "kt2": best.kt2,
                    "fs_hz": best.fs, "fp_hz": best.fp, "eta": best.eta})
    return out
