"""Structured quad mesh of the periodic LBAW unit-cell cross-section.

The cell spans one electrical period ``2 * (w_p + w_m)`` along x and the film
thickness along z.  Along x it holds half a gap, electrode A, a full gap,
electrode B and another half gap, so the periodic edges sit in piezoelectric
material and the two electrodes have opposite polarity.  Electrodes are
recessed from the top surface down to ``t_film - t_recess``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

PIEZO = 0
ELECTRODE_A = 1
ELECTRODE_B = 2
REGION_NAMES = {PIEZO: "Piezo", ELECTRODE_A: "ElectrodeA", ELECTRODE_B: "ElectrodeB"}

ASPECT_WARNING = 50.0


class MeshError(Exception):
    pass


class DegenerateGeometry(MeshError):
    pass


class ResolutionTooCoarse(MeshError):
    pass


@dataclass(frozen=True)
class UnitCellGeometry:
    t_film: float
    t_recess: float
    w_p: float
    w_m: float

    def __post_init__(self):
        if not (0 < self.t_recess < self.t_film):
            raise DegenerateGeometry(
                f"need 0 < t_recess < t_film, got t_recess={self.t_recess}, t_film={self.t_film}")
        if not self.w_p > 0:
            raise DegenerateGeometry(f"w_p must be positive, got {self.w_p}")
        if not self.w_m >= 0:
            raise DegenerateGeometry(f"w_m must be non-negative, got {self.w_m}")

    @property
    def period(self) -> float:
        return 2.0 * (self.w_p + self.w_m)

    @property
    def ratio(self) -> float:
        return self.w_m / self.w_p

    def with_ratio(self, ratio: float) -> "UnitCellGeometry":
        return UnitCellGeometry(self.t_film, self.t_recess, self.w_p, ratio * self.w_p)

    def electrode_spans(self):
        """x-intervals of electrode A and B."""
        a0 = 0.5 * self.w_p
        b0 = a0 + self.w_m + self.w_p
        return (a0, a0 + self.w_m), (b0, b0 + self.w_m)


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray           # (n_nodes, 2) x, z in m
    elements: np.ndarray        # (n_el, 4) counterclockwise node indices
    region: np.ndarray          # (n_el,) region tag
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    electrode_nodes: Dict[int, np.ndarray] = field(default_factory=dict)
    geometry: Optional[UnitCellGeometry] = None
    xs: Optional[np.ndarray] = None
    zs: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_areas(self) -> np.ndarray:
        # shoelace over the quad corners
        p = self.nodes[self.elements]
        x, z = p[..., 0], p[..., 1]
        return 0.5 * np.sum(x * np.roll(z, -1, axis=1) - np.roll(x, -1, axis=1) * z, axis=1)

    def region_area(self, tag: int) -> float:
        return float(self.element_areas()[self.region == tag].sum())


def _segment_grid(widths, counts) -> np.ndarray:
    pts = [0.0]
    for w, n in zip(widths, counts):
        start = pts[-1]
        pts.extend(start + w * np.arange(1, n + 1) / n)
    return np.array(pts)


def build_unit_cell(geom: UnitCellGeometry, nx_per_micron: float = 10.0, nz: int = 5,
                    min_segment_elements: Optional[int] = None) -> Mesh:
    """Build the structured mesh of one unit cell.

    Every x-segment (half gap, electrode, gap, electrode, half gap) gets
    ``ceil(width * nx_per_micron)`` elements.  With ``min_segment_elements``
    unset, a gap or electrode spanned by fewer than 4 elements raises
    :class:`ResolutionTooCoarse`; when set, narrow segments are refined up to
    that count instead (graded mesh).
    """
    if nz < 5:
        raise ResolutionTooCoarse(f"nz must be >= 5, got {nz}")
    if nx_per_micron <= 0:
        raise ResolutionTooCoarse("nx_per_micron must be positive")

    if geom.w_m > 0:
        widths = [0.5 * geom.w_p, geom.w_m, geom.w_p, geom.w_m, 0.5 * geom.w_p]
        checked = [1, 2, 3]
    else:
        widths = [geom.w_p, geom.w_p]
        checked = [0, 1]
    counts = [max(1, math.ceil(w * 1e6 * nx_per_micron - 1e-9)) for w in widths]
    if min_segment_elements is None:
        for i in checked:
            if counts[i] < 4:
                raise ResolutionTooCoarse(
                    f"segment of width {widths[i]:.4g} m gets {counts[i]} elements; "
                    f"need >= 4 (increase nx_per_micron)")
    else:
        counts = [max(c, int(min_segment_elements)) for c in counts]
        counts[0] = max(counts[0], 2)
        counts[-1] = max(counts[-1], 2)
    xs = _segment_grid(widths, counts)
    xs[-1] = geom.period

    # z-grid: mandatory line at the recess bottom
    z_cut = geom.t_film - geom.t_recess
    n_bot = min(max(1, round(nz * z_cut / geom.t_film)), nz - 1)
    n_top = nz - n_bot
    zs = np.concatenate([np.linspace(0.0, z_cut, n_bot + 1),
                         np.linspace(z_cut, geom.t_film, n_top + 1)[1:]])

    nxp, nzp = len(xs), len(zs)
    X, Z = np.meshgrid(xs, zs)          # row j = z index
    nodes = np.column_stack([X.ravel(), Z.ravel()])
    idx = np.arange(nxp * nzp).reshape(nzp, nxp)
    n0 = idx[:-1, :-1].ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + 1 + nxp, n0 + nxp])

    xc = 0.5 * (xs[:-1] + xs[1:])
    zc = 0.5 * (zs[:-1] + zs[1:])
    XC, ZC = np.meshgrid(xc, zc)
    XC, ZC = XC.ravel(), ZC.ravel()
    region = np.full(len(elements), PIEZO, dtype=int)
    electrode_nodes = {}
    if geom.w_m > 0:
        for tag, (x0, x1) in zip((ELECTRODE_A, ELECTRODE_B), geom.electrode_spans()):
            inside = (XC > x0) & (XC < x1) & (ZC > z_cut)
            region[inside] = tag
            electrode_nodes[tag] = np.unique(elements[inside])

    return Mesh(nodes=nodes, elements=elements, region=region,
                left=idx[:, 0].copy(), right=idx[:, -1].copy(),
                electrode_nodes=electrode_nodes, geometry=geom, xs=xs, zs=zs)


_GP = np.array([-1.0, 1.0]) / math.sqrt(3.0)
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_derivatives(xi: float, eta: float) -> np.ndarray:
    """(4, 2) derivatives of bilinear shape functions w.r.t. (xi, eta)."""
    return 0.25 * np.column_stack([_CORNERS[:, 0] * (1 + _CORNERS[:, 1] * eta),
                                   _CORNERS[:, 1] * (1 + _CORNERS[:, 0] * xi)])


def corner_jacobians(mesh: Mesh) -> np.ndarray:
    """Jacobian determinants at the four corners of every element, (n_el, 4)."""
    X = mesh.nodes[mesh.elements]
    dets = []
    for xi, eta in _CORNERS:
        J = np.einsum("eia,ib->eab", X, shape_derivatives(xi, eta))
        dets.append(np.linalg.det(J))
    return np.column_stack(dets)


def mesh_quality(mesh: Mesh) -> dict:
    """Minimum corner Jacobian and maximum element aspect ratio."""
    X = mesh.nodes[mesh.elements]
    edges = np.linalg.norm(np.roll(X, -1, axis=1) - X, axis=2)
    aspect = edges.max(axis=1) / edges.min(axis=1)
    return {"min_jacobian": float(corner_jacobians(mesh).min()),
            "max_aspect_ratio": float(aspect.max())}


def mesh_to_csv(mesh: Mesh) -> str:
    """Two CSV tables separated by a blank line: nodes, then elements."""
    buf = io.StringIO()
    buf.write("node,x_m,z_m\n")
    for i, (x, z) in enumerate(mesh.nodes):
        buf.write(f"{i},{x!r},{z!r}\n")
    buf.write("\nelement,n0,n1,n2,n3,region\n")
    for k, (el, tag) in enumerate(zip(mesh.elements, mesh.region)):
        buf.write(f"{k},{el[0]},{el[1]},{el[2]},{el[3]},{REGION_NAMES[int(tag)]}\n")
    return buf.getvalue()
