"""Coupled piezoelectric FEM of the periodic unit cell.

Generalized plane strain: fields depend on (x, z) only, each node carries
``(u_x, u_y, u_z, phi)``.  Bilinear quads with 2x2 Gauss quadrature.

Sign convention: with ``T = c S - e^T E``, ``D = e S + eps E`` and
``E = -grad(phi)`` the assembled blocks are::

    K_uu   =  int Bu^T c Bu          (positive semi-definite)
    K_uphi =  int Bu^T e^T Bphi
    K_phiphi = -int Bphi^T eps Bphi  (negative semi-definite)

so the statically condensed stiffness ``K_uu - K_uphi K_phiphi^-1 K_uphi^T``
is never softer than ``K_uu``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment

from .materials import MaterialTensors
from .mesh import ELECTRODE_A, ELECTRODE_B, PIEZO, Mesh, corner_jacobians

log = logging.getLogger(__name__)

RIGID_BODY_CUTOFF_HZ = 1e6
MAC_PAIR_THRESHOLD = 0.8
NEGATIVE_EIG_RTOL = 1e-6
NOISE_FLOOR = 1e-3
DENSE_LIMIT = 6000

_GAUSS = [(-1 / math.sqrt(3), -1 / math.sqrt(3)), (1 / math.sqrt(3), -1 / math.sqrt(3)),
          (1 / math.sqrt(3), 1 / math.sqrt(3)), (-1 / math.sqrt(3), 1 / math.sqrt(3))]
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class FEMError(Exception):
    pass


class MissingMaterial(FEMError):
    pass


class SingularElement(FEMError):
    pass


class EigSolverFailure(FEMError):
    pass


class Electrical(str, enum.Enum):
    SHORT = "short"
    FLOAT = "float"


class ModeLabel(NamedTuple):
    family: str   # S0, SH0, Flexural, Other
    order: str    # fundamental, overtone-k


# ---------------------------------------------------------------------------
# element kernels

def _shape(xi: float, eta: float):
    N = 0.25 * (1 + _CORNERS[:, 0] * xi) * (1 + _CORNERS[:, 1] * eta)
    dN = 0.25 * np.column_stack([_CORNERS[:, 0] * (1 + _CORNERS[:, 1] * eta),
                                 _CORNERS[:, 1] * (1 + _CORNERS[:, 0] * xi)])
    return N, dN


def _gradients(X: np.ndarray, xi: float, eta: float):
    """Shape values, physical gradients (ne, 4, 2) and det J at one point."""
    N, dN = _shape(xi, eta)
    J = np.einsum("eia,ib->eab", X, dN)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    dNdx = np.einsum("ib,eba->eia", dN, inv)
    return N, dNdx, det


def strain_matrix(dNdx: np.ndarray) -> np.ndarray:
    """Voigt strain operator (ne, 6, 12) for DOFs ordered (ux, uy, uz) per node."""
    ne = dNdx.shape[0]
    B = np.zeros((ne, 6, 12))
    Nx, Nz = dNdx[:, :, 0], dNdx[:, :, 1]
    B[:, 0, 0::3] = Nx          # S1 = du_x/dx
    B[:, 2, 2::3] = Nz          # S3 = du_z/dz
    B[:, 3, 1::3] = Nz          # S4 = du_y/dz
    B[:, 4, 0::3] = Nz          # S5 = du_x/dz + du_z/dx
    B[:, 4, 2::3] = Nx
    B[:, 5, 1::3] = Nx          # S6 = du_y/dx
    return B


def gradient_matrix(dNdx: np.ndarray) -> np.ndarray:
    """grad(phi) operator (ne, 3, 4); the y-derivative vanishes."""
    G = np.zeros((dNdx.shape[0], 3, 4))
    G[:, 0, :] = dNdx[:, :, 0]
    G[:, 2, :] = dNdx[:, :, 1]
    return G


def _element_matrices(X: np.ndarray, mat: MaterialTensors):
    ne = X.shape[0]
    Kuu = np.zeros((ne, 12, 12))
    Kup = np.zeros((ne, 12, 4))
    Kpp = np.zeros((ne, 4, 4))
    Me = np.zeros((ne, 12, 12))
    eT = mat.e.T
    for xi, eta in _GAUSS:
        N, dNdx, det = _gradients(X, xi, eta)
        if np.any(det <= 0):
            bad = int(np.argmin(det))
            raise SingularElement(f"non-positive Jacobian {det[bad]:.3g} in element batch index {bad}")
        Bu = strain_matrix(dNdx)
        G = gradient_matrix(dNdx)
        w = det[:, None, None]
        Kuu += w * np.einsum("eia,ij,ejb->eab", Bu, mat.c_E, Bu, optimize=True)
        Kup += w * np.einsum("eia,ij,ejb->eab", Bu, eT, G, optimize=True)
        Kpp -= w * np.einsum("eia,ij,ejb->eab", G, mat.eps_S, G, optimize=True)
        NN = np.outer(N, N)
        Me += mat.rho * det[:, None, None] * np.kron(NN, np.eye(3))[None]
    return Kuu, Kup, Kpp, Me


def assemble_global(mesh: Mesh, materials: Mapping[int, MaterialTensors]):
    """Unreduced sparse blocks ``(K_uu, K_uphi, K_phiphi, M)`` on all nodes."""
    n = mesh.n_nodes
    rows_uu, cols_uu, vals_uu, vals_m = [], [], [], []
    rows_up, cols_up, vals_up = [], [], []
    rows_pp, cols_pp, vals_pp = [], [], []
    for tag in np.unique(mesh.region):
        tag = int(tag)
        if tag not in materials:
            raise MissingMaterial(f"no material assigned to region {tag}")
        sel = np.flatnonzero(mesh.region == tag)
        el = mesh.elements[sel]
        Kuu, Kup, Kpp, Me = _element_matrices(mesh.nodes[el], materials[tag])
        udofs = (3 * el[:, :, None] + np.arange(3)).reshape(len(el), 12)
        rows_uu.append(np.repeat(udofs, 12, axis=1).ravel())
        cols_uu.append(np.tile(udofs, 12).ravel())
        vals_uu.append(Kuu.ravel())
        vals_m.append(Me.ravel())
        rows_up.append(np.repeat(udofs, 4, axis=1).ravel())
        cols_up.append(np.tile(el, 12).ravel())
        vals_up.append(Kup.ravel())
        rows_pp.append(np.repeat(el, 4, axis=1).ravel())
        cols_pp.append(np.tile(el, 4).ravel())
        vals_pp.append(Kpp.ravel())

    def build(vals, rows, cols, shape):
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=shape).tocsr()

    Kuu = build(vals_uu, rows_uu, cols_uu, (3 * n, 3 * n))
    M = build(vals_m, rows_uu, cols_uu, (3 * n, 3 * n))
    Kup = build(vals_up, rows_up, cols_up, (3 * n, n))
    Kpp = build(vals_pp, rows_pp, cols_pp, (n, n))
    return Kuu, Kup, Kpp, M


# ---------------------------------------------------------------------------
# reduced system

@dataclass(eq=False)
class SystemMatrices:
    K_uu: sp.csr_matrix
    K_uphi: sp.csr_matrix
    K_phiphi: sp.csr_matrix
    M: sp.csr_matrix
    mech_map: np.ndarray            # full mechanical dof -> reduced index
    phi_map: np.ndarray             # node -> reduced potential index
    masters: Dict[int, int]         # electrode net tag -> reduced potential index
    gauge: int                      # reference potential when there are no nets
    n_full_dofs: int
    n_periodic_dofs: int
    mesh: Mesh = field(repr=False)
    materials: Mapping[int, MaterialTensors] = field(repr=False)

    @property
    def n_u(self) -> int:
        return self.K_uu.shape[0]

    @property
    def n_phi(self) -> int:
        return self.K_phiphi.shape[0]


def _selection(mapping: np.ndarray, n_red: int) -> sp.csr_matrix:
    n = len(mapping)
    return sp.csr_matrix((np.ones(n), (np.arange(n), mapping)), shape=(n, n_red))


def assemble(mesh: Mesh, materials: Mapping[int, MaterialTensors]) -> SystemMatrices:
    """Assemble and apply periodic and electrode-net ties."""
    for tag in np.unique(mesh.region):
        if int(tag) not in materials:
            raise MissingMaterial(f"no material assigned to region {int(tag)}")
        if int(tag) in (ELECTRODE_A, ELECTRODE_B) and materials[int(tag)].is_piezoelectric:
            raise FEMError("electrode materials must have zero piezoelectric matrix")
    if np.any(corner_jacobians(mesh) <= 0):
        raise SingularElement("mesh contains elements with non-positive Jacobian")

    Kuu, Kup, Kpp, M = assemble_global(mesh, materials)
    n = mesh.n_nodes

    # periodic ties: right edge node -> left edge node at the same z
    rep = np.arange(n)
    rep[mesh.right] = mesh.left
    _, node_red = np.unique(rep, return_inverse=True)
    n_red = int(node_red.max()) + 1
    mech_map = (3 * node_red[:, None] + np.arange(3)).ravel()

    # electrode ties: every node of a net shares one master potential, masters last
    net_of = np.full(n_red, -1)
    for tag, nodes in sorted(mesh.electrode_nodes.items()):
        net_of[node_red[nodes]] = tag
    free_nodes = np.flatnonzero(net_of < 0)
    red_phi = np.empty(n_red, dtype=int)
    red_phi[free_nodes] = np.arange(len(free_nodes))
    masters = {}
    for k, tag in enumerate(sorted(mesh.electrode_nodes)):
        masters[tag] = len(free_nodes) + k
        red_phi[net_of == tag] = masters[tag]
    n_phi = len(free_nodes) + len(masters)
    phi_map = red_phi[node_red]

    Pu = _selection(mech_map, 3 * n_red)
    Pp = _selection(phi_map, n_phi)
    sym = lambda A: ((A + A.T) * 0.5).tocsr()
    return SystemMatrices(
        K_uu=sym(Pu.T @ Kuu @ Pu), K_uphi=(Pu.T @ Kup @ Pp).tocsr(),
        K_phiphi=sym(Pp.T @ Kpp @ Pp), M=sym(Pu.T @ M @ Pu),
        mech_map=mech_map, phi_map=phi_map, masters=masters,
        gauge=int(phi_map[0]), n_full_dofs=4 * n, n_periodic_dofs=4 * n_red,
        mesh=mesh, materials=dict(materials))


def _potential_split(sys: SystemMatrices, electrical: Electrical):
    electrical = Electrical(electrical)
    if sys.masters:
        a, b = sys.masters[ELECTRODE_A], sys.masters[ELECTRODE_B]
        fixed = [a, b] if electrical is Electrical.SHORT else [a]
    else:
        fixed = [sys.gauge]
    free = np.setdiff1d(np.arange(sys.n_phi), fixed)
    return free, np.array(fixed)


def condensed_stiffness(sys: SystemMatrices, electrical: Electrical):
    """Dense ``K* = K_uu - K_uphi K_phiphi^-1 K_uphi^T`` and the recovery operator.

    The second return value maps displacement to free potentials.
    """
    free, _ = _potential_split(sys, electrical)
    Kuu = sys.K_uu.toarray()
    Kuf = sys.K_uphi[:, free].toarray()
    neg_Kff = -sys.K_phiphi[free][:, free].toarray()
    if not np.any(Kuf):
        return Kuu, np.zeros((len(free), sys.n_u)), free
    cho = sla.cho_factor(neg_Kff)
    R = sla.cho_solve(cho, Kuf.T)        # phi_free = R @ u
    Ks = Kuu + Kuf @ R
    return 0.5 * (Ks + Ks.T), R, free


# ---------------------------------------------------------------------------
# modes

@dataclass(eq=False)
class ModeSolution:
    f: float
    u: np.ndarray                    # (n_nodes, 3)
    phi: np.ndarray                  # (n_nodes,)
    u_red: np.ndarray                # reduced mechanical vector, u^T M u = 1
    polarization: np.ndarray         # (p_x, p_y, p_z)
    midline_x: np.ndarray
    sigma_xx_midline: np.ndarray
    sigma_xy_midline: np.ndarray
    electrical: Electrical
    label: ModeLabel = ModeLabel("Other", "fundamental")


def eigenpairs(sys: SystemMatrices, electrical: Electrical, f_max: float,
               n_modes: Optional[int] = None, solver: str = "auto"):
    """Eigenfrequencies (Hz, rigid modes included) up to ``f_max`` and M-normalized vectors."""
    if solver == "auto":
        solver = "dense" if sys.n_u <= DENSE_LIMIT else "sparse"
    w2max = (2 * math.pi * f_max) ** 2
    if solver == "dense":
        Ks, R, free = condensed_stiffness(sys, electrical)
        Md = sys.M.toarray()
        try:
            lam, vec = sla.eigh(Ks, Md, subset_by_value=(-np.inf, w2max), driver="gvx")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigSolverFailure(str(exc)) from exc
        if lam.size:
            scale = max(abs(lam).max(), w2max)
            if lam.min() < -NEGATIVE_EIG_RTOL * scale:
                raise EigSolverFailure(f"negative eigenvalue {lam.min():.3g} (scale {scale:.3g})")
    elif solver == "sparse":
        lam, vec, R, free = _sparse_eigs(sys, electrical, w2max, n_modes or 40)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    f = np.sqrt(np.clip(lam, 0.0, None)) / (2 * math.pi)
    return f, vec, R, free


def _sparse_eigs(sys, electrical, w2max, k):
    free, _ = _potential_split(sys, electrical)
    Kuf = sys.K_uphi[:, free].tocsc()
    Kff = sys.K_phiphi[free][:, free].tocsc()
    # potentials scaled so both blocks have similar magnitude; the raw saddle
    # matrix spans ~20 decades and LU loses most of its digits
    c = math.sqrt(abs(sys.K_uu).max() / max(abs(Kff).max(), 1e-300))
    Kuf, Kff = (Kuf * c).tocsc(), (Kff * c * c).tocsc()
    Kff_lu = spla.splu(Kff)
    n = sys.n_u
    sigma = -0.01 * w2max
    S = sp.bmat([[sys.K_uu - sigma * sys.M, Kuf], [Kuf.T, Kff]], format="csc")
    S_lu = spla.splu(S)
    pad = np.zeros(len(free))

    def opinv(x):
        return S_lu.solve(np.concatenate([x, pad]))[:n]

    def kstar(x):
        return sys.K_uu @ x - Kuf @ Kff_lu.solve(Kuf.T @ x)

    A = spla.LinearOperator((n, n), matvec=kstar, dtype=float)
    OP = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    try:
        lam, vec = spla.eigsh(A, k=min(k, n - 2), M=sys.M, sigma=sigma, OPinv=OP,
                              which="LM", v0=np.ones(n))
    except spla.ArpackError as exc:
        raise EigSolverFailure(str(exc)) from exc
    order = np.argsort(lam)
    lam, vec = lam[order], vec[:, order]
    keep = lam <= w2max
    lam, vec = lam[keep], vec[:, keep]
    vec = vec / np.sqrt(np.einsum("ik,ik->k", vec, sys.M @ vec))

    class _Recover:
        def __matmul__(self, u):
            return -c * Kff_lu.solve(Kuf.T @ u)

    return lam, vec, _Recover(), free


def solve_modes(sys: SystemMatrices, electrical: Electrical, f_window=(1e6, 6e9),
                n_modes: Optional[int] = None, solver: str = "auto") -> List[ModeSolution]:
    """Modes in ``f_window`` (rigid modes below 1 MHz dropped), lowest first."""
    electrical = Electrical(electrical)
    f_min, f_max = f_window
    freqs, vecs, R, free = eigenpairs(sys, electrical, f_max, n_modes, solver)
    lo = max(f_min, RIGID_BODY_CUTOFF_HZ)
    idx = [i for i, f in enumerate(freqs) if lo <= f <= f_max]
    if n_modes is not None:
        idx = idx[:n_modes]
    modes = []
    for i in idx:
        u_red = vecs[:, i].copy()
        norm = float(u_red @ (sys.M @ u_red))
        u_red /= math.sqrt(norm)
        # fix the sign so the largest component is positive (deterministic output)
        if u_red[np.argmax(np.abs(u_red))] < 0:
            u_red = -u_red
        phi_red = np.zeros(sys.n_phi)
        phi_red[free] = R @ u_red
        modes.append(_make_mode(sys, float(freqs[i]), u_red, phi_red, electrical))
    return modes


def _make_mode(sys, f, u_red, phi_red, electrical) -> ModeSolution:
    Mu = sys.M @ u_red
    pol = np.array([u_red[c::3] @ Mu[c::3] for c in range(3)])
    pol = pol / pol.sum()
    u = u_red[sys.mech_map].reshape(-1, 3)
    phi = phi_red[sys.phi_map]
    xm, stress = midline_stress(sys.mesh, sys.materials, u, phi)
    mode = ModeSolution(f=f, u=u, phi=phi, u_red=u_red, polarization=pol, midline_x=xm,
                        sigma_xx_midline=stress[:, 0], sigma_xy_midline=stress[:, 5],
                        electrical=electrical)
    mode.label = classify(mode)
    return mode


def midline_stress(mesh: Mesh, materials, u: np.ndarray, phi: np.ndarray):
    """Stress (Voigt, Pa) sampled at each element centre-line crossing z = t/2."""
    if mesh.zs is None or mesh.geometry is None:
        return np.zeros(0), np.zeros((0, 6))
    zs = mesh.zs
    zmid = 0.5 * (zs[0] + zs[-1])
    layer = min(int(np.searchsorted(zs, zmid, side="right")) - 1, len(zs) - 2)
    nx = len(mesh.xs) - 1
    els = np.arange(layer * nx, (layer + 1) * nx)
    eta = 2 * (zmid - zs[layer]) / (zs[layer + 1] - zs[layer]) - 1
    X = mesh.nodes[mesh.elements[els]]
    _, dNdx, _ = _gradients(X, 0.0, eta)
    Bu = strain_matrix(dNdx)
    G = gradient_matrix(dNdx)
    ue = u[mesh.elements[els]].reshape(len(els), 12)
    pe = phi[mesh.elements[els]]
    S = np.einsum("eij,ej->ei", Bu, ue)
    gphi = np.einsum("eij,ej->ei", G, pe)
    T = np.zeros((len(els), 6))
    for tag in np.unique(mesh.region[els]):
        m = materials[int(tag)]
        sel = mesh.region[els] == tag
        T[sel] = S[sel] @ m.c_E.T + gphi[sel] @ m.e
    xm = 0.5 * (mesh.xs[:-1] + mesh.xs[1:])
    return xm, T


def sign_changes(samples: np.ndarray, periodic: bool = True) -> int:
    """Sign changes after dropping samples below the noise floor."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        return 0
    peak = np.max(np.abs(s))
    if peak == 0:
        return 0
    kept = np.sign(s[np.abs(s) >= NOISE_FLOOR * peak])
    n = int(np.count_nonzero(kept[1:] != kept[:-1]))
    if periodic and kept.size > 1 and kept[0] != kept[-1]:
        n += 1
    return n


def order_label(n_changes: int) -> str:
    k = (n_changes + 1) // 2
    return "fundamental" if k <= 1 else f"overtone-{k}"


def classify(mode: ModeSolution) -> ModeLabel:
    """Family from polarization; order from midline stress sign changes.

    Order is counted on sigma_xx except for SH0 modes, whose dominant
    stress is sigma_xy.
    """
    px, py, pz = mode.polarization
    if py > 0.5:
        family = "SH0"
    elif px > 0.5 and px > pz:
        family = "S0"
    elif pz > 0.5:
        family = "Flexural"
    else:
        family = "Other"
    stress = mode.sigma_xy_midline if family == "SH0" else mode.sigma_xx_midline
    return ModeLabel(family, order_label(sign_changes(stress)))


# ---------------------------------------------------------------------------
# pairing

def mac(a: np.ndarray, b: np.ndarray, M=None) -> float:
    Ma = a if M is None else M @ a
    Mb = b if M is None else M @ b
    den = float(a @ Ma) * float(b @ Mb)
    return float((a @ Mb) ** 2 / den) if den > 0 else 0.0


@dataclass
class ModePair:
    fs: float
    fp: float
    short: ModeSolution
    float: ModeSolution
    mac: float

    @property
    def label(self) -> ModeLabel:
        return self.short.label


@dataclass
class PairingResult:
    pairs: List[ModePair]
    unpaired_short: List[ModeSolution]
    unpaired_float: List[ModeSolution]


def pair_modes(short_modes: Sequence[ModeSolution], float_modes: Sequence[ModeSolution],
               M=None, threshold: float = MAC_PAIR_THRESHOLD, subspace: bool = True) -> PairingResult:
    """Match short/float modes by MAC.

    First a one-to-one assignment maximizing MAC.  When ``subspace`` is set,
    a short mode left without a partner (its float counterpart hybridized with
    a nearby mode) is paired with the group of float modes that each carry
    MAC >= 0.1 and together reach ``threshold``; ``fp`` is then the
    MAC-weighted centroid of their squared frequencies.
    """
    if not short_modes or not float_modes:
        return PairingResult([], list(short_modes), list(float_modes))
    U = np.column_stack([m.u_red for m in short_modes])
    V = np.column_stack([m.u_red for m in float_modes])
    MU = U if M is None else M @ U
    MV = V if M is None else M @ V
    cross = U.T @ MV
    macs = cross ** 2 / np.outer(np.einsum("ik,ik->k", U, MU), np.einsum("ik,ik->k", V, MV))
    rows, cols = linear_sum_assignment(-macs)
    pairs, used_s, used_f = [], set(), set()
    for i, j in zip(rows, cols):
        s, f = short_modes[i], float_modes[j]
        # equal frequencies within round-off are allowed
        if macs[i, j] >= threshold and f.f >= s.f * (1 - 1e-12):
            pairs.append(ModePair(s.f, max(f.f, s.f), s, f, float(macs[i, j])))
            used_s.add(i)
            used_f.add(j)
    if subspace:
        for i, s in enumerate(short_modes):
            if i in used_s:
                continue
            group = np.flatnonzero(macs[i] >= 0.1)
            total = float(macs[i, group].sum())
            if len(group) < 2 or total < threshold:
                continue
            w = macs[i, group]
            f2 = np.array([float_modes[j].f for j in group]) ** 2
            fp = float(np.sqrt(w @ f2 / w.sum()))
            if fp >= s.f * (1 - 1e-12):
                best = float_modes[int(group[np.argmax(w)])]
                pairs.append(ModePair(s.f, max(fp, s.f), s, best, min(total, 1.0)))
                used_s.add(i)
                used_f.update(int(j) for j in group)
    pairs.sort(key=lambda p: p.fs)
    return PairingResult(pairs,
                         [m for i, m in enumerate(short_modes) if i not in used_s],
                         [m for j, m in enumerate(float_modes) if j not in used_f])


# ---------------------------------------------------------------------------
# energy

def element_strain_energy(mesh: Mesh, materials, u: np.ndarray) -> np.ndarray:
    """Per-element elastic strain energy 1/2 int S^T c S dA of nodal field ``u``."""
    out = np.zeros(mesh.n_elements)
    for tag in np.unique(mesh.region):
        sel = np.flatnonzero(mesh.region == tag)
        X = mesh.nodes[mesh.elements[sel]]
        ue = u[mesh.elements[sel]].reshape(len(sel), 12)
        c = materials[int(tag)].c_E
        for xi, eta in _GAUSS:
            _, dNdx, det = _gradients(X, xi, eta)
            S = np.einsum("eij,ej->ei", strain_matrix(dNdx), ue)
            out[sel] += 0.5 * det * np.einsum("ei,ij,ej->e", S, c, S)
    return out


def energy_partition(mode: ModeSolution, mesh: Mesh, materials) -> float:
    """Energy confinement ratio: piezo strain energy over total strain energy."""
    U = element_strain_energy(mesh, materials, mode.u)
    u_piezo = U[mesh.region == PIEZO].sum()
    total = U.sum()
    return float(u_piezo / total) if total > 0 else 1.0


def mode_to_csv(mode: ModeSolution, mesh: Mesh) -> str:
    """Per-node mode shape table; ``midline`` flags nodes nearest z = t/2."""
    z = mesh.nodes[:, 1]
    zmid = 0.5 * (z.min() + z.max())
    znear = np.unique(z)[np.argmin(np.abs(np.unique(z) - zmid))]
    lines = ["x_m,z_m,u_x,u_y,u_z,phi,midline"]
    for (x, zz), (ux, uy, uz), p in zip(mesh.nodes, mode.u, mode.phi):
        lines.append(f"{x!r},{zz!r},{ux!r},{uy!r},{uz!r},{p!r},{int(zz == znear)}")
    return "\n".join(lines) + "\n"
