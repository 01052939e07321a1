"""Anisotropic material constants and their rotation to device axes.

Tensors are stored in Voigt form: ``c_E`` is the 6x6 stiffness at constant
electric field, ``e`` the 3x6 piezoelectric stress matrix and ``eps_S`` the
3x3 clamped permittivity in F/m.

Orientation uses Z-X-Z Euler angles ``(phi, theta, psi)`` applied as a
passive rotation of the crystal axes into the device frame: rotate by
``phi`` about crystal Z, then ``theta`` about the new X, then ``psi`` about
the new Z.  Row ``i`` of :func:`rotation_matrix` is device axis ``i`` written
in crystal coordinates, so X-cut LiNbO3 with the film normal along crystal X
is reached with ``(-90, -90, psi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List

import numpy as np

EPS0 = 8.8541878128e-12

# Voigt index <-> tensor index pairs
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
_VOIGT = np.array([[0, 5, 4], [5, 1, 3], [4, 3, 2]])

SYMMETRY_RTOL = 1e-9


class MaterialError(Exception):
    pass


class InvalidMaterial(MaterialError):
    pass


class ParseError(MaterialError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MaterialError):
    pass


def _normalize_angle(a: float) -> float:
    r = math.fmod(float(a), 360.0)
    if r <= -180.0:
        r += 360.0
    elif r > 180.0:
        r -= 360.0
    return r


@dataclass(frozen=True)
class EulerAngles:
    """Z-X-Z Euler angles in degrees, normalized to (-180, 180]."""

    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        for name in ("phi", "theta", "psi"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"Euler angle {name} must be finite, got {v}")
            object.__setattr__(self, name, _normalize_angle(v))

    def inverse(self) -> "EulerAngles":
        return EulerAngles(-self.psi, -self.theta, -self.phi)

    def as_tuple(self):
        return (self.phi, self.theta, self.psi)


@dataclass(frozen=True, eq=False)
class MaterialTensors:
    name: str
    c_E: np.ndarray
    e: np.ndarray
    eps_S: np.ndarray
    rho: float
    source: str = ""

    def __post_init__(self):
        for attr, shape in (("c_E", (6, 6)), ("e", (3, 6)), ("eps_S", (3, 3))):
            arr = np.array(getattr(self, attr), dtype=float)
            if arr.shape != shape:
                raise InvalidMaterial(f"{self.name}: {attr} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def is_piezoelectric(self) -> bool:
        return bool(np.any(self.e != 0.0))

    def with_piezo_scale(self, s: float) -> "MaterialTensors":
        """Copy with the piezoelectric matrix scaled by ``s``."""
        return MaterialTensors(self.name, self.c_E, s * self.e, self.eps_S, self.rho, self.source)


def isotropic_stiffness(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[[0, 1, 2], [0, 1, 2]] = lam + 2 * mu
    c[[3, 4, 5], [3, 4, 5]] = mu
    return c


def isotropic_material(name: str, E: float, nu: float, rho: float, eps_rel: float = 1.0) -> MaterialTensors:
    return MaterialTensors(name, isotropic_stiffness(E, nu), np.zeros((3, 6)),
                           eps_rel * EPS0 * np.eye(3), rho)


def validate(mat: MaterialTensors) -> List[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    for label, a in (("c_E", mat.c_E), ("eps_S", mat.eps_S)):
        if not np.all(np.isfinite(a)):
            problems.append(f"{label} contains non-finite entries")
            continue
        scale = np.max(np.abs(a))
        asym = np.max(np.abs(a - a.T))
        if scale == 0 or asym > SYMMETRY_RTOL * scale:
            problems.append(f"{label} is not symmetric (max asymmetry {asym:.3g})")
        w = np.linalg.eigvalsh(0.5 * (a + a.T))
        if w.min() <= 0:
            problems.append(f"{label} is not positive definite (min eigenvalue {w.min():.3g})")
    if not np.all(np.isfinite(mat.e)):
        problems.append("e contains non-finite entries")
    if not (math.isfinite(mat.rho) and mat.rho > 0):
        problems.append(f"rho must be positive, got {mat.rho}")
    return problems


def rotation_matrix(angles: EulerAngles) -> np.ndarray:
    """Passive Z-X-Z rotation; rows are device axes in crystal coordinates."""
    phi, theta, psi = np.radians(angles.as_tuple())

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])

    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])

    return rz(psi) @ rx(theta) @ rz(phi)


def bond_matrix(a: np.ndarray) -> np.ndarray:
    """Bond stress-transformation matrix ``M`` with ``T' = M T`` in Voigt form."""
    M = np.empty((6, 6))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            if J < 3:
                M[I, J] = a[i, k] * a[j, l]
            else:
                M[I, J] = a[i, k] * a[j, l] + a[i, l] * a[j, k]
    return M


def voigt_to_tensor4(c: np.ndarray) -> np.ndarray:
    return c[np.ix_(_VOIGT.ravel(), _VOIGT.ravel())].reshape(3, 3, 3, 3)


def tensor4_to_voigt(C: np.ndarray) -> np.ndarray:
    out = np.empty((6, 6))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            out[I, J] = C[i, j, k, l]
    return out


def voigt_to_tensor3(e: np.ndarray) -> np.ndarray:
    return e[:, _VOIGT.ravel()].reshape(3, 3, 3)


def tensor3_to_voigt(E: np.ndarray) -> np.ndarray:
    return np.stack([E[:, i, j] for i, j in VOIGT_PAIRS], axis=1)


def rotate_stiffness_full(c: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Rotate a Voigt stiffness through the explicit rank-4 tensor."""
    C = voigt_to_tensor4(c)
    return tensor4_to_voigt(np.einsum("ip,jq,kr,ls,pqrs->ijkl", a, a, a, a, C, optimize=True))


def rotate_tensors(mat: MaterialTensors, angles: EulerAngles, method: str = "bond") -> MaterialTensors:
    """Rotate all constants of ``mat`` from crystal to device axes.

    ``method`` selects the stiffness path, ``"bond"`` (6x6 Bond matrix) or
    ``"full"`` (explicit index rotation); both give the same result.
    """
    problems = validate(mat)
    if problems:
        raise InvalidMaterial(f"{mat.name}: " + "; ".join(problems))
    a = rotation_matrix(angles)
    M = bond_matrix(a)
    if method == "bond":
        c = M @ mat.c_E @ M.T
    elif method == "full":
        c = rotate_stiffness_full(mat.c_E, a)
    else:
        raise ValueError(f"unknown rotation method {method!r}")
    c = 0.5 * (c + c.T)
    e = a @ mat.e @ M.T
    eps = a @ mat.eps_S @ a.T
    eps = 0.5 * (eps + eps.T)
    return MaterialTensors(mat.name, c, e, eps, mat.rho, mat.source)


# ---------------------------------------------------------------------------
# material file I/O

_ARITY = {"cE": 36, "e": 18, "epsS_rel": 9, "rho": 1, "E": 1, "nu": 1}


def _finish_entry(entry: dict, start_line: int) -> MaterialTensors:
    name = entry["name"]
    for key, vals in entry.items():
        if key in _ARITY and len(vals) != _ARITY[key]:
            raise ParseError(f"{name}: key {key!r} expects {_ARITY[key]} numbers, got {len(vals)}",
                             entry["_lines"][key])
    if "rho" not in entry:
        raise ParseError(f"{name}: missing rho", start_line)
    if "cE" in entry:
        c = np.array(entry["cE"]).reshape(6, 6)
    elif "E" in entry and "nu" in entry:
        c = isotropic_stiffness(entry["E"][0], entry["nu"][0])
    else:
        raise ParseError(f"{name}: missing cE (or E and nu)", start_line)
    e = np.array(entry["e"]).reshape(3, 6) if "e" in entry else np.zeros((3, 6))
    if "epsS_rel" not in entry:
        raise ParseError(f"{name}: missing epsS_rel", start_line)
    eps = EPS0 * np.array(entry["epsS_rel"]).reshape(3, 3)
    mat = MaterialTensors(name, c, e, eps, entry["rho"][0], entry.get("source", ""))
    problems = validate(mat)
    if problems:
        raise ValidationError(f"material {name!r}: " + "; ".join(problems))
    return mat


def load_material_db(text: str) -> Dict[str, MaterialTensors]:
    """Parse the line-oriented material file format into ``name -> MaterialTensors``."""
    db: Dict[str, MaterialTensors] = {}
    entry = None
    start = 0
    last_numeric = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            if last_numeric is None:
                raise ParseError(f"unexpected line {raw.strip()!r}", lineno)
            try:
                entry[last_numeric].extend(float(t) for t in line.split())
            except ValueError:
                raise ParseError(f"non-numeric value in {last_numeric!r}", lineno) from None
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "name":
            if entry is not None:
                mat = _finish_entry(entry, start)
                db[mat.name] = mat
            if not value:
                raise ParseError("empty material name", lineno)
            if value in db or (entry is not None and entry["name"] == value):
                raise ParseError(f"duplicate material name {value!r}", lineno)
            entry = {"name": value, "_lines": {}}
            start = lineno
            last_numeric = None
            continue
        if entry is None:
            raise ParseError(f"key {key!r} before any 'name'", lineno)
        if key in entry:
            raise ParseError(f"repeated key {key!r}", lineno)
        entry["_lines"][key] = lineno
        if key == "source":
            entry["source"] = value
            last_numeric = None
        elif key in _ARITY:
            try:
                entry[key] = [float(t) for t in value.split()]
            except ValueError:
                raise ParseError(f"non-numeric value in {key!r}", lineno) from None
            last_numeric = key
        else:
            raise ParseError(f"unknown key {key!r}", lineno)
    if entry is not None:
        mat = _finish_entry(entry, start)
        db[mat.name] = mat
    return db


def default_materials() -> Dict[str, MaterialTensors]:
    text = resources.files("lbaw").joinpath("data/materials.txt").read_text()
    return load_material_db(text)


def dump_material(mat: MaterialTensors) -> str:
    """Serialize one material in the material file format (round-trip safe)."""
    def rows(a):
        return "\n".join("    " + " ".join(repr(float(v)) for v in row) for row in np.atleast_2d(a))

    src = " ".join(mat.source.split())
    return (
        f"name = {mat.name}\n"
        + (f"source = {src}\n" if src else "")
        + f"rho = {mat.rho!r}\n"
        + f"cE =\n{rows(mat.c_E)}\n"
        + f"e =\n{rows(mat.e)}\n"
        + f"epsS_rel =\n{rows(mat.eps_S / EPS0)}\n"
    )
