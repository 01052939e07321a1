"""Touchstone v1 2-port files and S/Y conversions."""
from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mbvd import AdmittanceSpectrum

log = logging.getLogger(__name__)

UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
FORMATS = ("RI", "MA", "DB")
RECIPROCITY_TOL = 0.01


class RFIOError(Exception):
    pass


class ParseError(RFIOError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NonMonotoneFrequency(ParseError):
    pass


class SingularConversion(RFIOError, RuntimeWarning):
    """(I + S) or (I + Z0 Y) is singular at some frequency; the point is dropped."""


@dataclass(frozen=True, eq=False)
class TwoPortData:
    frequencies: np.ndarray     # Hz
    S: np.ndarray               # (n, 2, 2) complex
    z0: float = 50.0

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        S = np.asarray(self.S, dtype=complex)
        if S.shape != (len(f), 2, 2):
            raise ValueError(f"S must have shape ({len(f)}, 2, 2), got {S.shape}")
        if np.any(np.diff(f) <= 0):
            raise NonMonotoneFrequency("frequencies must be strictly increasing")
        if not self.z0 > 0:
            raise ValueError(f"reference impedance must be positive, got {self.z0}")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "S", S)

    def __len__(self):
        return len(self.frequencies)


def _pair_to_complex(a: np.ndarray, b: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "RI":
        return a + 1j * b
    mag = a if fmt == "MA" else 10.0 ** (a / 20.0)
    return mag * np.exp(1j * np.deg2rad(b))


def _complex_to_pair(z: np.ndarray, fmt: str):
    if fmt == "RI":
        return z.real, z.imag
    mag = np.abs(z)
    ang = np.rad2deg(np.angle(z))
    if fmt == "MA":
        return mag, ang
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(mag), ang


def _parse_option_line(tokens, lineno):
    unit, fmt, z0, param = "GHZ", "MA", 50.0, "S"   # Touchstone defaults
    i = 0
    while i < len(tokens):
        tok = tokens[i].upper()
        if tok in UNITS:
            unit = tok
        elif tok in FORMATS:
            fmt = tok
        elif tok in ("S", "Y", "Z", "H", "G"):
            param = tok
        elif tok == "R":
            if i + 1 >= len(tokens):
                raise ParseError("option 'R' needs a reference impedance", lineno)
            try:
                z0 = float(tokens[i + 1])
            except ValueError:
                raise ParseError(f"bad reference impedance {tokens[i + 1]!r}", lineno) from None
            i += 1
        else:
            raise ParseError(f"unknown option {tokens[i]!r}", lineno)
        i += 1
    if param != "S":
        raise ParseError(f"only S-parameter files are supported, got {param}", lineno)
    if not z0 > 0:
        raise ParseError(f"reference impedance must be positive, got {z0}", lineno)
    return unit, fmt, z0


def parse_touchstone(text: str) -> TwoPortData:
    """Parse a Touchstone v1 ``.s2p`` file.

    Data rows are ``f s11 s21 s12 s22`` with two numbers per parameter;
    a row may wrap over several lines.  ``!`` starts a comment.
    """
    opts = None
    values, row_lines = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            raise ParseError("Touchstone v2 keywords are not supported; export as v1", lineno)
        if line.startswith("#"):
            if opts is not None:
                raise ParseError("repeated option line", lineno)
            opts = _parse_option_line(line[1:].split(), lineno)
            continue
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"bad number {tok!r}", lineno) from None
            row_lines.append(lineno)
    if opts is None:
        opts = _parse_option_line([], 0)
    unit, fmt, z0 = opts
    if len(values) % 9:
        raise ParseError(f"{len(values)} numbers do not form whole 9-column rows",
                         row_lines[-1] if row_lines else None)
    data = np.array(values, dtype=float).reshape(-1, 9)
    starts = [row_lines[9 * k] for k in range(len(data))]
    f = data[:, 0] * UNITS[unit]
    bad = np.flatnonzero(np.diff(f) <= 0)
    if len(bad):
        raise NonMonotoneFrequency(f"frequency {float(data[bad[0] + 1, 0])!r} does not increase",
                                   starts[bad[0] + 1])
    if len(f) and f[0] < 0:
        raise ParseError("negative frequency", starts[0])
    s = _pair_to_complex(data[:, 1::2], data[:, 2::2], fmt)
    S = np.empty((len(f), 2, 2), dtype=complex)
    # v1 2-port column order is s11 s21 s12 s22
    S[:, 0, 0], S[:, 1, 0], S[:, 0, 1], S[:, 1, 1] = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
    return TwoPortData(f, S, z0)


def write_touchstone(d: TwoPortData, fmt: str = "RI", unit: str = "HZ",
                     comment: Optional[str] = None) -> str:
    """Touchstone v1 text with 17 significant digits (round-trips float64 in RI/Hz)."""
    fmt, unit = fmt.upper(), unit.upper()
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if unit not in UNITS:
        raise ValueError(f"unit must be one of {tuple(UNITS)}")
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"! {line}\n")
    buf.write(f"# {unit} S {fmt} R {d.z0:.17g}\n")
    order = [(0, 0), (1, 0), (0, 1), (1, 1)]
    for k, f in enumerate(d.frequencies):
        cols = [f"{f / UNITS[unit]:.17g}"]
        for i, j in order:
            a, b = _complex_to_pair(d.S[k, i, j], fmt)
            cols += [f"{float(a):.17g}", f"{float(b):.17g}"]
        buf.write(" ".join(cols) + "\n")
    return buf.getvalue()


def _batched_solve_right(A: np.ndarray, B: np.ndarray):
    """A @ inv(B) for stacks of 2x2, returning (result, ok-mask)."""
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    scale = np.max(np.abs(B), axis=(1, 2))
    ok = np.abs(det) > 1e-13 * np.maximum(scale, 1e-300) ** 2
    out = np.full_like(A, np.nan)
    if np.any(ok):
        # solve X B = A  <=>  B^T X^T = A^T
        Xt = np.linalg.solve(np.swapaxes(B[ok], 1, 2), np.swapaxes(A[ok], 1, 2))
        out[ok] = np.swapaxes(Xt, 1, 2)
    return out, ok


def _warn_singular(bad: np.ndarray, what: str):
    if len(bad):
        msg = f"{what} singular at {len(bad)} point(s), first index {int(bad[0])}; dropped"
        log.warning(msg)
        warnings.warn(msg, SingularConversion, stacklevel=3)


def s_to_y(d: TwoPortData):
    """``Y = (1/Z0)(I - S)(I + S)^-1`` per frequency.

    Returns ``(frequencies, Y, kept_index)``; singular points are dropped with
    a :class:`SingularConversion` warning.
    """
    I = np.eye(2)
    Y, ok = _batched_solve_right(I - d.S, I + d.S)
    _warn_singular(np.flatnonzero(~ok), "I + S")
    keep = np.flatnonzero(ok)
    return d.frequencies[keep], Y[keep] / d.z0, keep


def y_to_s(f, Y, z0: float = 50.0) -> TwoPortData:
    """``S = (I - Z0 Y)(I + Z0 Y)^-1``; inverse of :func:`s_to_y`."""
    Y = np.asarray(Y, dtype=complex)
    I = np.eye(2)
    S, ok = _batched_solve_right(I - z0 * Y, I + z0 * Y)
    _warn_singular(np.flatnonzero(~ok), "I + Z0 Y")
    keep = np.flatnonzero(ok)
    return TwoPortData(np.asarray(f, dtype=float)[keep], S[keep], z0)


def extract_y12(f, Y) -> AdmittanceSpectrum:
    """Resonator admittance ``-Y12`` of a series 2-port; warns if Y12 and Y21 differ by > 1%."""
    Y = np.asarray(Y, dtype=complex)
    if len(Y) == 0:
        raise RFIOError("no points left after conversion")
    y12, y21 = Y[:, 0, 1], Y[:, 1, 0]
    dev = float(np.max(np.abs(y12 - y21) / np.maximum(np.abs(y12), 1e-300)))
    if dev > RECIPROCITY_TOL:
        msg = f"non-reciprocal data: max |Y12 - Y21|/|Y12| = {dev:.3g}"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return AdmittanceSpectrum(f, -y12)


def series_two_port(f, y_resonator, z0: float = 50.0) -> TwoPortData:
    """2-port S-parameters of a one-port admittance placed in series between the ports."""
    y = np.asarray(y_resonator, dtype=complex)
    Y = np.empty((len(y), 2, 2), dtype=complex)
    Y[:, 0, 0] = Y[:, 1, 1] = y
    Y[:, 0, 1] = Y[:, 1, 0] = -y
    return y_to_s(f, Y, z0)


def spectrum_to_csv(s: AdmittanceSpectrum) -> str:
    buf = io.StringIO()
    buf.write("f_hz,re_y,im_y\n")
    for f, y in zip(s.frequencies, s.y):
        buf.write(f"{float(f)!r},{float(y.real)!r},{float(y.imag)!r}\n")
    return buf.getvalue()


def spectrum_from_csv(text: str) -> AdmittanceSpectrum:
    lines = text.splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")] != ["f_hz", "re_y", "im_y"]:
        raise ParseError("expected header 'f_hz,re_y,im_y'", 1)
    f, y = [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", lineno)
        try:
            a, b, c = (float(p) for p in parts)
        except ValueError:
            raise ParseError(f"bad number in {line!r}", lineno) from None
        if f and a <= f[-1]:
            raise NonMonotoneFrequency(f"frequency {a!r} does not increase", lineno)
        f.append(a)
        y.append(complex(b, c))
    if not f:
        raise ParseError("no data rows")
    if not all(math.isfinite(v) for v in f):
        raise ParseError("non-finite frequency")
    return AdmittanceSpectrum(np.array(f), np.array(y))
