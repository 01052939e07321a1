"""Modified Butterworth-Van Dyke (mBVD) circuit: synthesis, fitting, derived metrics.

Topology: ``Rs`` in series with the parallel combination of the motional
branch ``Rm + jwLm + 1/(jwCm)`` and the static branch ``R0 + 1/(jwC0)``.
The fitted spectrum is the one-port admittance of the resonator, which for a
series 2-port measurement is ``-Y12``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

log = logging.getLogger(__name__)

PARAM_NAMES = ("Rm", "Lm", "Cm", "C0", "R0", "Rs")
# floor for resistances inside the log transform
R_FLOOR = 1e-9


class MbvdError(Exception):
    pass


class NoResonanceFound(MbvdError):
    pass


class FitDiverged(MbvdError):
    pass


@dataclass(frozen=True)
class MbvdParams:
    Rm: float
    Lm: float
    Cm: float
    C0: float
    R0: float = 0.0
    Rs: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        for name in ("Lm", "Cm", "C0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("Rm", "R0", "Rs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x) -> "MbvdParams":
        return cls(*(float(v) for v in x))

    @classmethod
    def from_targets(cls, fs: float, kt2: float, Qs: float, C0: float,
                     Qp: Optional[float] = None, Rs: float = 0.0) -> "MbvdParams":
        """Parameters hitting a given fs, kt2_eff and Qs.

        ``Rs`` is taken out of the ``Qs`` budget.  ``R0`` is chosen to give
        ``Qp`` when requested, else zero.
        """
        if not 0 < kt2 < 1:
            raise ValueError(f"kt2 must lie in (0, 1), got {kt2}")
        Cm = C0 * kt2 / (1 - kt2)
        w = 2 * math.pi * fs
        Lm = 1.0 / (w * w * Cm)
        Rm = w * Lm / Qs - Rs
        if Rm < 0:
            raise ValueError(f"Rs={Rs} exceeds the loss budget for Qs={Qs}")
        R0 = 0.0
        if Qp is not None:
            fp = fs / math.sqrt(1 - kt2)
            R0 = 2 * math.pi * fp * Lm / Qp - Rm
            if R0 < 0:
                raise ValueError(f"Qp={Qp} unreachable with Rm={Rm}")
        return cls(Rm, Lm, Cm, C0, R0, Rs)


@dataclass(frozen=True)
class DerivedMetrics:
    fs: float
    fp: float
    kt2_eff: float
    Qs: float
    Qp: float
    FoM: float


@dataclass(frozen=True, eq=False)
class AdmittanceSpectrum:
    frequencies: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        y = np.asarray(self.y, dtype=complex)
        if f.ndim != 1 or f.shape != y.shape:
            raise ValueError(f"frequency/admittance shapes differ: {f.shape} vs {y.shape}")
        if len(f) == 0:
            raise ValueError("empty spectrum")
        if np.any(f <= 0):
            raise ValueError("frequencies must be positive")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.frequencies)


def _branches(p: MbvdParams, f):
    w = 2 * np.pi * np.asarray(f, dtype=float)
    Zm = p.Rm + 1j * w * p.Lm + 1.0 / (1j * w * p.Cm)
    Z0 = p.R0 + 1.0 / (1j * w * p.C0)
    return w, Zm, Z0


def admittance(p: MbvdParams, f):
    """Complex admittance in S at frequency (or array of frequencies) ``f`` in Hz."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr <= 0):
        raise ValueError("frequencies must be positive")
    _, Zm, Z0 = _branches(p, f_arr)
    return 1.0 / (p.Rs + Zm * Z0 / (Zm + Z0))


def derive_metrics(p: MbvdParams) -> DerivedMetrics:
    fs = 1.0 / (2 * math.pi * math.sqrt(p.Lm * p.Cm))
    fp = fs * math.sqrt(1 + p.Cm / p.C0)
    kt2 = p.Cm / (p.Cm + p.C0)
    rs = p.Rm + p.Rs
    rp = p.Rm + p.R0
    Qs = 2 * math.pi * fs * p.Lm / rs if rs > 0 else math.inf
    Qp = 2 * math.pi * fp * p.Lm / rp if rp > 0 else math.inf
    return DerivedMetrics(fs, fp, kt2, Qs, Qp, kt2 * Qs)


def default_grid(p: MbvdParams, n: int = 2001) -> np.ndarray:
    """``n`` points from 0.8 fs to 1.2 fp."""
    m = derive_metrics(p)
    return np.linspace(0.8 * m.fs, 1.2 * m.fp, n)


def synthesize(p: MbvdParams, f=None, noise: float = 0.0, rng=None) -> AdmittanceSpectrum:
    """Model spectrum, optionally with multiplicative complex Gaussian noise.

    ``noise`` is the rms relative magnitude of the perturbation, split evenly
    between real and imaginary parts.
    """
    f = default_grid(p) if f is None else np.asarray(f, dtype=float)
    y = admittance(p, f)
    if noise > 0:
        rng = np.random.default_rng(rng)
        g = rng.standard_normal((2, len(f))) * (noise / math.sqrt(2))
        y = y * (1 + g[0] + 1j * g[1])
    return AdmittanceSpectrum(f, y)


def _local_resonances(s: AdmittanceSpectrum):
    mag = np.abs(s.y)
    n = len(mag)
    i_s = int(np.argmax(mag))
    if n < 5 or i_s == 0 or i_s >= n - 2:
        raise NoResonanceFound("no interior |Y| maximum in spectrum")
    i_p = i_s + 1 + int(np.argmin(mag[i_s + 1:]))
    if i_p >= n - 1 or mag[i_p] >= mag[i_s]:
        raise NoResonanceFound("no |Y| minimum above the series resonance")
    return i_s, i_p


def initial_guess(s: AdmittanceSpectrum) -> MbvdParams:
    """Bootstrap parameters from the |Y| peak and dip.

    C0 comes from the susceptance of off-resonance points, corrected for the
    motional branch as if lossless.  The three resistances come from Re(Z)
    at the peak, at the dip and off resonance.
    """
    f, y = s.frequencies, s.y
    i_s, i_p = _local_resonances(s)
    fs0, fp0 = f[i_s], f[i_p]
    r = (fp0 / fs0) ** 2 - 1
    span = fp0 - fs0
    off = np.abs(f - fs0) > 3 * span
    if not np.any(off):
        # narrow grids: anything clear of the resonance band
        off = (f < fs0 - 0.25 * span) | (f > fp0 + 0.25 * span)
    if not np.any(off):
        off = np.ones(len(f), dtype=bool)
        off[max(i_s - 1, 0):i_p + 2] = False
    if not np.any(off):
        raise NoResonanceFound("no off-resonance points to estimate C0")
    x2 = (f[off] / fs0) ** 2
    b = y[off].imag / (2 * np.pi * f[off])
    C0 = float(np.median(b / (1 + r / (1 - x2))))
    if not C0 > 0:
        C0 = float(np.median(np.abs(b)))
    if not C0 > 0:
        raise NoResonanceFound("non-capacitive background")
    Cm = C0 * max(r, 1e-9)
    Lm = 1.0 / ((2 * np.pi * fs0) ** 2 * Cm)

    z = 1.0 / y
    a_s = max(z[i_s].real, 0.0)                      # ~ Rs + Rm
    x0 = 1.0 / (2 * np.pi * fp0 * C0)
    a_p = x0 * x0 / max(z[i_p].real, 1e-30)          # ~ Rm + R0
    a_o = max(float(np.median(z[off].real)), 0.0)   # ~ Rs + R0
    Rm = max(0.5 * (a_s + a_p - a_o), 0.0)
    if Rm <= 0:
        Rm = 1.0 / np.abs(y[i_s])
    R0 = max(0.5 * (a_p + a_o - a_s), 0.0)
    Rs = max(0.5 * (a_s + a_o - a_p), 0.0)
    return MbvdParams(float(Rm), float(Lm), float(Cm), float(C0), float(R0), float(Rs))


def _jacobian_terms(p: MbvdParams, f):
    """Model admittance and dY/dp for each parameter, shape (6, n)."""
    w, Zm, Z0 = _branches(p, f)
    S = Zm + Z0
    Y = 1.0 / (p.Rs + Zm * Z0 / S)
    dY_dZ = -Y * Y
    dZp_dZm = (Z0 / S) ** 2
    dZp_dZ0 = (Zm / S) ** 2
    jw = 1j * w
    d = np.empty((6, len(w)), dtype=complex)
    d[0] = dY_dZ * dZp_dZm
    d[1] = dY_dZ * dZp_dZm * jw
    d[2] = dY_dZ * dZp_dZm * (-1.0 / (jw * p.Cm ** 2))
    d[3] = dY_dZ * dZp_dZ0 * (-1.0 / (jw * p.C0 ** 2))
    d[4] = dY_dZ * dZp_dZ0
    d[5] = dY_dZ
    return Y, d


@dataclass
class FitResult:
    params: MbvdParams
    residual: float
    metrics: DerivedMetrics
    n_points: int
    n_eval: int = 0
    converged: bool = True
    initial: Optional[MbvdParams] = None
    phase_q: dict = field(default_factory=dict)


# d ln(Rm, Lm, Cm, C0, R0, Rs) / d (ln fs, ln r, ln C0, ln Rm, ln R0, ln Rs), r = Cm/C0
_T = np.array([
    [0, 0, 0, 1, 0, 0],
    [-2, -1, -1, 0, 0, 0],
    [0, 1, 1, 0, 0, 0],
    [0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 1, 0],
    [0, 0, 0, 0, 0, 1],
], dtype=float)


def _to_physical(p: MbvdParams) -> np.ndarray:
    fs = 1.0 / (2 * np.pi * np.sqrt(p.Lm * p.Cm))
    return np.array([fs, p.Cm / p.C0, p.C0, p.Rm, p.R0, p.Rs])


def _from_physical(v) -> MbvdParams:
    fs, r, C0, Rm, R0, Rs = v
    Cm = C0 * r
    Lm = 1.0 / ((2 * np.pi * fs) ** 2 * Cm)
    return MbvdParams(Rm, Lm, Cm, C0, R0, Rs)


def fit(s: AdmittanceSpectrum, guess: Optional[MbvdParams] = None,
        xtol: float = 1e-9, max_iter: int = 500) -> FitResult:
    """Weighted complex least squares.

    Minimizes sum |Y_model - Y_data|^2 / |Y_data|^2.  The resonance is
    described by log(fs), log(Cm/C0) and log(C0), which keeps them positive
    and decouples the sharp resonance position from the rest; the three
    resistances are linear with a zero lower bound so they can reach (and
    leave) zero.  A first pass holds fs and Cm/C0 so the losses and C0
    settle before the resonance is allowed to move.  Stops when the relative
    parameter step drops below ``xtol`` or after ``max_iter`` evaluations.
    """
    if guess is None:
        guess = initial_guess(s)
    f, yd = s.frequencies, s.y
    wgt = 1.0 / np.abs(yd)
    if not np.all(np.isfinite(wgt)):
        raise ValueError("spectrum contains zero or non-finite admittance")
    r_scale = max(guess.Rm + guess.Rs, guess.Rm + guess.R0, R_FLOOR)
    lower = np.array([-np.inf] * 3 + [0.0] * 3)
    start = _to_physical(guess)
    ref = start[:3]

    def unpack(x):
        v = np.r_[ref * np.exp(np.clip(x[:3], -50, 50)), x[3:] * r_scale]
        return _from_physical(v)

    def resid(x):
        r = (admittance(unpack(x), f) - yd) * wgt
        return np.concatenate([r.real, r.imag])

    def jac(x):
        p = unpack(x)
        _, d = _jacobian_terms(p, f)
        d = d * wgt[None, :]
        J = np.empty((len(f), 6), dtype=complex)
        J[:, :3] = ((d * p.as_array()[:, None]).T @ _T)[:, :3]
        J[:, 3:] = d[[0, 4, 5]].T * r_scale
        return np.concatenate([J.real, J.imag], axis=0)

    x0 = np.r_[0.0, 0.0, 0.0, start[3:] / r_scale]
    cost0 = 0.5 * float(np.sum(resid(x0) ** 2))
    free = np.array([2, 3, 4, 5])

    def embed(z):
        return np.r_[0.0, 0.0, z]

    pre = least_squares(lambda z: resid(embed(z)), x0[free], jac=lambda z: jac(embed(z))[:, free],
                        bounds=(lower[free], np.inf), method="trf", xtol=1e-6, max_nfev=max_iter)
    sol = least_squares(resid, embed(pre.x), jac=jac, bounds=(lower, np.inf), method="trf",
                        xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter)
    n_eval = int(pre.nfev + sol.nfev)
    if not np.all(np.isfinite(sol.x)):
        raise FitDiverged("non-finite parameters")
    if sol.status <= 0 and sol.cost >= cost0:
        raise FitDiverged(f"residual did not decrease in {n_eval} evaluations")
    p = unpack(sol.x)
    converged = sol.status > 0
    if not converged:
        log.warning("mBVD fit hit the evaluation limit (%d) before converging", max_iter)
    res = float(np.sqrt(2 * sol.cost / len(f)))
    out = FitResult(p, res, derive_metrics(p), len(f), n_eval, converged, guess)
    try:
        out.phase_q = phase_q(AdmittanceSpectrum(f, admittance(p, f)))
    except NoResonanceFound:
        pass
    return out


def phase_q(s: AdmittanceSpectrum) -> dict:
    """Phase-slope quality factors ``Q = (f/2)|d arg Z / df|`` at the |Y| peak and dip."""
    i_s, i_p = _local_resonances(s)
    f = s.frequencies
    phase = np.unwrap(np.angle(1.0 / s.y))
    dphi = np.gradient(phase, f)
    q = 0.5 * f * np.abs(dphi)
    return {"Qs_phase": float(q[i_s]), "Qp_phase": float(q[i_p]),
            "fs_grid": float(f[i_s]), "fp_grid": float(f[i_p])}


def fit_report(result: FitResult, input_file: Optional[str] = None) -> dict:
    m = asdict(result.metrics)
    metrics = {"fs": m["fs"], "fp": m["fp"], "kt2": m["kt2_eff"], "Qs": m["Qs"],
               "Qp": m["Qp"], "FoM": m["FoM"]}
    metrics.update(result.phase_q)
    return {
        "params": {f.name: getattr(result.params, f.name) for f in fields(result.params)},
        "metrics": metrics,
        "residual": result.residual,
        "n_points": result.n_points,
        "input_file": input_file,
    }


def report_json(result: FitResult, input_file: Optional[str] = None) -> str:
    return json.dumps(fit_report(result, input_file), indent=2, sort_keys=False) + "\n"
