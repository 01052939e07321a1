import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbaw import mbvd
from lbaw.mbvd import AdmittanceSpectrum, MbvdParams

REF = MbvdParams(Rm=2.0, Lm=80e-6, Cm=0.7e-15, C0=2e-12, R0=1.0, Rs=3.0)
FOM437 = MbvdParams.from_targets(673e6, 0.43, 1016.2790697674419, 0.5e-12, Qp=300, Rs=0.3)


def rel(a, b):
    return abs(a - b) / abs(b)


def test_admittance_matches_hand_ladder():
    f = 673e6
    w = 2 * math.pi * f
    zm = complex(2.0, w * 80e-6 - 1 / (w * 0.7e-15))
    z0 = complex(1.0, -1 / (w * 2e-12))
    zpar = 1 / (1 / zm + 1 / z0)
    y = 1 / (3.0 + zpar)
    assert cmath.isclose(mbvd.admittance(REF, f), y, rel_tol=1e-12)


def test_asymptotes():
    # far below: capacitive through C0 + Cm; far above: Rs + R0 in series with C0
    lo = mbvd.admittance(REF, 1e3)
    assert lo.imag / (2 * math.pi * 1e3) == pytest.approx(REF.C0 + REF.Cm, rel=1e-6)
    hi = mbvd.admittance(REF, 1e15)
    assert 1 / hi == pytest.approx(REF.Rs + REF.R0, rel=1e-3)


def test_metrics_closed_form():
    m = mbvd.derive_metrics(REF)
    fs = 1 / (2 * math.pi * math.sqrt(80e-6 * 0.7e-15))
    assert m.fs == pytest.approx(fs, rel=1e-14)
    assert m.fp == pytest.approx(fs * math.sqrt(1 + 0.35e-3), rel=1e-14)
    assert m.kt2_eff == pytest.approx(0.7e-15 / (2.0007e-12), rel=1e-14)
    assert m.Qs == pytest.approx(2 * math.pi * fs * 80e-6 / 5.0, rel=1e-14)
    assert m.Qp == pytest.approx(2 * math.pi * m.fp * 80e-6 / 3.0, rel=1e-14)
    assert m.FoM == pytest.approx(m.kt2_eff * m.Qs)
    assert 1 - (m.fs / m.fp) ** 2 == pytest.approx(m.kt2_eff, rel=1e-12)


def test_lossless_metrics_infinite():
    m = mbvd.derive_metrics(MbvdParams(0.0, 1e-6, 1e-15, 1e-12))
    assert math.isinf(m.Qs) and math.isinf(m.Qp)


def test_from_targets_hits_fom437():
    m = mbvd.derive_metrics(FOM437)
    assert m.fs == pytest.approx(673e6, rel=1e-12)
    assert m.kt2_eff == pytest.approx(0.43, rel=1e-12)
    assert m.Qs == pytest.approx(1016.2790697674419, rel=1e-12)
    assert m.Qp == pytest.approx(300, rel=1e-12)
    assert m.FoM == pytest.approx(437.0, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(kt2=1.2), dict(Rs=100.0), dict(Qp=1e7)])
def test_from_targets_rejects_impossible(kw):
    base = dict(fs=1e9, kt2=0.1, Qs=500, C0=1e-12)
    with pytest.raises(ValueError):
        MbvdParams.from_targets(**{**base, **kw})


@pytest.mark.parametrize("bad", [dict(Lm=0.0), dict(Rm=-1.0), dict(C0=math.nan)])
def test_params_validation(bad):
    kw = dict(Rm=1.0, Lm=1e-6, Cm=1e-15, C0=1e-12)
    with pytest.raises(ValueError):
        MbvdParams(**{**kw, **bad})


def test_spectrum_validation():
    with pytest.raises(ValueError):
        AdmittanceSpectrum([1.0, 1.0], [1j, 1j])
    with pytest.raises(ValueError):
        AdmittanceSpectrum([-1.0, 1.0], [1j, 1j])


def test_initial_guess_fs_within_one_step():
    f = mbvd.default_grid(FOM437)
    g = mbvd.initial_guess(mbvd.synthesize(FOM437, f))
    fs_g = 1 / (2 * math.pi * math.sqrt(g.Lm * g.Cm))
    assert abs(fs_g - 673e6) <= f[1] - f[0]


def test_initial_guess_within_factor_three():
    # fp - fs is ~118 kHz for these values, so the grid must resolve it
    m = mbvd.derive_metrics(REF)
    f = np.linspace(0.99 * m.fs, 1.01 * m.fp, 20001)
    g = mbvd.initial_guess(mbvd.synthesize(REF, f))
    for name in mbvd.PARAM_NAMES:
        ratio = getattr(g, name) / getattr(REF, name)
        assert 1 / 3 < ratio < 3, (name, ratio)


def test_flat_spectrum_has_no_resonance():
    f = np.linspace(1e8, 2e8, 201)
    with pytest.raises(mbvd.NoResonanceFound):
        mbvd.fit(AdmittanceSpectrum(f, 1j * 2 * np.pi * f * 1e-12))


def test_noiseless_round_trip():
    res = mbvd.fit(mbvd.synthesize(FOM437))
    assert res.converged
    for name in mbvd.PARAM_NAMES:
        assert rel(getattr(res.params, name), getattr(FOM437, name)) < 1e-3, name
    assert res.residual < 1e-8


def test_noisy_round_trip_medians():
    m0 = mbvd.derive_metrics(FOM437)
    errs = {k: [] for k in ("fs", "fp", "kt2_eff", "Qs", "Qp")}
    for seed in range(20):
        res = mbvd.fit(mbvd.synthesize(FOM437, noise=0.01, rng=seed))
        for k in errs:
            errs[k].append(rel(getattr(res.metrics, k), getattr(m0, k)))
    med = {k: float(np.median(v)) for k, v in errs.items()}
    assert med["fs"] < 5e-4 and med["fp"] < 5e-4
    assert med["kt2_eff"] < 0.05 and med["Qs"] < 0.05 and med["Qp"] < 0.05


@settings(max_examples=25)
@given(st.floats(math.log(1e8), math.log(5e9)), st.floats(0.02, 0.5),
       st.floats(math.log(50), math.log(3000)), st.floats(math.log(0.2e-12), math.log(5e-12)),
       st.floats(0.0, 0.5))
def test_round_trip_property(lnfs, kt2, lnq, lnc0, rs_frac):
    fs, Qs, C0 = math.exp(lnfs), math.exp(lnq), math.exp(lnc0)
    Rm_total = 2 * math.pi * fs / Qs * (1 / ((2 * math.pi * fs) ** 2 * C0 * kt2 / (1 - kt2)))
    p = MbvdParams.from_targets(fs, kt2, Qs, C0, Qp=Qs / 2, Rs=rs_frac * Rm_total)
    res = mbvd.fit(mbvd.synthesize(p))
    m0, m1 = mbvd.derive_metrics(p), res.metrics
    assert rel(m1.fs, m0.fs) < 1e-6
    assert rel(m1.kt2_eff, m0.kt2_eff) < 1e-3
    assert rel(m1.FoM, m0.FoM) < 1e-3


@given(st.floats(-3, 3))
def test_frequency_scaling(lg):
    # scaling L and C by 1/k moves the response to k*f unchanged
    k = 10.0 ** lg
    q = MbvdParams(REF.Rm, REF.Lm / k, REF.Cm / k, REF.C0 / k, REF.R0, REF.Rs)
    f = np.array([1e8, 1.0e9, mbvd.derive_metrics(REF).fs])
    np.testing.assert_allclose(mbvd.admittance(q, k * f), mbvd.admittance(REF, f), rtol=1e-9)


@given(st.floats(1e6, 1e11))
def test_passive(f):
    y = mbvd.admittance(REF, f)
    assert y.real >= 0


def test_jacobian_matches_finite_differences():
    f = mbvd.default_grid(FOM437, 101)
    _, d = mbvd._jacobian_terms(FOM437, f)
    x = FOM437.as_array()
    for k in range(6):
        h = 1e-6 * x[k]
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        fd = (mbvd.admittance(MbvdParams.from_array(xp), f)
              - mbvd.admittance(MbvdParams.from_array(xm), f)) / (2 * h)
        np.testing.assert_allclose(d[k], fd, rtol=1e-5, atol=1e-8 * np.abs(fd).max())


def test_phase_q_close_to_circuit_q_for_sharp_resonance():
    p = MbvdParams.from_targets(1e9, 0.1, 2000, 1e-12)
    m = mbvd.derive_metrics(p)
    f = np.linspace(0.999 * m.fs, 1.001 * m.fp, 40001)
    q = mbvd.phase_q(mbvd.synthesize(p, f))
    assert q["Qs_phase"] == pytest.approx(2000, rel=0.02)


def test_report_fields():
    res = mbvd.fit(mbvd.synthesize(FOM437))
    rep = mbvd.fit_report(res, "x.s2p")
    assert list(rep) == ["params", "metrics", "residual", "n_points", "input_file"]
    assert list(rep["params"]) == list(mbvd.PARAM_NAMES)
    assert {"fs", "fp", "kt2", "Qs", "Qp", "FoM", "Qs_phase"} <= set(rep["metrics"])
    assert rep["metrics"]["FoM"] == pytest.approx(437, rel=1e-4)
    assert mbvd.report_json(res).endswith("}\n")


@given(st.floats(0.1, 10.0))
def test_scale_consistency(alpha):
    q = MbvdParams(REF.Rm, REF.Lm * alpha, REF.Cm / alpha, REF.C0, REF.R0, REF.Rs)
    m0, m1 = mbvd.derive_metrics(REF), mbvd.derive_metrics(q)
    assert m1.fs == pytest.approx(m0.fs, rel=1e-12)
    assert m1.Qs == pytest.approx(alpha * m0.Qs, rel=1e-12)


@given(st.floats(0.01, 0.9), st.floats(0.1e-12, 10e-12))
def test_fp_above_fs(r, C0):
    m = mbvd.derive_metrics(MbvdParams(1.0, 1e-6, r * C0, C0))
    assert m.fp > m.fs


def test_conjugate_symmetry():
    rng = np.random.default_rng(5)
    f = rng.uniform(1e8, 2e9, 10)
    w = -2 * np.pi * f
    zm = REF.Rm + 1j * w * REF.Lm + 1 / (1j * w * REF.Cm)
    z0 = REF.R0 + 1 / (1j * w * REF.C0)
    y_neg = 1 / (REF.Rs + zm * z0 / (zm + z0))
    np.testing.assert_allclose(mbvd.admittance(REF, f), np.conj(y_neg), rtol=1e-12)
