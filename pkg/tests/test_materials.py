import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lbaw.materials import (
    EPS0, EulerAngles, InvalidMaterial, ParseError, ValidationError, bond_matrix,
    dump_material, isotropic_material, load_material_db, rotate_stiffness_full,
    rotate_tensors, rotation_matrix, tensor3_to_voigt, tensor4_to_voigt, validate,
    voigt_to_tensor3, voigt_to_tensor4,
)

angles = st.builds(EulerAngles, *(st.floats(-360, 360, allow_nan=False),) * 3)


def brute_rotate_c(c, a):
    # eight nested loops over the full rank-4 tensor, no einsum, no Bond matrix
    C = voigt_to_tensor4(c)
    out = np.zeros((3, 3, 3, 3))
    for i, j, k, l in itertools.product(range(3), repeat=4):
        s = 0.0
        for p, q, r, t in itertools.product(range(3), repeat=4):
            s += a[i, p] * a[j, q] * a[k, r] * a[l, t] * C[p, q, r, t]
        out[i, j, k, l] = s
    return tensor4_to_voigt(out)


def brute_rotate_e(e, a):
    E = voigt_to_tensor3(e)
    out = np.zeros((3, 3, 3))
    for i, j, k in itertools.product(range(3), repeat=3):
        out[i, j, k] = sum(a[i, p] * a[j, q] * a[k, r] * E[p, q, r]
                           for p, q, r in itertools.product(range(3), repeat=3))
    return tensor3_to_voigt(out)


def kelvin(c):
    # orthonormal 6x6 form whose eigenvalues are rotation invariants
    w = np.array([1, 1, 1, math.sqrt(2), math.sqrt(2), math.sqrt(2)])
    return c * np.outer(w, w)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def test_bundled_lithium_niobate_is_valid(linbo3):
    assert validate(linbo3) == []
    assert linbo3.is_piezoelectric
    assert linbo3.c_E[0, 0] == pytest.approx(2.03e11)
    assert linbo3.e[2, 2] == pytest.approx(1.3)
    assert linbo3.eps_S[0, 0] == pytest.approx(44 * EPS0)


def test_rotation_matrix_is_proper_orthogonal():
    a = rotation_matrix(EulerAngles(-90, -90, 30))
    np.testing.assert_allclose(a @ a.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(a) == pytest.approx(1.0)


def test_x_cut_normal_is_crystal_x():
    # device z (film normal) must be crystal X for (-90, -90, psi)
    for psi in (-10.0, 30.0, 77.0):
        a = rotation_matrix(EulerAngles(-90, -90, psi))
        np.testing.assert_allclose(np.abs(a[2]), [1, 0, 0], atol=1e-15)


def test_angles_normalized():
    e = EulerAngles(190, -540, 360)
    assert e.as_tuple() == (-170.0, 180.0, 0.0)
    with pytest.raises(ValueError):
        EulerAngles(float("nan"), 0, 0)


def test_identity_rotation(linbo3):
    r = rotate_tensors(linbo3, EulerAngles(0, 0, 0))
    np.testing.assert_array_equal(r.c_E, linbo3.c_E)
    np.testing.assert_array_equal(r.e, linbo3.e)
    np.testing.assert_array_equal(r.eps_S, linbo3.eps_S)


def test_bond_matches_brute_force(linbo3):
    a = rotation_matrix(EulerAngles(-90, -90, 30))
    r = rotate_tensors(linbo3, EulerAngles(-90, -90, 30))
    assert rel(r.c_E, brute_rotate_c(linbo3.c_E, a)) < 1e-12
    assert rel(r.e, brute_rotate_e(linbo3.e, a)) < 1e-12


def test_z_quarter_turn_swaps_axes(linbo3):
    # rotating 90 deg about Z exchanges x and y, so c11 and c22 trade places
    r = rotate_tensors(linbo3, EulerAngles(90, 0, 0))
    assert r.c_E[0, 0] == pytest.approx(linbo3.c_E[1, 1])
    assert r.c_E[3, 3] == pytest.approx(linbo3.c_E[4, 4])
    assert r.e[2, 2] == pytest.approx(linbo3.e[2, 2])


@given(angles)
def test_bond_and_full_index_rotation_agree(linbo3, ang):
    a = rotation_matrix(ang)
    M = bond_matrix(a)
    assert rel(M @ linbo3.c_E @ M.T, rotate_stiffness_full(linbo3.c_E, a)) < 1e-10
    r_full = rotate_tensors(linbo3, ang, method="full")
    r_bond = rotate_tensors(linbo3, ang, method="bond")
    assert rel(r_full.c_E, r_bond.c_E) < 1e-10


@given(angles)
def test_inverse_rotation_restores_constants(linbo3, ang):
    back = rotate_tensors(rotate_tensors(linbo3, ang), ang.inverse())
    assert rel(back.c_E, linbo3.c_E) < 1e-10
    assert rel(back.e, linbo3.e) < 1e-10
    assert rel(back.eps_S, linbo3.eps_S) < 1e-10


@given(angles)
def test_rotation_invariants(linbo3, ang):
    r = rotate_tensors(linbo3, ang)
    w0 = np.linalg.eigvalsh(kelvin(linbo3.c_E))
    w1 = np.linalg.eigvalsh(kelvin(r.c_E))
    assert np.max(np.abs(w1 - w0)) < 1e-10 * w0.max()
    n0 = np.linalg.norm(voigt_to_tensor4(linbo3.c_E))
    assert np.linalg.norm(voigt_to_tensor4(r.c_E)) == pytest.approx(n0, rel=1e-10)
    assert np.linalg.norm(voigt_to_tensor3(r.e)) == pytest.approx(
        np.linalg.norm(voigt_to_tensor3(linbo3.e)), rel=1e-10)
    np.testing.assert_allclose(np.linalg.eigvalsh(r.eps_S), np.linalg.eigvalsh(linbo3.eps_S), rtol=1e-10)
    assert validate(r) == []


@given(angles)
def test_isotropic_material_is_rotation_invariant(ang):
    m = isotropic_material("iso", 70e9, 0.33, 2700)
    assert rel(rotate_tensors(m, ang).c_E, m.c_E) < 1e-10


def test_rotating_invalid_material_raises(linbo3):
    c = linbo3.c_E.copy()
    c[0, 0] = -1.0
    bad = type(linbo3)("bad", c, linbo3.e, linbo3.eps_S, linbo3.rho)
    with pytest.raises(InvalidMaterial):
        rotate_tensors(bad, EulerAngles(0, 0, 0))


def test_unknown_rotation_method(linbo3):
    with pytest.raises(ValueError):
        rotate_tensors(linbo3, EulerAngles(0, 0, 0), method="quaternion")


def test_dump_load_round_trip(db):
    for mat in db.values():
        back = load_material_db(dump_material(mat))[mat.name]
        np.testing.assert_array_equal(back.c_E, mat.c_E)
        np.testing.assert_array_equal(back.e, mat.e)
        np.testing.assert_allclose(back.eps_S, mat.eps_S, rtol=1e-15)
        assert back.rho == mat.rho


def test_isotropic_entry_from_young_modulus():
    db = load_material_db("name = al\nE = 70e9\nnu = 0.33\nrho = 2700\nepsS_rel = 1 0 0 0 1 0 0 0 1\n")
    c = db["al"].c_E
    # c11 = E(1 - nu) / ((1 + nu)(1 - 2nu))
    assert c[0, 0] == pytest.approx(70e9 * 0.67 / (1.33 * 0.34))
    assert c[3, 3] == pytest.approx(70e9 / 2.66)
    assert not db["al"].is_piezoelectric


@pytest.mark.parametrize("text, line", [
    ("name = a\nE = 1e9\nnu = 0.3\nrho = 1\nepsS_rel = 1 0 0 0 1 0 0 0 1\nname = a\n", 6),
    ("rho = 1\n", 1),
    ("name = a\nrho = 1\nbogus = 2\n", 3),
    ("name = a\nrho = 1 2\nE = 1e9\nnu = 0.3\nepsS_rel = 1 0 0 0 1 0 0 0 1\n", 2),
    ("name = a\nrho = x\n", 2),
    ("name = a\nrho = 1\nrho = 2\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        load_material_db(text)
    assert exc.value.line == line


def test_non_positive_definite_entry_rejected():
    text = "name = a\nE = 1e9\nnu = 0.3\nrho = 1\nepsS_rel = -1 0 0 0 1 0 0 0 1\n"
    with pytest.raises(ValidationError):
        load_material_db(text)
