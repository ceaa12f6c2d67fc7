import numpy as np
import pytest

from platehomog.material import (build_field, field_from_config,
                                 from_voigt_upper, homogeneous_field,
                                 make_isotropic, sample_field,
                                 validate_tensor)

from conftest import random_monoclinic, random_triclinic


def test_isotropic_coercivity_bounds():
    # For lambda = mu = 1 the form eigenvalues on symmetric matrices are
    # 2*mu (shear, multiplicity 5) and 3*lambda + 2*mu (volumetric).
    t = make_isotropic(1.0, 1.0)
    lo, hi = t.nu_bounds
    assert lo == pytest.approx(2.0, rel=1e-12)
    assert hi == pytest.approx(5.0, rel=1e-12)


def test_isotropic_apply_matches_lame_formula():
    rng = np.random.default_rng(3)
    lam, mu = 1.7, 0.9
    t = make_isotropic(lam, mu)
    E = rng.standard_normal((3, 3))
    E = 0.5 * (E + E.T)
    S = t.apply(E)
    expected = lam * np.trace(E) * np.eye(3) + 2.0 * mu * E
    assert np.allclose(S, expected, atol=1e-13)


def test_contract_is_symmetric_quadratic_form():
    rng = np.random.default_rng(4)
    t = random_triclinic(rng)
    E = rng.standard_normal((3, 3))
    E = 0.5 * (E + E.T)
    F = rng.standard_normal((3, 3))
    F = 0.5 * (F + F.T)
    assert t.contract(E, F) == pytest.approx(t.contract(F, E), rel=1e-12)
    assert t.contract(E, E) > 0.0


def test_planar_symmetry_detection():
    rng = np.random.default_rng(5)
    assert validate_tensor(make_isotropic(1.0, 2.0)).planar_symmetric
    assert validate_tensor(random_monoclinic(rng)).planar_symmetric
    # Couple an in-plane slot to an out-of-plane shear slot.
    tric = random_triclinic(rng)
    assert not validate_tensor(tric).planar_symmetric


def test_voigt_upper_round_trip():
    t = make_isotropic(2.0, 3.0)
    upper = [t.C[i, j] for i in range(6) for j in range(i, 6)]
    s = from_voigt_upper(upper)
    assert np.allclose(s.C, t.C)


def test_build_field_rejects_bad_raster():
    t = make_isotropic(1.0, 1.0)
    with pytest.raises(ValueError):
        build_field([[0, 2]], [t, t])  # index 2 undefined
    with pytest.raises(ValueError):
        build_field(np.zeros((0, 0), dtype=int), [t])


def test_phase_lookup_wraps_periodically():
    field = build_field([[0, 1], [1, 0]],
                        [make_isotropic(1, 1), make_isotropic(2, 2)])
    assert field.phase_at(np.array(0.1), np.array(0.1)) == 0
    assert field.phase_at(np.array(1.1), np.array(0.1)) == 0
    assert field.phase_at(np.array(0.6), np.array(0.1)) == 1
    assert sample_field(field, 0.6, 0.1) is field.phases[1]


def test_homogeneous_field_is_planar_for_isotropic():
    f = homogeneous_field(make_isotropic(1.0, 1.0))
    assert f.planar_symmetric
    assert f.raster.shape == (1, 1)


def test_field_from_config():
    doc = {"material": {"raster": [[0, 1]],
                        "phases": [{"lambda": 1.0, "mu": 1.0},
                                   {"lambda": 5.0, "mu": 2.0}]}}
    field = field_from_config(doc)
    assert len(field.phases) == 2
    with pytest.raises(ValueError):
        field_from_config({"material": {"raster": [[0]]}})
