"""Unit tests for refractive-index models."""

import io

import numpy as np
import pytest

from pcion.materials import (
    ConstantIndex,
    MaterialError,
    MetamaterialSpec,
    SellmeierTail,
    TabulatedIndex,
    build_effective_model,
    bundled_data_path,
    eval_index,
    load_hfo2_permittivity,
    load_index_table,
    mean_index,
    sellmeier_c1,
)


def test_constant_index_eval():
    model = ConstantIndex(1.7)
    assert eval_index(model, 3.0) == 1.7
    np.testing.assert_allclose(eval_index(model, np.array([0.1, 5.0, 40.0])), 1.7)


def test_constant_index_validation():
    with pytest.raises(MaterialError):
        ConstantIndex(0.0)
    with pytest.raises(MaterialError):
        ConstantIndex(float("nan"))


def test_sellmeier_eval():
    model = SellmeierTail(2.0, 3.0)
    w = 2.0
    assert eval_index(model, w) == pytest.approx(1.0 + 2.0 / 4.0 + 3.0 / 16.0, rel=1e-15)
    assert sellmeier_c1(model, 10.0) == 2.0


def test_tabulated_regions():
    model = TabulatedIndex(
        np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.2, 2.1]), omega_roll_ev=5.0
    )
    # constant below the table
    assert eval_index(model, 0.2) == 2.0
    # interpolation hits the knots
    assert eval_index(model, 2.0) == pytest.approx(2.2, rel=1e-14)
    # constant between table end and rolloff
    assert eval_index(model, 4.0) == pytest.approx(2.1, rel=1e-14)
    # power-law rolloff above
    assert eval_index(model, 10.0) == pytest.approx(1.0 + 1.1 * (5.0 / 10.0) ** 2, rel=1e-14)
    # rolloff is continuous at omega_roll
    lo = eval_index(model, 5.0 * (1 - 1e-12))
    hi = eval_index(model, 5.0 * (1 + 1e-12))
    assert abs(lo - hi) < 1e-9


def test_tabulated_clips_at_rolloff():
    model = TabulatedIndex(
        np.array([1.0, 2.0, 6.0]), np.array([2.0, 2.2, 1.4]), omega_roll_ev=4.0
    )
    assert model.omega_ev[-1] == 4.0
    # n_last is the interpolated value at the rolloff energy
    assert 1.4 < model.n_last < 2.2


def test_tabulated_validation():
    with pytest.raises(MaterialError):
        TabulatedIndex(np.array([2.0, 1.0]), np.array([2.0, 2.0]), 5.0)
    with pytest.raises(MaterialError):
        TabulatedIndex(np.array([1.0, 2.0]), np.array([2.0, -1.0]), 5.0)
    with pytest.raises(MaterialError):
        TabulatedIndex(np.array([]), np.array([]), 5.0)


def test_tabulated_c1_equivalent():
    model = TabulatedIndex(
        np.array([1.0, 2.0]), np.array([2.0, 2.5]), omega_roll_ev=4.0,
        rolloff_exponent=2.0,
    )
    # with p = 2 the rolloff is exactly Sellmeier-like: n-1 = c1/w^2
    c1 = sellmeier_c1(model, 20.0)
    assert c1 == pytest.approx(1.5 * 16.0, rel=1e-14)
    assert eval_index(model, 20.0) - 1.0 == pytest.approx(c1 / 400.0, rel=1e-12)


def test_mean_index_trapezoid_oracle():
    # Sellmeier C1=1 averaged over [1, 10]; clipped away from the omega -> 0
    # pole.  Dense trapezoid oracle.
    model = SellmeierTail(1.0, 0.0)
    w = np.linspace(1.0, 10.0, 200001)
    oracle = np.trapezoid(eval_index(model, w), w) / 9.0
    assert mean_index(model, 10.0, 1.0) == pytest.approx(oracle, abs=1e-4)


def test_mean_index_constant():
    assert mean_index(ConstantIndex(3.0), 12.0) == 3.0


def test_metamaterial_effective_index():
    spec = MetamaterialSpec(30.0, 0.5)
    w = np.array([1.0, 2.0])
    eps = np.array([4.0, 4.41])
    model = build_effective_model(spec, w, eps, omega_roll_ev=10.0)
    assert eval_index(model, 1.0) == pytest.approx(np.sqrt(60.0 * 4.0), rel=1e-12)


def test_metamaterial_validation():
    with pytest.raises(MaterialError):
        MetamaterialSpec(30.0, 30.0)
    with pytest.raises(MaterialError):
        MetamaterialSpec(-1.0, 0.5)


def test_bundled_hfo2_mean_index_window():
    # bundled gap-filler with a = 30, g = 0.5 gives a mean effective index
    # near 8 over [0, 35] eV
    w, eps = load_hfo2_permittivity()
    model = build_effective_model(MetamaterialSpec(30.0, 0.5), w, eps, 10.0)
    m = mean_index(model, 35.0)
    assert 6.0 < m < 10.0


def test_load_index_table_roundtrip(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("omega_ev,n\n1.0,2.0\n2.0,2.5\n", encoding="utf-8")
    w, n = load_index_table(p)
    np.testing.assert_allclose(w, [1.0, 2.0])
    np.testing.assert_allclose(n, [2.0, 2.5])


def test_load_index_table_errors():
    with pytest.raises(MaterialError):
        load_index_table(io.StringIO("bad,header\n1,2\n"))
    with pytest.raises(MaterialError):
        load_index_table(io.StringIO("omega_ev,n\n"))


def test_bundled_data_present():
    assert bundled_data_path("hfo2_n.csv").is_file()
    assert bundled_data_path("atoms.csv").is_file()
