"""Unit tests for orbital angular averages and ionization shifts."""

import numpy as np
import pytest
from scipy.special import sph_harm_y

from pcion.ionization import (
    AtomRecord,
    IonizationError,
    OrbitalState,
    angular_average,
    delta_m_min,
    delta_m_state,
    ionization_shift,
    load_atoms,
    shifted_table,
)
from pcion.qed_mass import MassCoefficients


def _coeffs(a, b, converged=True):
    return MassCoefficients(a, b, 0.0, 35.0, 0.0, converged=converged)


def _angular_average_oracle(l, m, n_nodes=64):
    # <cos^2 theta> in |l, m> by Gauss-Legendre quadrature of
    # |Y_lm|^2 cos^2 theta over the sphere (azimuth integrates to 2 pi
    # trivially); the integrand is polynomial in cos theta, so this is exact
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = np.arccos(x)
    dens = np.abs(sph_harm_y(l, m, theta, 0.0)) ** 2 * 2.0 * np.pi
    return np.sum(w * dens * x**2) / np.sum(w * dens)


@pytest.mark.parametrize("l", range(5))
def test_angular_average_spherical_harmonic_oracle(l):
    for m in range(-l, l + 1):
        got = angular_average(OrbitalState(l, m))
        assert got == pytest.approx(_angular_average_oracle(l, m), abs=1e-8)


def test_angular_average_s_state():
    assert angular_average(OrbitalState(0, 0)) == pytest.approx(1.0 / 3.0, rel=1e-15)


def test_orbital_state_validation():
    with pytest.raises(IonizationError):
        OrbitalState(-1, 0)
    with pytest.raises(IonizationError):
        OrbitalState(1, 2)


def test_atom_record_validation():
    with pytest.raises(IonizationError):
        AtomRecord("X", -3.0)


def test_delta_m_min_branches():
    dm, direction = delta_m_min(_coeffs(2.0, -0.5))
    assert dm == pytest.approx(1.5)
    assert direction.theta == 0.0
    dm, direction = delta_m_min(_coeffs(2.0, 0.5))
    assert dm == pytest.approx(2.0)
    assert direction.theta == pytest.approx(np.pi / 2)


def test_s_state_shift_closed_form():
    rng = np.random.default_rng(3)
    s = OrbitalState(0, 0)
    for _ in range(50):
        a = rng.normal() * 10.0
        b = rng.normal() * 5.0
        got = ionization_shift(_coeffs(a, b), s)
        want = (2.0 / 3.0) * b if b <= 0 else -(1.0 / 3.0) * b
        assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_shift_independent_of_a():
    # the isotropic part cancels exactly: changing A must leave the shift
    # bit-identical
    rng = np.random.default_rng(5)
    for _ in range(20):
        b = rng.normal()
        state = OrbitalState(int(rng.integers(0, 4)))
        assert ionization_shift(_coeffs(0.0, b), state) == ionization_shift(
            _coeffs(rng.normal() * 100.0, b), state
        )


def test_shift_never_positive():
    # a directional average can never undercut the directional minimum
    rng = np.random.default_rng(9)
    for _ in range(100):
        b = rng.normal() * 10.0
        l = int(rng.integers(0, 5))
        m = int(rng.integers(-l, l + 1))
        assert ionization_shift(_coeffs(rng.normal(), b), OrbitalState(l, m)) <= 0.0


def test_delta_m_state_uses_angular_average():
    state = OrbitalState(2, 1)
    c = _coeffs(1.0, 4.0)
    assert delta_m_state(c, state) == pytest.approx(
        1.0 + 4.0 * angular_average(state), rel=1e-15
    )


def test_load_atoms_bundled():
    atoms = load_atoms()
    table = {a.symbol: a.e_ion_ev for a in atoms}
    assert list(table) == ["H", "Li", "Na", "K", "Rb", "Cs", "Fr"]
    assert table["H"] == pytest.approx(13.598, abs=1e-3)
    assert table["Cs"] == pytest.approx(3.894, abs=1e-3)
    assert all(a.state == OrbitalState(0, 0) for a in atoms)


def test_load_atoms_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("foo,bar\nH,13.6\n", encoding="utf-8")
    with pytest.raises(IonizationError):
        load_atoms(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("symbol,e_ion_ev\n", encoding="utf-8")
    with pytest.raises(IonizationError):
        load_atoms(empty)


def test_shifted_table_rows_and_flags():
    report = shifted_table(_coeffs(1.0, -0.3))
    assert all(row[4] == "ok" for row in report.rows)
    for sym, e0, dE, e1, _ in report.rows:
        assert dE == pytest.approx(-0.2, rel=1e-12)
        assert e1 == pytest.approx(e0 + dE, rel=1e-12)
    report = shifted_table(_coeffs(1.0, -0.3, converged=False))
    assert all(row[4] == "unconverged" for row in report.rows)


def test_report_csv_format():
    text = shifted_table(_coeffs(0.0, -0.3)).to_csv()
    lines = text.splitlines()
    assert lines[0] == "symbol,E_ion_vacuum_ev,dE_ion_ev,E_ion_pc_ev,flag"
    first = lines[1].split(",")
    assert first[0] == "H"
    assert float(first[1]) + float(first[2]) == pytest.approx(float(first[3]))
