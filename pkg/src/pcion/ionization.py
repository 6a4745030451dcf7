"""Ionization-energy shifts of atoms embedded in the photonic crystal.

The electromagnetic mass correction depends on the direction of the electron
momentum through delta_m(Theta) = A + B cos^2(Theta).  A bound electron in an
orbital |l, m> (quantized along the stack axis) samples the angular average
<cos^2 Theta>_{l,m}, while the freed electron leaves along the direction of
minimal mass correction.  The ionization energy therefore shifts by

    delta_E_ion = delta_m_min - delta_m_{l,m},

which for an s state reduces to (2/3) B when B <= 0 and -(1/3) B otherwise.
The isotropic part A cancels and does not shift ionization energies.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .materials import bundled_data_path
from .qed_mass import ElectronDirection, MassCoefficients


class IonizationError(ValueError):
    pass


@dataclass(frozen=True)
class OrbitalState:
    """Orbital angular momentum state; m is quantized along the stack axis."""

    l: int
    m: int = 0

    def __post_init__(self):
        if self.l < 0:
            raise IonizationError(f"l must be non-negative, got {self.l}")
        if abs(self.m) > self.l:
            raise IonizationError(f"|m| <= l required, got l={self.l}, m={self.m}")


@dataclass(frozen=True)
class AtomRecord:
    symbol: str
    e_ion_ev: float
    state: OrbitalState = OrbitalState(0, 0)

    def __post_init__(self):
        if not self.e_ion_ev > 0:
            raise IonizationError("vacuum ionization energy must be positive")


def angular_average(state: OrbitalState) -> float:
    """<cos^2 Theta> in the spherical harmonic |l, m>:
    (2 l^2 + 2 l - 1 - 2 m^2) / ((2 l - 1)(2 l + 3))."""
    l, m = state.l, state.m
    return (2 * l * l + 2 * l - 1 - 2 * m * m) / ((2 * l - 1) * (2 * l + 3))


def delta_m_state(coeffs: MassCoefficients, state: OrbitalState) -> float:
    """Mass correction averaged over the orbital's momentum directions (eV)."""
    return coeffs.a_ev + coeffs.b_ev * angular_average(state)


def delta_m_min(coeffs: MassCoefficients) -> tuple[float, ElectronDirection]:
    """Smallest mass correction over outgoing directions and where it occurs:
    along the axis when B < 0, in the plane otherwise."""
    if coeffs.b_ev < 0:
        return coeffs.a_ev + coeffs.b_ev, ElectronDirection(0.0)
    return coeffs.a_ev, ElectronDirection(np.pi / 2)


def ionization_shift(coeffs: MassCoefficients, state: OrbitalState) -> float:
    """Shift of the ionization energy (eV): delta_m_min - delta_m_state.
    Non-positive by construction, since the average over directions cannot
    lie below the directional minimum.  The isotropic part cancels exactly,
    so the shift is evaluated from the anisotropic coefficient alone and is
    bitwise independent of it."""
    b = coeffs.b_ev
    avg = angular_average(state)
    return (b if b < 0 else 0.0) - b * avg


@dataclass
class IonizationReport:
    coeffs: MassCoefficients
    rows: list  # (symbol, e_ion_vacuum, shift, e_ion_shifted, flag)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["symbol", "E_ion_vacuum_ev", "dE_ion_ev", "E_ion_pc_ev", "flag"])
        for sym, e0, dE, e1, flag in self.rows:
            writer.writerow([sym, repr(float(e0)), repr(float(dE)), repr(float(e1)), flag])
        return buf.getvalue()


def load_atoms(source=None) -> list[AtomRecord]:
    """Atoms from a CSV with columns ``symbol,e_ion_ev``; defaults to the
    bundled table of hydrogen and the alkali metals (ground states, l=0)."""
    path = Path(source) if source is not None else bundled_data_path("atoms.csv")
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header[:2]] != ["symbol", "e_ion_ev"]:
        raise IonizationError("atom table needs header 'symbol,e_ion_ev'")
    records = []
    for row in reader:
        if not row or not row[0].strip():
            continue
        records.append(AtomRecord(row[0].strip(), float(row[1])))
    if not records:
        raise IonizationError("atom table has no data rows")
    return records


def shifted_table(coeffs: MassCoefficients, atoms=None) -> IonizationReport:
    """Ionization energies with the photonic-crystal shift applied."""
    if atoms is None:
        atoms = load_atoms()
    flag = "ok" if coeffs.converged else "unconverged"
    rows = []
    for atom in atoms:
        dE = ionization_shift(coeffs, atom.state)
        rows.append((atom.symbol, atom.e_ion_ev, dE, atom.e_ion_ev + dE, flag))
    return IonizationReport(coeffs=coeffs, rows=rows)
