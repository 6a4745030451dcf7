"""Refractive-index models for the high-index layer of the 1D stack.

Three variants are supported:

* ``ConstantIndex`` -- dispersionless n.
* ``SellmeierTail`` -- the high-energy expansion n = 1 + C1/w^2 + C2/w^4.
* ``TabulatedIndex`` -- monotone-cubic interpolation of (omega_ev, n) samples
  with a power-law rolloff to 1 above a configurable energy, which is how the
  metamaterial curves are extended beyond the experimentally known range.

The metamaterial effective index n_eff = sqrt((a/g) * eps_d) is built from a
tabulated gap-filler permittivity by ``build_effective_model``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator


class MaterialError(ValueError):
    """Invalid material model or evaluation outside the model's domain."""


@dataclass(frozen=True)
class ConstantIndex:
    n: float

    def __post_init__(self):
        if not np.isfinite(self.n) or self.n <= 0:
            raise MaterialError(f"constant index must be positive, got {self.n}")


@dataclass(frozen=True)
class SellmeierTail:
    """n(w) = 1 + c1/w^2 + c2/w^4 with c1 in eV^2 and c2 in eV^4."""

    c1: float
    c2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise MaterialError("Sellmeier coefficients must be finite")


@dataclass(frozen=True, eq=False)
class TabulatedIndex:
    """Sampled n(omega) with constant extension below the table and a
    power-law blend n = 1 + (n_last - 1) * (omega_roll / omega)^p above
    omega_roll.  Samples beyond omega_roll are discarded at construction so
    the curve is continuous at the blend point."""

    omega_ev: np.ndarray
    n: np.ndarray
    omega_roll_ev: float
    rolloff_exponent: float = 2.0
    _interp: PchipInterpolator = field(
        init=False, repr=False, compare=False, default=None
    )
    _n_last: float = field(init=False, repr=False, compare=False, default=1.0)

    def __post_init__(self):
        w = np.asarray(self.omega_ev, dtype=float)
        n = np.asarray(self.n, dtype=float)
        if w.size == 0:
            raise MaterialError("empty index table")
        if w.size != n.size:
            raise MaterialError("omega/n column length mismatch")
        if np.any(~np.isfinite(w)) or np.any(~np.isfinite(n)):
            raise MaterialError("non-finite entries in index table")
        if np.any(np.diff(w) <= 0):
            raise MaterialError("table energies must be strictly increasing")
        if np.any(n <= 0):
            raise MaterialError("table indices must be positive")
        if not (np.isfinite(self.omega_roll_ev) and self.omega_roll_ev > 0):
            raise MaterialError("rolloff energy must be positive")
        if self.rolloff_exponent <= 0:
            raise MaterialError("rolloff exponent must be positive")

        # Clip the table at the rolloff energy, interpolating a knot exactly
        # there when the raw table extends beyond it.
        if w[-1] > self.omega_roll_ev:
            interp_full = PchipInterpolator(w, n, extrapolate=False)
            keep = w < self.omega_roll_ev
            if not np.any(keep):
                raise MaterialError("rolloff energy below first table knot")
            w_clip = np.append(w[keep], self.omega_roll_ev)
            n_clip = np.append(n[keep], float(interp_full(self.omega_roll_ev)))
        else:
            w_clip, n_clip = w, n

        w_clip = np.ascontiguousarray(w_clip)
        n_clip = np.ascontiguousarray(n_clip)
        w_clip.setflags(write=False)
        n_clip.setflags(write=False)
        object.__setattr__(self, "omega_ev", w_clip)
        object.__setattr__(self, "n", n_clip)
        object.__setattr__(self, "_interp", PchipInterpolator(w_clip, n_clip))
        object.__setattr__(self, "_n_last", float(n_clip[-1]))

    @property
    def n_last(self) -> float:
        return self._n_last


IndexModel = Union[ConstantIndex, SellmeierTail, TabulatedIndex]


@dataclass(frozen=True)
class MetamaterialSpec:
    """Nanoparticle-superlattice geometry: array period a and gap g, in nm."""

    a_nm: float
    g_nm: float

    def __post_init__(self):
        if not (self.a_nm > 0 and self.g_nm > 0):
            raise MaterialError("metamaterial a and g must be positive")
        if self.g_nm >= self.a_nm:
            raise MaterialError("gap g must be smaller than period a")


def eval_index(model: IndexModel, omega_ev):
    """Refractive index at photon energy omega_ev (eV).  Vectorized."""
    w = np.asarray(omega_ev, dtype=float)
    if np.any(~np.isfinite(w)):
        raise MaterialError("non-finite photon energy")
    scalar = w.ndim == 0
    w = np.atleast_1d(w)

    if isinstance(model, ConstantIndex):
        out = np.full_like(w, model.n)
    elif isinstance(model, SellmeierTail):
        with np.errstate(divide="ignore"):
            out = 1.0 + model.c1 / w**2 + model.c2 / w**4
    elif isinstance(model, TabulatedIndex):
        roll = model.omega_roll_ev
        out = np.empty_like(w)
        lo = w <= model.omega_ev[0]
        hi = w > roll
        flat = (w > model.omega_ev[-1]) & ~hi  # constant gap between table end and rolloff
        mid = ~lo & ~hi & ~flat
        out[lo] = model.n[0]
        out[mid] = model._interp(w[mid])
        out[flat] = model.n_last
        out[hi] = 1.0 + (model.n_last - 1.0) * (roll / w[hi]) ** model.rolloff_exponent
    else:
        raise MaterialError(f"unknown index model {model!r}")

    return float(out[0]) if scalar else out


def sellmeier_c1(model: IndexModel, lambda_ev: float) -> float:
    """Leading 1/omega^2 coefficient of n - 1 at high energy, in eV^2.

    Used by the high-energy tail of the mass correction.  For a tabulated
    model with rolloff exponent p the local equivalent at the cutoff is
    (n_last - 1) * omega_roll^p * Lambda^(p-2), which reduces to the exact
    coefficient when p = 2.  A constant index has no rolloff and contributes
    no tail.
    """
    if isinstance(model, ConstantIndex):
        return 0.0
    if isinstance(model, SellmeierTail):
        return model.c1
    if isinstance(model, TabulatedIndex):
        p = model.rolloff_exponent
        roll = model.omega_roll_ev
        return (model.n_last - 1.0) * roll**p * lambda_ev ** (p - 2.0)
    raise MaterialError(f"unknown index model {model!r}")


def build_effective_model(
    spec: MetamaterialSpec,
    eps_omega_ev: np.ndarray,
    eps_d: np.ndarray,
    omega_roll_ev: float,
    rolloff_exponent: float = 2.0,
) -> TabulatedIndex:
    """Tabulated n_eff(omega) = sqrt((a/g) * eps_d(omega)) with rolloff."""
    eps = np.asarray(eps_d, dtype=float)
    w = np.asarray(eps_omega_ev, dtype=float)
    if eps.size == 0:
        raise MaterialError("empty permittivity table")
    if np.any(eps < 0):
        raise MaterialError("gap-filler permittivity must be non-negative")
    n_eff = np.sqrt((spec.a_nm / spec.g_nm) * eps)
    return TabulatedIndex(w, n_eff, omega_roll_ev, rolloff_exponent)


def mean_index(model: IndexModel, omega_max_ev: float, omega_min_ev: float = 0.0) -> float:
    """Flat average of n(omega) over [omega_min, omega_max], adaptive quadrature."""
    if omega_max_ev <= omega_min_ev:
        raise MaterialError("omega_max must exceed omega_min")
    if isinstance(model, ConstantIndex):
        return model.n

    pts = []
    if isinstance(model, TabulatedIndex):
        pts = [w for w in model.omega_ev if omega_min_ev < w < omega_max_ev]
    val, _ = quad(
        lambda w: eval_index(model, w),
        omega_min_ev,
        omega_max_ev,
        points=pts or None,
        epsrel=1e-9,
        epsabs=0.0,
        limit=200,
    )
    return val / (omega_max_ev - omega_min_ev)


def load_index_table(source) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column CSV table ``omega_ev,n`` (header required, UTF-8)."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or len(header) < 2:
        raise MaterialError("index table needs a header row with two columns")
    h0, h1 = header[0].strip().lower(), header[1].strip().lower()
    if h0 != "omega_ev":
        raise MaterialError(f"expected first column 'omega_ev', got {header[0]!r}")
    omegas, values = [], []
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        omegas.append(float(row[0]))
        values.append(float(row[1]))
    if not omegas:
        raise MaterialError("index table has no data rows")
    return np.asarray(omegas), np.asarray(values)


def bundled_data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def load_hfo2_permittivity() -> tuple[np.ndarray, np.ndarray]:
    """Bundled HfO2 refractive-index curve converted to permittivity.

    The table is a digitized approximation of published HfO2 film optical
    constants; see data/README_data.md.  Returns (omega_ev, eps_d).
    """
    w, n = load_index_table(bundled_data_path("hfo2_n.csv"))
    return w, n**2
