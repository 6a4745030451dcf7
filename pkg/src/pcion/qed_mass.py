"""Anisotropic correction to the electron electromagnetic mass in the 1D
photonic crystal.

The observable correction operator is A + B cos^2(Theta), where Theta is the
angle between the electron momentum and the stack axis.  A and B are
Brillouin-zone integrals over all Bloch modes with frequency below the
matched cutoff Lambda:

  A = (alpha/pi) sum_{n,G} int k_rho dk_rho int_FBZ dk_z
        [ P_TM(G)/w_TM^2 * kGz^2/(k_rho^2 + kGz^2) + P_TE(G)/w_TE^2 ]
      - (4 alpha / 3 pi) Lambda + tail
  B = (alpha/pi) sum_{n,G} int k_rho dk_rho int_FBZ dk_z
        [ P_TM(G)/w_TM^2 * (2 k_rho^2 - kGz^2)/(k_rho^2 + kGz^2)
          - P_TE(G)/w_TE^2 ]

with kGz = k_z + G and P the squared transverse Fourier amplitudes.  The
assignment of the directional weight follows the azimuthal reduction of the
|I_p . eps|^2 factors: the polarization lying in the (axis, k_G) plane (TM)
carries the kGz-dependent weight and the out-of-plane polarization (TE) the
isotropic one.  Modes are counted by energy (w < Lambda) and the vacuum
subtraction uses the same energy cutoff, whose closed form is
(4 alpha / 3 pi) Lambda; the w > Lambda remainder is the analytic Sellmeier
tail (2 alpha / 3 pi) C1 d_h / ((d_h + d_l) Lambda).

Numerically, for each k_z Gauss node the k_rho axis is split at the
thresholds where a band crosses the cutoff (located by bisection on the
band-count function, which is monotone in k_rho), so the quadrature only
ever sees piecewise-smooth integrands.  Accumulation is an ordered pairwise
reduction, which makes results bit-identical across worker counts.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import ALPHA, HBARC_EV_NM as HBARC
from . import bloch
from .bloch import TE, TM, KPoint, Stack1D
from .materials import sellmeier_c1


class MassComputationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CutoffConfig:
    """Cutoff and quadrature resolution for the mass-correction integrals.

    lambda_ev  -- energy cutoff of the matched subtraction (eV)
    n_z        -- Gauss cells across the full FBZ in k_z (4 nodes per cell)
    n_rho      -- Gauss nodes per smooth k_rho panel
    m_max      -- initial reciprocal-vector window half-width (auto-grown)
    k_rho_max  -- transverse cutoff in nm^-1; derived from the index model
                  when None
    band_max   -- optional hard cap on bands per k-point (diagnostic use)
    refine     -- also evaluate a half-resolution grid for the convergence
                  delta
    """

    lambda_ev: float
    n_z: int = 16
    n_rho: int = 8
    m_max: int = 16
    k_rho_max: float | None = None
    band_max: int | None = None
    refine: bool = True
    pts_per_band: int = 8

    def __post_init__(self):
        if not self.lambda_ev > 0:
            raise ValueError("cutoff energy must be positive")
        if self.n_z < 8 or self.n_rho < 8:
            raise ValueError("quadrature grids must be >= 8")
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")


@dataclass(frozen=True)
class ElectronDirection:
    """Unit vector of the electron momentum: polar angle to the stack axis
    and azimuth (radians)."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError("polar angle must lie in [0, pi]")


@dataclass
class MassCoefficients:
    a_ev: float
    b_ev: float
    tail_ev: float
    lambda_ev: float
    refinement_delta: float
    shells: list = field(default_factory=list)
    cross_term_residual: float | None = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    node_results: dict | None = field(default=None, repr=False)

    def to_json(self) -> str:
        payload = {
            "A_ev": self.a_ev,
            "B_ev": self.b_ev,
            "tail_ev": self.tail_ev,
            "lambda_ev": self.lambda_ev,
            "refinement_delta": self.refinement_delta,
            "shells": list(self.shells),
            "converged": self.converged,
        }
        if self.cross_term_residual is not None:
            payload["cross_term_residual"] = self.cross_term_residual
        payload.update(self.diagnostics)
        return json.dumps(payload, indent=2, sort_keys=True)


def delta_m(coeffs: MassCoefficients, direction: ElectronDirection) -> float:
    """Mass correction for an electron moving along the given direction (eV).
    Independent of the azimuth."""
    return coeffs.a_ev + coeffs.b_ev * np.cos(direction.theta) ** 2


def estimate_mass_correction(n_mean: float, lambda_n_ev: float) -> float:
    """Order-of-magnitude estimate (alpha/pi) * Lambda_N * <n>^2 in eV."""
    if n_mean < 1:
        raise ValueError("mean index must be >= 1")
    if lambda_n_ev < 0:
        raise ValueError("cutoff must be non-negative")
    return (ALPHA / np.pi) * lambda_n_ev * n_mean**2


def he_tail(c1_ev2: float, d_h: float, d_l: float, lambda_ev: float) -> float:
    """Closed-form high-energy remainder of the A integral, in eV.

    Equals (alpha / 6 pi^2) * (C1 d_h / (d_h + d_l)) * int_{k>Lambda} d^3k/k^4.
    """
    if not lambda_ev > 0:
        raise ValueError("cutoff must be positive")
    return (2.0 * ALPHA / (3.0 * np.pi)) * c1_ev2 * d_h / ((d_h + d_l) * lambda_ev)


# ---------------------------------------------------------------------------
# quadrature internals
# ---------------------------------------------------------------------------

_GL_PER_CELL = 4


def derive_k_rho_max(stack: Stack1D, lambda_ev: float) -> float:
    """Largest transverse wavenumber of any mode below the cutoff: a band
    needs a propagating high-index layer, so k_rho <= max_w w n_h(w)/hbar c."""
    w = np.linspace(0.0, lambda_ev, 2049)
    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.maximum(np.atleast_1d(stack.n_h(w)), stack.n_l)
        k = np.where(w > 0, w * n, 0.0)
    bound = float(np.max(k)) / HBARC * (1.0 + 1e-9)
    if not np.isfinite(bound):
        raise MassComputationError(
            "index model gives an unbounded w*n(w): no finite transverse "
            "cutoff exists below the energy cutoff"
        )
    return bound


def _gauss_cells(lo: float, hi: float, n_cells: int, n_nodes: int):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(lo, hi, n_cells + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(w * h)
    return np.concatenate(nodes), np.concatenate(weights)


def _count_bands(k_rho: float, k_z: float, pol: str, stack: Stack1D, lam: float, pts: int) -> int:
    """Number of band frequencies below the cutoff (no root polishing)."""
    return bloch.count_bands(KPoint(k_rho, k_z, pol), stack, lam, pts)


def _cut_thresholds(k_z: float, pol: str, stack: Stack1D, cutoff: CutoffConfig, kr_max: float):
    """k_rho values where a band crosses the cutoff, ascending."""
    lam, pts = cutoff.lambda_ev, cutoff.pts_per_band
    c0 = _count_bands(0.0, k_z, pol, stack, lam, pts)
    c_top = _count_bands(kr_max, k_z, pol, stack, lam, pts)
    thresholds = []
    lo_floor = 0.0
    for j in range(c0, c_top, -1):
        # sup { k_rho : count >= j }; count is non-increasing in k_rho
        lo, hi = lo_floor, kr_max
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            if _count_bands(mid, k_z, pol, stack, lam, pts) >= j:
                lo = mid
            else:
                hi = mid
        thresholds.append(0.5 * (lo + hi))
        lo_floor = lo
    return np.asarray(thresholds)


def _band_weights(
    k_rho: float, k_z: float, pol: str, stack: Stack1D, cutoff: CutoffConfig
):
    """Per-band A/B integrand weights at one k-point.

    Returns (omegas, wA, wB, shell_partials) where the weights already include
    the transverse-projection and directional factors but not the k_rho
    measure.  Energies in eV, so the weights carry eV^-2.
    """
    kp = KPoint(k_rho, k_z, pol)
    omegas = bloch.solve_bands(kp, stack, cutoff.lambda_ev, pts_per_band=cutoff.pts_per_band)
    if cutoff.band_max is not None:
        omegas = omegas[: cutoff.band_max]
    if omegas.size == 0:
        return omegas, np.zeros(0), np.zeros(0), np.zeros(0)

    layers, degenerate = bloch._mode_fields_batch(omegas, kp, stack)
    if np.any(degenerate):
        raise MassComputationError(
            f"degenerate mode at k_rho={k_rho}, k_z={k_z}, {pol}"
        )

    kr_ev = k_rho * HBARC
    m = cutoff.m_max
    while True:
        ms = np.arange(-m, m + 1)
        coeffs = bloch._coefficients_batch(layers, kp, stack, ms)
        kgz_ev = (k_z + stack.g_m(ms)) * HBARC  # (nm,)
        k2 = kr_ev**2 + kgz_ev**2
        k2 = np.where(k2 > 0, k2, np.inf)
        if pol == TE:
            proj = np.abs(coeffs[:, :, 1]) ** 2
            f_a = np.ones_like(k2)
            f_b = -np.ones_like(k2)
        else:
            e2z = -kr_ev / np.sqrt(k2)
            e2x = kgz_ev / np.sqrt(k2)
            proj = np.abs(coeffs[:, :, 0] * e2x + coeffs[:, :, 2] * e2z) ** 2
            f_a = kgz_ev**2 / k2
            f_b = (2.0 * kr_ev**2 - kgz_ev**2) / k2

        inv_w2 = 1.0 / omegas**2
        wa = (proj * f_a[None, :]).sum(axis=1) * inv_w2
        wb = (proj * f_b[None, :]).sum(axis=1) * inv_w2

        # |m|-shell partial power, for the G-truncation rule and diagnostics
        power = (proj * inv_w2[:, None]).sum(axis=0)
        shells = np.zeros(m + 1)
        shells[0] = power[m]
        for s in range(1, m + 1):
            shells[s] = power[m - s] + power[m + s]
        total = shells.sum()
        if total <= 0 or shells[-1] <= 1e-4 * total or m >= 512:
            return omegas, wa, wb, shells
        m = min(2 * m, 512)


def _kz_node_contrib(args):
    """Contribution of one (polarization, k_z node) to the raw A/B integrals,
    in eV^3 (before the alpha/pi prefactor)."""
    stack, cutoff, pol, k_z, kr_max = args
    solves_before = bloch.solve_counter()
    thresholds = _cut_thresholds(k_z, pol, stack, cutoff, kr_max)
    ia = 0.0
    ib = 0.0
    shells_acc = np.zeros(1)
    # near k_rho = 0 the lowest band makes the integrand vary on the scale
    # |k_z|; grade the cells down to that scale
    krs, wqs = _gauss_cells_broken(
        kr_max,
        thresholds,
        max(1, len(thresholds) + 1),
        cutoff.n_rho,
        grade_scale=abs(k_z) / 5.0,
    )
    for kr, wi in zip(krs, wqs):
        _, wa, wb, shells = _band_weights(kr, k_z, pol, stack, cutoff)
        meas = (wi * HBARC) * (kr * HBARC)  # k_rho dk_rho in eV^2
        ia += meas * wa.sum()
        ib += meas * wb.sum()
        if shells.size > shells_acc.size:
            shells_acc = np.pad(shells_acc, (0, shells.size - shells_acc.size))
        shells_acc[: shells.size] += meas * shells
    return ia, ib, shells_acc, bloch.solve_counter() - solves_before


def _kz_break_points(stack: Stack1D, cutoff: CutoffConfig) -> np.ndarray:
    """k_z values in (0, pi/L) where a band bottom (k_rho = 0, where TE and
    TM coincide) crosses the cutoff.  The k_rho integral has a kink in k_z at
    each of these, so quadrature cells must not straddle them."""
    lam, pts = cutoff.lambda_ev, cutoff.pts_per_band
    kz_lim = np.pi / stack.period
    # start slightly above zero: at k_z = 0 the acoustic band sits exactly at
    # omega = 0 and the scan-based count is unreliable, which would plant a
    # spurious break point inside the graded region
    grid = np.linspace(1e-6 * kz_lim, kz_lim, 257)
    counts = [_count_bands(0.0, kz, TE, stack, lam, pts) for kz in grid]
    breaks = []
    for i in range(len(grid) - 1):
        if counts[i] == counts[i + 1]:
            continue
        lo, hi = grid[i], grid[i + 1]
        ref = counts[i]
        for _ in range(45):
            mid = 0.5 * (lo + hi)
            if _count_bands(0.0, mid, TE, stack, lam, pts) == ref:
                lo = mid
            else:
                hi = mid
        breaks.append(0.5 * (lo + hi))
    return np.asarray([b for b in breaks if b > 1e-5 * kz_lim])


# geometric-grading parameters for the end-point log singularity: cell ratio,
# Gauss nodes per graded cell, and smallest-cell floor relative to the graded
# span (balanced so the grading error stays far below the quadrature budget)
_GRADE_RATIO = 0.3
_GRADE_NODES = 8
_GRADE_FLOOR = 1e-4


def _graded_edges(lo, hi, scale, ratio=None):
    """Geometrically graded cell edges on [lo, hi] refining toward lo, with
    the smallest cell of size ~scale.  Used where the integrand has an
    integrable logarithmic end-point singularity."""
    if ratio is None:
        ratio = _GRADE_RATIO
    offs = [hi - lo]
    e = (hi - lo) * ratio
    while e > scale:
        offs.append(e)
        e *= ratio
    offs.append(0.0)
    return lo + np.asarray(offs[::-1])


def _graded_gauss(lo, hi, scale, n_nodes, ratio=None):
    edges = _graded_edges(lo, hi, scale, ratio)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(w * h)
    return np.concatenate(nodes), np.concatenate(weights)


def _gauss_cells_broken(hi, break_points, n_cells, n_nodes, grade_scale=0.0):
    """Gauss nodes on [0, hi] with cell edges aligned to break_points and
    geometric grading toward 0, where the omega^-2 weight of the acoustic
    band makes the integrand logarithmic.

    The graded edges are merged with the break edges rather than stopped at
    the first break: the scan-based break detector can report spurious break
    points very close to 0 (near-degenerate root pairs), and those must not
    be allowed to truncate the grading.  Cells inside the graded region use
    the grading node count; the rest use n_nodes with cells apportioned by
    length.
    """
    breaks = np.asarray(break_points, dtype=float)
    big = breaks[breaks > 0.02 * hi]
    cut = 0.25 * (big.min() if big.size else hi)
    # grade down to the physical scale when one is given (structure at that
    # scale is real and must be resolved); otherwise the singularity is a
    # pure logarithm and _GRADE_FLOOR bounds the useful depth
    if grade_scale > 0.0:
        floor = max(grade_scale, cut * 1e-6)
    else:
        floor = cut * _GRADE_FLOOR
    g_edges = _graded_edges(0.0, cut, floor)
    edges = np.unique(np.concatenate((g_edges, breaks, [0.0, hi])))
    edges = edges[(edges >= 0.0) & (edges <= hi)]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-14 * hi:
            continue
        if b <= cut * (1.0 + 1e-12):
            cells, nn = 1, _GRADE_NODES
        else:
            cells = max(1, int(np.ceil(n_cells * (b - a) / hi)))
            nn = n_nodes
        x, w = _gauss_cells(a, b, cells, nn)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _pairwise(values):
    """Ordered pairwise (tree) reduction; reproducible across worker counts."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = []
        for i in range(0, len(vals) - 1, 2):
            nxt.append(vals[i] + vals[i + 1])
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def _integrate_grid(stack, cutoff, n_z_cells, n_rho, workers, node_results=None):
    """Raw (IA, IB, shells, solves, nodes) on an n_z_cells k_z grid.

    node_results, when given, replaces computation (cache path); it must be a
    list matching the task order.
    """
    # the integrand is even in k_z, so integrate [0, pi/L] and double
    kz_lim = np.pi / stack.period
    breaks = _kz_break_points(stack, cutoff)
    nodes, weights = _gauss_cells_broken(kz_lim, breaks, n_z_cells, _GL_PER_CELL)
    weights = 2.0 * weights
    kr_max = (
        cutoff.k_rho_max
        if cutoff.k_rho_max is not None
        else derive_k_rho_max(stack, cutoff.lambda_ev)
    )
    sub = CutoffConfig(
        lambda_ev=cutoff.lambda_ev,
        n_z=max(8, n_z_cells),
        n_rho=max(8, n_rho),
        m_max=cutoff.m_max,
        k_rho_max=kr_max,
        band_max=cutoff.band_max,
        refine=False,
        pts_per_band=cutoff.pts_per_band,
    )
    # override per-panel node count after validation (n_rho may be < 8 on the
    # coarse refinement pass)
    object.__setattr__(sub, "n_rho", n_rho)

    tasks = [
        (stack, sub, pol, float(kz), kr_max)
        for pol in (TE, TM)
        for kz in nodes
    ]
    if node_results is None:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                node_results = list(pool.map(_kz_node_contrib, tasks, chunksize=1))
        else:
            node_results = [_kz_node_contrib(t) for t in tasks]

    wz = np.concatenate([weights, weights]) * HBARC  # dk_z in eV
    ia = _pairwise([w * r[0] for w, r in zip(wz, node_results)])
    ib = _pairwise([w * r[1] for w, r in zip(wz, node_results)])
    max_sh = max(r[2].size for r in node_results)
    shells = np.zeros(max_sh)
    for w, r in zip(wz, node_results):
        shells[: r[2].size] += w * r[2]
    solves = sum(r[3] for r in node_results)
    return ia, ib, shells, solves, node_results


def compute_AB(
    stack: Stack1D,
    cutoff: CutoffConfig,
    workers: int = 1,
    cached_nodes=None,
) -> MassCoefficients:
    """Mass-correction coefficients A and B (eV) with diagnostics.

    cached_nodes, when provided, must be the {'fine': [...], 'coarse': [...]}
    node results of a previous identical run; the quadrature is then
    re-assembled without any dispersion solves.
    """
    lam = cutoff.lambda_ev
    fine_nodes = cached_nodes.get("fine") if cached_nodes else None
    coarse_nodes = cached_nodes.get("coarse") if cached_nodes else None

    ia_f, ib_f, shells, solves_f, fine_res = _integrate_grid(
        stack, cutoff, cutoff.n_z, cutoff.n_rho, workers, fine_nodes
    )
    pref = ALPHA / np.pi
    vac = (4.0 * ALPHA / (3.0 * np.pi)) * lam
    tail = he_tail(
        sellmeier_c1(stack.index_model, lam), stack.d_h, stack.d_l, lam
    )
    a_f = pref * ia_f - vac + tail
    b_f = pref * ib_f

    delta = 0.0
    coarse_res = None
    if cutoff.refine or coarse_nodes is not None:
        ia_c, ib_c, _, solves_c, coarse_res = _integrate_grid(
            stack,
            cutoff,
            max(4, cutoff.n_z // 2),
            max(4, cutoff.n_rho // 2),
            workers,
            coarse_nodes,
        )
        a_c = pref * ia_c - vac + tail
        b_c = pref * ib_c
        scale = max(abs(a_f) + abs(b_f), 1e-2 * vac)
        delta = (abs(a_f - a_c) + abs(b_f - b_c)) / scale
    else:
        solves_c = 0

    coeffs = MassCoefficients(
        a_ev=float(a_f),
        b_ev=float(b_f),
        tail_ev=float(tail),
        lambda_ev=float(lam),
        refinement_delta=float(delta),
        shells=[float(s) for s in pref * shells],
        converged=bool(delta <= 0.05),
        diagnostics={
            "vacuum_subtraction_ev": float(vac),
            "dispersion_solves": int(solves_f + solves_c),
            "n_z": cutoff.n_z,
            "n_rho": cutoff.n_rho,
        },
    )
    coeffs.node_results = {"fine": fine_res, "coarse": coarse_res}
    return coeffs


# ---------------------------------------------------------------------------
# azimuthal cross-term diagnostic
# ---------------------------------------------------------------------------


def cross_term_residual(
    stack: Stack1D,
    cutoff: CutoffConfig,
    n_samples: int = 3,
    n_azimuth: int = 64,
    theta: float = 1.1,
    phi: float = 0.6,
) -> float:
    """Largest azimuthally integrated TE x TM cross term relative to the
    diagonal terms, over a deterministic sample of k-points and G vectors.
    Exact angular orthogonality makes this vanish; the numerical value is a
    quadrature sanity bound."""
    kz_lim = np.pi / stack.period
    kr_max = derive_k_rho_max(stack, cutoff.lambda_ev)
    worst = 0.0
    az = np.linspace(0.0, 2.0 * np.pi, n_azimuth, endpoint=False)
    for i in range(1, n_samples + 1):
        k_rho = kr_max * i / (n_samples + 1.5)
        k_z = kz_lim * (0.8 * i / n_samples - 0.3)
        w_te = bloch.solve_bands(KPoint(k_rho, k_z, TE), stack, cutoff.lambda_ev)
        w_tm = bloch.solve_bands(KPoint(k_rho, k_z, TM), stack, cutoff.lambda_ev)
        if w_te.size == 0 or w_tm.size == 0:
            continue
        n_bands = min(3, w_te.size, w_tm.size)
        l_te, _ = bloch._mode_fields_batch(w_te[:n_bands], KPoint(k_rho, k_z, TE), stack)
        l_tm, _ = bloch._mode_fields_batch(w_tm[:n_bands], KPoint(k_rho, k_z, TM), stack)
        ms = np.arange(-2, 3)
        c_te = bloch._coefficients_batch(l_te, KPoint(k_rho, k_z, TE), stack, ms)
        c_tm = bloch._coefficients_batch(l_tm, KPoint(k_rho, k_z, TM), stack, ms)
        kgz = (k_z + stack.g_m(ms)) * HBARC
        kr_ev = k_rho * HBARC
        kg = np.sqrt(kr_ev**2 + kgz**2)
        sin_e, cos_e = kgz / kg, -kr_ev / kg
        for b in range(n_bands):
            for j, m in enumerate(ms):
                e1 = np.abs(c_te[b, j, 1])
                e2x = kgz[j] / kg[j]
                e2z = -kr_ev / kg[j]
                e2 = np.abs(c_tm[b, j, 0] * e2x + c_tm[b, j, 2] * e2z)
                f1 = np.sin(theta) * np.sin(phi - az)
                f2 = sin_e[j] * np.sin(theta) * np.cos(phi - az) + cos_e[j] * np.cos(theta)
                cross = abs(np.mean(2.0 * f1 * f2) * e1 * e2 / (w_te[b] * w_tm[b]))
                diag = np.mean(
                    f1**2 * e1**2 / w_te[b] ** 2 + f2**2 * e2**2 / w_tm[b] ** 2
                )
                if diag > 0:
                    worst = max(worst, cross / diag)
    return worst
