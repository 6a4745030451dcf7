"""Bloch modes of a 1D layered photonic crystal.

The stack alternates a high-index layer (thickness d_h, index model n_h) and
a low-index layer (thickness d_l, index n_l, air by default).  For a wave
with transverse wavenumber k_rho and Bloch wavenumber k_z the TE/TM
eigenfrequencies solve

    cos(k_z L) = cos(q_h d_h) cos(q_l d_l)
                 - (r + 1/r)/2 * sin(q_h d_h) sin(q_l d_l),

with q_i^2 = (omega n_i / hbar c)^2 - k_rho^2, r = q_l/q_h for TE and
r = (n_h/n_l)^2 q_l/q_h for TM.  Everything is evaluated in a manifestly
real form: the combination (r + 1/r) sin sin is rewritten through
sin(q d)/q, which continues analytically to sinh for evanescent layers, so
the residual never touches a branch cut.

Mode profiles are two plane waves per layer obtained from the 2x2 period
transfer matrix; Fourier coefficients over the reciprocal vectors G_m are
closed-form integrals of exponentials (no FFT on the main path).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .constants import HBARC_EV_NM as HBARC
from .materials import ConstantIndex, IndexModel, eval_index

TE = "TE"
TM = "TM"

# dispersion solves since process start / last reset; used by the CLI cache
# accounting and by determinism checks
_SOLVE_COUNTER = 0


def solve_counter() -> int:
    return _SOLVE_COUNTER


def reset_solve_counter() -> None:
    global _SOLVE_COUNTER
    _SOLVE_COUNTER = 0


class BlochError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """A bracketed root failed to converge; carries the bracket."""


class DegenerateModeError(RuntimeError):
    """Band-edge eigenproblem is degenerate and cannot be resolved silently."""


@dataclass(frozen=True)
class Stack1D:
    """Geometry of the 1D crystal.  Lengths in nm."""

    d_h: float
    d_l: float
    index_model: IndexModel
    n_l: float = 1.0

    def __post_init__(self):
        if not (self.d_h > 0 and self.d_l > 0):
            raise BlochError("layer thicknesses must be positive")
        if not self.n_l > 0:
            raise BlochError("low-index layer index must be positive")

    @property
    def period(self) -> float:
        return self.d_h + self.d_l

    @property
    def b_z(self) -> float:
        """Reciprocal basis vector 2*pi/L in nm^-1."""
        return 2.0 * np.pi / self.period

    def g_m(self, m) -> np.ndarray:
        return np.asarray(m) * self.b_z

    def n_h(self, omega_ev):
        return eval_index(self.index_model, omega_ev)


@dataclass(frozen=True)
class KPoint:
    """Transverse wavenumber magnitude, Bloch wavenumber (nm^-1), polarization."""

    k_rho: float
    k_z: float
    pol: str

    def __post_init__(self):
        if self.k_rho < 0:
            raise BlochError("k_rho must be non-negative")
        if self.pol not in (TE, TM):
            raise BlochError(f"polarization must be TE or TM, got {self.pol!r}")


def _check_fbz(kpoint: KPoint, stack: Stack1D) -> None:
    lim = np.pi / stack.period
    if abs(kpoint.k_z) > lim * (1.0 + 1e-12) + 1e-12:
        raise BlochError(f"k_z={kpoint.k_z} outside first Brillouin zone (+-{lim})")


def _cos_sinc(q2, d):
    """(cos(q d), sin(q d)/q) continued to (cosh, sinh/kappa) for q^2 < 0.

    Both outputs are real analytic functions of q^2, which is what keeps the
    dispersion residual real for evanescent layers.
    """
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))
    root = np.sqrt(np.abs(q2))
    x = root * d
    prop = q2 >= 0.0
    c = np.empty_like(x)
    s = np.empty_like(x)
    xp = x[prop]
    xn = x[~prop]
    with np.errstate(over="ignore"):
        c[prop] = np.cos(xp)
        c[~prop] = np.cosh(xn)
        s[prop] = np.sin(xp)
        s[~prop] = np.sinh(xn)
    small = x < 1e-8
    np.divide(s, root, out=s, where=~small)
    s[small] = d
    return c, s


def _layer_q2(omega_ev, n, k_rho):
    return (np.asarray(omega_ev) * n / HBARC) ** 2 - k_rho**2


def dispersion_residual(omega_ev, kpoint: KPoint, stack: Stack1D):
    """cos(k_z L) minus the half-trace of the period transfer matrix.

    Real for all real inputs, including evanescent layers.  Vectorized over
    omega_ev.
    """
    w = np.asarray(omega_ev, dtype=float)
    if np.any(~np.isfinite(w)):
        raise BlochError("non-finite frequency")
    if not (np.isfinite(kpoint.k_rho) and np.isfinite(kpoint.k_z)):
        raise BlochError("non-finite kpoint")
    scalar = w.ndim == 0
    w = np.atleast_1d(w)

    nh = np.atleast_1d(stack.n_h(w))
    nl = stack.n_l
    qh2 = _layer_q2(w, nh, kpoint.k_rho)
    ql2 = _layer_q2(w, nl, kpoint.k_rho)
    ch, sh = _cos_sinc(qh2, stack.d_h)
    cl, sl = _cos_sinc(ql2, stack.d_l)
    if kpoint.pol == TE:
        wfac = qh2 + ql2
    else:
        ratio = (nh / nl) ** 2
        wfac = ratio * ql2 + qh2 / ratio
    res = np.cos(kpoint.k_z * stack.period) - (ch * cl - 0.5 * wfac * sh * sl)
    return float(res[0]) if scalar else res


@lru_cache(maxsize=256)
def _scan_grid(stack: Stack1D, omega_max: float, pts_per_band: int) -> np.ndarray:
    """Frequency scan grid with local density proportional to the estimated
    band density (L / pi hbar c) * n_bar(omega), so narrow high-index bands
    are not stepped over."""
    dense = np.linspace(0.0, omega_max, 4097)
    nh = np.atleast_1d(stack.n_h(dense))
    n_bar = (nh * stack.d_h + stack.n_l * stack.d_l) / stack.period
    dens = n_bar * stack.period / (np.pi * HBARC)  # bands per eV
    phase = np.concatenate(
        ([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(dense)))
    )
    total = phase[-1] * 1.25 + 2.0
    n_nodes = max(128, int(np.ceil(total * pts_per_band)))
    levels = np.linspace(0.0, phase[-1], n_nodes)
    grid = np.interp(levels, phase, dense)
    grid[0], grid[-1] = 0.0, omega_max
    return np.unique(grid)


def _bisect_brackets(lo, hi, rlo, fn, rtol, max_iter=200):
    """Vectorized bracket refinement with the Illinois variant of regula
    falsi: guaranteed bracket retention like bisection, superlinear
    convergence on smooth residuals."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo = np.array(rlo, dtype=float)
    fhi = np.atleast_1d(np.asarray(fn(hi), dtype=float))
    side = np.zeros(lo.shape, dtype=int)  # +1: lo kept last, -1: hi kept last
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        width = hi - lo
        if np.all(width <= rtol * np.maximum(np.abs(mid), 1e-300)):
            return mid
        denom = fhi - flo
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (lo * fhi - hi * flo) / denom
        bad = ~np.isfinite(x)
        x = np.where(bad, mid, x)
        # keep strictly inside the bracket so the width always shrinks
        x = np.clip(x, lo + 1e-3 * width, hi - 1e-3 * width)
        fx = np.atleast_1d(np.asarray(fn(x), dtype=float))
        hit = fx == 0.0  # exact zero: collapse the bracket onto the root
        lo = np.where(hit, x, lo)
        hi = np.where(hit, x, hi)
        flo = np.where(hit, 0.0, flo)
        fhi = np.where(hit, 0.0, fhi)
        same = ~hit & (np.sign(fx) == np.sign(flo))
        # Illinois: halve the residual of the stagnant endpoint
        fhi = np.where(same & (side == 1), 0.5 * fhi, fhi)
        flo = np.where(~same & (side == -1), 0.5 * flo, flo)
        lo = np.where(same, x, lo)
        flo = np.where(same, fx, flo)
        hi = np.where(same, hi, x)
        fhi = np.where(same, fhi, fx)
        side = np.where(same, 1, -1)
    raise ConvergenceError(
        f"bracket refinement failed to converge; brackets lo={lo}, hi={hi}"
    )


def _dip_brackets(fn, lo, hi, depth=7):
    """Resolve a suspected near-tangent root pair inside (lo, hi).

    Rescans on 65 points; if no sign change appears but the parabolic model
    of the deepest |residual| minimum still dips toward zero, recurses on its
    three-point neighborhood.  Near-degenerate band pairs (zone centre/edge)
    can be separated by many orders of magnitude less than the scan spacing,
    so a one-shot rescan is not enough.
    """
    sub = np.linspace(lo, hi, 65)
    rs = fn(sub)
    ss = np.sign(rs)
    flips = np.nonzero((ss[:-1] * ss[1:]) < 0)[0]
    if flips.size:
        return [(sub[j], sub[j + 1], rs[j]) for j in flips]
    if depth <= 0:
        return []
    i = int(np.argmin(np.abs(rs[1:-1]))) + 1
    r0, r1, r2 = rs[i - 1], rs[i], rs[i + 1]
    small = abs(r1) < 0.02 * np.max(np.abs(rs))
    curv = r0 - 2 * r1 + r2
    if curv == 0 or np.sign(r1) != np.sign(curv):
        if not small:
            return []
    else:
        slope = 0.5 * (r2 - r0)
        vertex = r1 - slope**2 / (2 * curv)
        if (
            np.sign(vertex) == np.sign(r1)
            and abs(vertex) > 0.5 * abs(r1)
            and not small
        ):
            return []
    return _dip_brackets(fn, sub[i - 1], sub[i + 1], depth - 1)


def solve_bands(
    kpoint: KPoint,
    stack: Stack1D,
    omega_max: float,
    rtol: float = 1e-12,
    pts_per_band: int = 8,
) -> np.ndarray:
    """All band frequencies in (0, omega_max] at the given k-point, ascending."""
    global _SOLVE_COUNTER
    if not omega_max > 0:
        raise BlochError("omega_max must be positive")
    _check_fbz(kpoint, stack)
    _SOLVE_COUNTER += 1

    grid = _scan_grid(stack, float(omega_max), pts_per_band)
    fn = lambda w: dispersion_residual(w, kpoint, stack)
    los, his, rlos = _collect_brackets(fn, grid)

    if not los:
        return np.empty(0)
    roots = _bisect_brackets(los, his, rlos, fn, rtol)
    return np.sort(roots)


def count_bands(kpoint: KPoint, stack: Stack1D, omega_max: float, pts_per_band: int = 8) -> int:
    """Number of band frequencies in (0, omega_max], without root polishing.
    Uses the same bracket detection as solve_bands (including the rescue of
    near-tangent pairs), so counts and solves are consistent."""
    _check_fbz(kpoint, stack)
    grid = _scan_grid(stack, float(omega_max), pts_per_band)
    fn = lambda w: dispersion_residual(w, kpoint, stack)
    los, _, _ = _collect_brackets(fn, grid)
    return len(los)


def _collect_brackets(fn, grid):
    """Sign-change brackets of fn on the grid, with near-tangent pair rescue
    and exact-zero nudging."""
    res = fn(grid)
    sign = np.sign(res)
    flips = np.nonzero((sign[:-1] * sign[1:]) < 0)[0]
    los, his, rlos = list(grid[flips]), list(grid[flips + 1]), list(res[flips])

    # Rescue near-tangent pairs: local |res| minima whose parabolic model dips
    # through zero get a one-shot fine rescan.
    interior = np.arange(1, len(grid) - 1)
    mask = (
        (np.abs(res[interior]) < np.abs(res[interior - 1]))
        & (np.abs(res[interior]) < np.abs(res[interior + 1]))
        & (sign[interior - 1] == sign[interior])
        & (sign[interior] == sign[interior + 1])
    )
    scale = np.median(np.abs(res))
    probed = []
    for i in interior[mask]:
        r0, r1, r2 = res[i - 1], res[i], res[i + 1]
        # a very small residual is suspicious regardless of the local model: a
        # narrow bump between two close roots can hide under a broad trend
        small = abs(r1) < 0.02 * scale
        curv = r0 - 2 * r1 + r2
        if curv == 0 or np.sign(r1) != np.sign(curv):
            if not small:
                continue
        else:
            # vertex value of the parabola through the three samples
            slope = 0.5 * (r2 - r0)
            vertex = r1 - slope**2 / (2 * curv)
            if (
                np.sign(vertex) == np.sign(r1)
                and abs(vertex) > 0.5 * abs(r1)
                and not small
            ):
                continue
        probed.append((grid[i - 1], grid[i + 1]))
        for lo_b, hi_b, r_b in _dip_brackets(fn, grid[i - 1], grid[i + 1]):
            los.append(lo_b)
            his.append(hi_b)
            rlos.append(r_b)

    # the local-minimum mask cannot flag a dip hiding inside the first or
    # last grid interval (e.g. a band pair just below omega_max), so always
    # probe those two intervals when they show no sign change
    for a, b in ((grid[0], grid[1]), (grid[-2], grid[-1])):
        ia = np.searchsorted(grid, a)
        if sign[ia] * sign[ia + 1] < 0:
            continue
        if any(p_lo < b and a < p_hi for p_lo, p_hi in probed):
            continue
        for lo_b, hi_b, r_b in _dip_brackets(fn, a, b):
            los.append(lo_b)
            his.append(hi_b)
            rlos.append(r_b)

    # exact zeros on grid nodes (rare): nudge into a bracket
    for i in np.nonzero(res == 0.0)[0]:
        if 0 < i < len(grid) - 1:
            los.append(grid[i - 1])
            his.append(grid[i + 1])
            rlos.append(res[i - 1] if res[i - 1] != 0 else -res[i + 1])

    return los, his, rlos


# ---------------------------------------------------------------------------
# mode profiles
# ---------------------------------------------------------------------------


@dataclass
class LayerField:
    """Plane-wave content of the electric field in one layer:
    E(z) = sum_w amps[w] * exp(i kappas[w] (z - z0)) for z in [z0, z0 + d]."""

    z0: float
    d: float
    eps: float
    kappas: np.ndarray  # complex, shape (2,)
    amps: np.ndarray  # complex, shape (2, 3)


@dataclass
class ModeProfile:
    omega_ev: float
    kpoint: KPoint
    layers: list[LayerField]
    degenerate: bool = False


def _period_matrices(omegas, kpoint: KPoint, stack: Stack1D):
    """Per-band 2x2 real transfer matrices in the (u, eta u') basis for each
    layer, where u is E_y (TE) or H_y (TM) and eta = 1 (TE) or 1/eps (TM)."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    nh = np.atleast_1d(stack.n_h(w))
    nl = np.full_like(w, stack.n_l)
    out = []
    for n, d in ((nh, stack.d_h), (nl, stack.d_l)):
        q2 = _layer_q2(w, n, kpoint.k_rho)
        eta = np.ones_like(w) if kpoint.pol == TE else 1.0 / n**2
        c, s = _cos_sinc(q2, d)
        m = np.empty(w.shape + (2, 2))
        m[..., 0, 0] = c
        m[..., 0, 1] = s / eta
        m[..., 1, 0] = -eta * q2 * s
        m[..., 1, 1] = c
        out.append((m, q2, eta, n, d))
    return out


def _expint(mu, d):
    """integral_0^d exp(i mu z) dz for complex mu, stable near mu = 0."""
    mu = np.asarray(mu, dtype=complex)
    x = 1j * mu * d
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, 1j * mu)
    with np.errstate(invalid="ignore", over="ignore"):
        full = (np.exp(x) - 1.0) / safe
    series = d * (1.0 + x / 2.0 + x * x / 6.0)
    return np.where(small, series, full)


def _mode_fields_batch(omegas, kpoint: KPoint, stack: Stack1D):
    """Vectorized mode construction for a batch of band frequencies at one
    k-point.  Returns per-layer (z0, d, eps, kappas (nb,2), amps (nb,2,3))
    normalized to (1/L) int eps |E|^2 dz = 1/2, plus a degeneracy mask."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    nb = w.size
    (mh, qh2, eta_h, n_h, _), (ml, ql2, eta_l, n_l, _) = _period_matrices(
        w, kpoint, stack
    )
    period = ml @ mh  # transfer over one full period starting in the h layer

    lam = np.exp(1j * kpoint.k_z * stack.period)
    m11, m12 = period[..., 0, 0], period[..., 0, 1]
    m21, m22 = period[..., 1, 0], period[..., 1, 1]
    use1 = np.abs(m12) >= np.abs(m21)
    x0 = np.where(use1, m12, lam - m22)
    x1 = np.where(use1, lam - m11, m21)
    degenerate = (np.abs(x0) + np.abs(x1)) < 1e-12 * (1.0 + np.abs(m11))
    # fall back to a forward wave so downstream code stays finite; callers
    # must check the mask
    x0 = np.where(degenerate, 1.0, x0)

    state_h = np.stack([x0, x1], axis=-1)  # (nb, 2) complex at z = 0
    state_l = np.einsum("...ij,...j->...i", mh.astype(complex), state_h)

    omega_nm = w / HBARC  # omega in nm^-1 for the TM field conversion
    layers = []
    for (state, q2, eta, n, z0, d) in (
        (state_h, qh2, eta_h, n_h, 0.0, stack.d_h),
        (state_l, ql2, eta_l, n_l, stack.d_h, stack.d_l),
    ):
        q = np.sqrt(q2.astype(complex))
        q = np.where(np.abs(q) < 1e-13, 1e-13, q)
        u = state[..., 0]
        du = state[..., 1] / eta
        a = 0.5 * (u - 1j * du / q)
        b = 0.5 * (u + 1j * du / q)
        kappas = np.stack([q, -q], axis=-1)  # (nb, 2)
        amps = np.zeros((nb, 2, 3), dtype=complex)
        if kpoint.pol == TE:
            amps[:, 0, 1] = a
            amps[:, 1, 1] = b
        else:
            # u is H_y; E = h * (-kappa, 0, k_rho) / (omega_nm * eps) per wave
            eps = n**2
            scale = 1.0 / (omega_nm * eps)
            amps[:, 0, 0] = -q * a * scale
            amps[:, 0, 2] = kpoint.k_rho * a * scale
            amps[:, 1, 0] = q * b * scale
            amps[:, 1, 2] = kpoint.k_rho * b * scale
        layers.append([z0, d, n**2, kappas, amps])

    # closed-form normalization (1/L) int eps |E|^2 dz
    norm = np.zeros(nb)
    for z0, d, eps, kappas, amps in layers:
        for iw in range(2):
            for jw in range(2):
                dot = np.einsum("bc,bc->b", amps[:, iw, :], np.conj(amps[:, jw, :]))
                mu = kappas[:, iw] - np.conj(kappas[:, jw])
                norm += np.real(eps * dot * _expint(mu, d))
    norm /= stack.period
    bad = ~(norm > 0)
    scale = 1.0 / np.sqrt(2.0 * np.where(bad, 1.0, norm))
    degenerate = degenerate | bad
    for layer in layers:
        layer[4] = layer[4] * scale[:, None, None]
    return layers, degenerate


def mode_profile(
    omega_ev: float, kpoint: KPoint, stack: Stack1D, residual_tol: float = 1e-8
) -> ModeProfile:
    """Normalized piecewise-plane-wave profile for a single band frequency."""
    _check_fbz(kpoint, stack)
    res = dispersion_residual(omega_ev, kpoint, stack)
    if abs(res) > residual_tol:
        raise BlochError(
            f"omega={omega_ev} is not on a band (residual {res:.3e} > {residual_tol})"
        )
    layers, degenerate = _mode_fields_batch([omega_ev], kpoint, stack)
    if bool(degenerate[0]):
        raise DegenerateModeError(
            f"degenerate eigenproblem at omega={omega_ev}, k_z={kpoint.k_z}"
        )
    fields = [
        LayerField(z0, d, float(np.atleast_1d(eps)[0]), kappas[0], amps[0])
        for z0, d, eps, kappas, amps in layers
    ]
    return ModeProfile(float(omega_ev), kpoint, fields)


def _coefficients_batch(layers, kpoint: KPoint, stack: Stack1D, ms: np.ndarray):
    """Vector Fourier coefficients E(G_m) for a batch of profiles.

    Returns complex array (nb, len(ms), 3) with
    E(G_m) = (1/L) int_0^L E(z) exp(-i (k_z + G_m) z) dz.
    """
    kz_g = kpoint.k_z + stack.g_m(ms)  # (nm,)
    nb = layers[0][3].shape[0]
    out = np.zeros((nb, kz_g.size, 3), dtype=complex)
    for z0, d, eps, kappas, amps in layers:
        phase = np.exp(-1j * kz_g * z0)  # (nm,)
        for iw in range(2):
            mu = kappas[:, iw][:, None] - kz_g[None, :]  # (nb, nm)
            block = _expint(mu, d) * phase[None, :]
            out += block[:, :, None] * amps[:, iw, None, :]
    return out / stack.period


def fourier_coefficients(
    profile: ModeProfile,
    stack: Stack1D,
    m_max: int,
    tail_tol: float = 1e-6,
    m_cap: int = 1 << 17,
):
    """Fourier coefficients of a normalized profile over |m| <= m_max.

    m_max is grown (doubling, up to m_cap) until the estimated truncated
    power sum_{|m|>m_max} |E(G_m)|^2 is below tail_tol of the total.
    Returns (ms, coeffs) with coeffs of shape (len(ms), 3).
    """
    if m_max < 1:
        raise BlochError("m_max must be >= 1")
    layers = [
        [f.z0, f.d, f.eps, f.kappas[None, :], f.amps[None, :, :]]
        for f in profile.layers
    ]
    m = int(m_max)
    while True:
        ms = np.arange(-m, m + 1)
        coeffs = _coefficients_batch(layers, profile.kpoint, stack, ms)[0]
        power = np.sum(np.abs(coeffs) ** 2, axis=-1)
        total = power.sum()
        # conservative tail bound assuming |E|^2 ~ 1/m^2 beyond the window
        tail = (power[0] + power[-1]) * m
        if tail <= tail_tol * total or m >= m_cap:
            return ms, coeffs
        m = min(2 * m, m_cap)


def reconstruct_field(profile: ModeProfile, z):
    """E(z) over one period, for cross-checks against the closed forms."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.zeros(z.shape + (3,), dtype=complex)
    for f in profile.layers:
        # half-open layers so interface points are not double counted; sample
        # z in [0, L)
        mask = (z >= f.z0) & (z < f.z0 + f.d)
        zz = z[mask] - f.z0
        for iw in range(2):
            out[mask] += np.exp(1j * f.kappas[iw] * zz)[:, None] * f.amps[iw]
    return out
