"""Density tabulation, quantiles, log-potential and the radial eigenvalue density.

Each support band [lo, hi] is parameterized by x(theta) = mid - half cos(theta)
on [0, pi]; the substitution absorbs the square-root edge behavior at both
endpoints, and for a band touching 0 it reduces to x = u^2 with
u = sqrt(hi) sin(theta/2), which also tames the x^(-1/2) divergence there.
Gauss-Legendre nodes per theta segment then integrate smooth functions
spectrally; the per-segment Legendre series doubles as an analytic
antiderivative, giving a CDF accurate far below the quantile tolerance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.optimize import brentq

from .errors import DomainError, SolverError, TableTooCoarseError
from .master import SolverOptions, density_batch
from .sigma import SigmaSpectrum
from .support import (
    FindEdgesOptions,
    SupportProfile,
    ZeroEdgeInfo,
    _refine_edge_newton,
    find_edges,
    zero_edge_scale,
    EdgeInfo,
)

GL_ORDER = 64
_GL_XI, _GL_W = npleg.leggauss(GL_ORDER)
_LEG_VANDER = npleg.legvander(_GL_XI, GL_ORDER - 1)
_LEG_PROJ = ((2 * np.arange(GL_ORDER) + 1) / 2.0)[None, :] * (_LEG_VANDER * _GL_W[:, None])

ZERO_EDGE_LEVELS = 8          # geometric theta grading levels toward a zero edge
MASS_TOL = 1e-3               # missed-band alarm on |mass - 1|
SPLIT_TOL = 1e-10             # per-segment spectral tail triggering a split
SPLIT_MAX_DEPTH = 8



def _x_of_theta(lo: float, hi: float, th: np.ndarray) -> np.ndarray:
    """Band map x(theta) = mid - half cos(theta), evaluated without cancellation.

    Near theta = 0 uses lo + 2 half sin^2(theta/2), near theta = pi the
    mirrored form, so distances to either edge stay exact at machine scale.
    """
    th = np.asarray(th, dtype=float)
    half = 0.5 * (hi - lo)
    low_form = lo + 2.0 * half * np.sin(0.5 * th) ** 2
    high_form = hi - 2.0 * half * np.sin(0.5 * (np.pi - th)) ** 2
    return np.where(th <= 0.5 * np.pi, low_form, high_form)

@dataclass(frozen=True)
class _Segment:
    band: int
    t0: float
    t1: float
    mid: float
    half: float
    theta: np.ndarray
    x: np.ndarray
    jac: np.ndarray            # dx/dtheta at the nodes
    rho1: np.ndarray
    rho2: np.ndarray
    leg1: np.ndarray           # Legendre coefficients of rho1 * dx/dtheta
    leg2: np.ndarray
    base2: float               # cumulative rho2 mass before this segment

    def cdf2_at_theta(self, t: float) -> float:
        xi = 2 * (t - self.t0) / (self.t1 - self.t0) - 1.0
        ic = npleg.legint(self.leg2)
        scale = (self.t1 - self.t0) / 2.0
        return self.base2 + scale * (npleg.legval(xi, ic) - npleg.legval(-1.0, ic))


def _legendre_coeffs(vals: np.ndarray) -> np.ndarray:
    """Coefficients of the degree-(GL_ORDER-1) Legendre interpolant from node values."""
    return _LEG_PROJ.T @ vals


def _band_theta_segments(zero_edge: bool, n_seg: int) -> list[tuple[float, float]]:
    if zero_edge:
        bounds = [0.0]
        bounds += [np.pi * 4.0 ** (-k) for k in range(ZERO_EDGE_LEVELS, 0, -1)]
        bounds += [np.pi / 2.0, np.pi]
        extra = max(0, n_seg - (len(bounds) - 1))
        if extra:
            right = np.linspace(np.pi / 2.0, np.pi, extra + 2)[1:-1]
            bounds = sorted(set(bounds) | set(right.tolist()))
        return list(zip(bounds[:-1], bounds[1:]))
    n_seg = max(2, n_seg)
    bounds = np.linspace(0.0, np.pi, n_seg + 1)
    return list(zip(bounds[:-1], bounds[1:]))


@dataclass(frozen=True)
class DensityTable:
    """Tabulated limiting densities over the support bands."""

    z_mod: float
    bands: tuple[tuple[float, float], ...]       # ascending
    x: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    weight: np.ndarray
    total_mass: float
    mass1: float
    segments: tuple[_Segment, ...] = field(repr=False)
    profile: SupportProfile = field(repr=False)

    def integrate_rho2(self, fn) -> complex:
        return np.sum(fn(self.x) * self.rho2 * self.weight)

    def integrate_rho1(self, fn) -> complex:
        return np.sum(fn(self.x) * self.rho1 * self.weight)

    def quadrature_error_estimate(self) -> float:
        """Spectral tail estimate of the mass quadrature error."""
        err = 0.0
        for seg in self.segments:
            scale = (seg.t1 - seg.t0) / 2.0
            err += scale * float(np.sum(np.abs(seg.leg2[-2:])))
        return err

    def eval_rho2(self, x) -> np.ndarray:
        """Interpolated rho2; exactly zero off the support bands."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        order = np.argsort(self.x)
        xs, rs = self.x[order], self.rho2[order]
        for lo, hi in self.bands:
            mask = (x >= lo) & (x <= hi)
            if np.any(mask):
                out[mask] = np.interp(x[mask], xs, rs)
        return out

    def cdf2(self, x: float) -> float:
        """Mass of rho2 on (0, x]."""
        x = float(x)
        total = 0.0
        for seg in self.segments:
            band_lo = seg.mid - seg.half
            band_hi = seg.mid + seg.half
            lo = float(_x_of_theta(band_lo, band_hi, np.array([seg.t0]))[0])
            hi = float(_x_of_theta(band_lo, band_hi, np.array([seg.t1]))[0])
            if x >= hi:
                continue
            if x <= lo:
                return seg.base2 if seg.t0 == 0.0 else min(seg.base2, self.total_mass)
            arg = np.clip((x - seg.mid) / seg.half, -1.0, 1.0)
            t = float(np.arccos(-arg))
            return seg.cdf2_at_theta(min(max(t, seg.t0), seg.t1))
        total = self.total_mass
        return total

    def quantile2(self, target: float, tol: float = 1e-6) -> float:
        """x with mass of rho2 on (0, x] equal to target."""
        if target < 0:
            raise DomainError("quantile target must be >= 0")
        if target > self.total_mass + tol:
            raise DomainError(
                f"target mass {target} exceeds table mass {self.total_mass}"
            )
        if target >= self.total_mass - 1e-7:
            # inside quadrature noise of the full mass: the top edge is exact
            return float(self.bands[-1][1])
        if target <= 0.0:
            return float(self.bands[0][0])
        for seg in self.segments:
            lo_m = seg.base2
            hi_m = seg.cdf2_at_theta(seg.t1)
            if target > hi_m:
                continue
            if target < lo_m:
                # lands in a gap between bands: return the gap's left band top
                return float(
                    _x_of_theta(seg.mid - seg.half, seg.mid + seg.half, np.array([seg.t0]))[0]
                )
            t = brentq(
                lambda tt: seg.cdf2_at_theta(tt) - target,
                seg.t0,
                seg.t1,
                xtol=1e-15,
                rtol=8.9e-16,
            )
            return float(
                _x_of_theta(seg.mid - seg.half, seg.mid + seg.half, np.array([t]))[0]
            )
        return float(self.bands[-1][1])


def tabulate_density(
    spec: SigmaSpectrum,
    z_mod: float,
    resolution: int = 2000,
    profile: SupportProfile | None = None,
    opts: SolverOptions | None = None,
) -> DensityTable:
    """Gauss-Legendre density table over all support bands.

    Nodes are distributed across bands proportionally to band width; a band
    touching zero gets the geometrically graded segment layout. Raises
    TableTooCoarseError when the rho2 mass misses 1 by more than 1e-3
    (a missed band; rescan with finer support options).
    """
    opts = opts or SolverOptions()
    if profile is None:
        profile = find_edges(spec, z_mod, opts)
    bands = profile.bands_ascending
    widths = np.array([hi - lo for lo, hi in bands])
    shares = widths / widths.sum()
    segments: list[_Segment] = []
    xs, r1s, r2s, ws = [], [], [], []
    base2 = 0.0
    for bi, (lo, hi) in enumerate(bands):
        zero = lo == 0.0
        n_seg = max(2, int(np.ceil(resolution * shares[bi] / GL_ORDER)))
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        pending = _band_theta_segments(zero, n_seg)
        done: list[tuple[float, float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        depth = 0
        while pending and depth <= SPLIT_MAX_DEPTH:
            th_cat = np.concatenate(
                [0.5 * (t0 + t1) + 0.5 * (t1 - t0) * _GL_XI for (t0, t1) in pending]
            )
            x_cat = np.maximum(_x_of_theta(lo, hi, th_cat), 1e-300)
            rho1, rho2, _, _ = density_batch(x_cat, spec, z_mod, opts)
            nxt: list[tuple[float, float]] = []
            for k, (t0, t1) in enumerate(pending):
                sl = slice(k * GL_ORDER, (k + 1) * GL_ORDER)
                th, x, r1, r2 = th_cat[sl], x_cat[sl], rho1[sl], rho2[sl]
                jac = half * np.sin(th)
                tail = (t1 - t0) / 2.0 * float(
                    np.sum(np.abs(_legendre_coeffs(r2 * jac)[-2:]))
                )
                if tail > SPLIT_TOL and depth < SPLIT_MAX_DEPTH:
                    tm = 0.5 * (t0 + t1)
                    nxt.extend([(t0, tm), (tm, t1)])
                else:
                    done.append((t0, t1, th, x, r1, r2))
            pending = nxt
            depth += 1
        for (t0, t1, th, x, r1, r2) in sorted(done, key=lambda s: s[0]):
            jac = half * np.sin(th)
            leg1 = _legendre_coeffs(r1 * jac)
            leg2 = _legendre_coeffs(r2 * jac)
            seg = _Segment(
                band=bi, t0=t0, t1=t1, mid=mid, half=half,
                theta=th, x=x, jac=jac, rho1=r1, rho2=r2,
                leg1=leg1, leg2=leg2, base2=base2,
            )
            scale = (t1 - t0) / 2.0
            base2 += scale * float(np.dot(_GL_W, r2 * jac))
            segments.append(seg)
            xs.append(x)
            r1s.append(r1)
            r2s.append(r2)
            ws.append(scale * _GL_W * jac)
    x = np.concatenate(xs)
    rho1 = np.concatenate(r1s)
    rho2 = np.concatenate(r2s)
    weight = np.concatenate(ws)
    total = float(np.sum(rho2 * weight))
    mass1 = float(np.sum(rho1 * weight))
    table = DensityTable(
        z_mod=z_mod, bands=tuple(bands), x=x, rho1=rho1, rho2=rho2,
        weight=weight, total_mass=total, mass1=mass1,
        segments=tuple(segments), profile=profile,
    )
    if abs(total - 1.0) > MASS_TOL:
        raise TableTooCoarseError(
            f"rho2 mass {total} misses 1 by more than {MASS_TOL}; "
            "a band was probably missed, rescan with finer support options"
        )
    return table


@dataclass(frozen=True)
class QuantileTable:
    N: int
    gamma: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.gamma) < -1e-12):
            raise SolverError("quantiles are not non-decreasing")


def quantiles(table: DensityTable, N: int) -> QuantileTable:
    """Classical locations gamma_j with mass(0, gamma_j] = j/N, j = 1..N."""
    if abs(table.total_mass - 1.0) > MASS_TOL:
        raise DomainError("table mass too far from 1 for quantiles")
    g = np.empty(N)
    for j in range(1, N + 1):
        g[j - 1] = table.quantile2(j / N)
    return QuantileTable(N=N, gamma=g)


def log_potential(
    spec: SigmaSpectrum,
    z_mod: float,
    table: DensityTable | None = None,
    opts: SolverOptions | None = None,
) -> tuple[float, float]:
    """(integral of log(x) rho2(x) dx, quadrature error estimate).

    The log singularity against the x^(-1/2) zero-edge divergence is handled
    by the graded theta layout; the error estimate is the Legendre tail of
    the log-weighted integrand plus the table's own mass-tail estimate.
    """
    if table is None:
        table = tabulate_density(spec, z_mod, opts=opts)
    val = 0.0
    err = 0.0
    for seg in table.segments:
        integ = np.log(seg.x) * seg.rho2 * seg.jac
        leg = _legendre_coeffs(integ)
        scale = (seg.t1 - seg.t0) / 2.0
        val += scale * float(np.dot(_GL_W, integ))
        err += scale * float(np.sum(np.abs(leg[-2:])))
    return float(val), float(err + table.quadrature_error_estimate())


# ---------------------------------------------------------------------------
# radial profile of the limiting eigenvalue density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Radial log-potential, eigenvalue density and radial CDF of the product.

    chi(r) = (U''(r) + U'(r)/r) / 4 and F(r) = r U'(r) / 2 on a uniform grid
    split around the excluded band at r = 1. Missing stencil points next to
    the hole are NaN, never interpolated.
    """

    r: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    chi: np.ndarray
    F: np.ndarray
    kink: np.ndarray
    h: float
    z_band_min: float
    segments: tuple[tuple[int, int], ...]      # [start, stop) into the arrays

    def chi_at(self, r) -> np.ndarray:
        """Interpolated chi; NaN inside holes, clamped ends outside the grid."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.full(r.shape, np.nan)
        for (i0, i1) in self.segments:
            rs, cs = self.r[i0:i1], self.chi[i0:i1]
            ok = np.isfinite(cs)
            if not np.any(ok):
                continue
            m = (r >= rs[ok][0]) & (r <= rs[ok][-1])
            out[m] = np.interp(r[m], rs[ok], cs[ok])
        below = r < self.r[0]
        out[below] = self.chi[np.isfinite(self.chi)][0] if np.any(below) else out[below]
        above = r > self.r[-1]
        out[above] = 0.0
        return out

    def F_at(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.full(r.shape, np.nan)
        for (i0, i1) in self.segments:
            rs, fs = self.r[i0:i1], self.F[i0:i1]
            ok = np.isfinite(fs)
            if not np.any(ok):
                continue
            m = (r >= rs[ok][0]) & (r <= rs[ok][-1])
            out[m] = np.interp(r[m], rs[ok], fs[ok])
        return out

    def consistency_gap(self) -> float:
        """Max gap between F and the direct integral 2 int rho chi drho per segment."""
        worst = 0.0
        for (i0, i1) in self.segments:
            rs = self.r[i0:i1]
            chi = self.chi[i0:i1]
            F = self.F[i0:i1]
            ok = np.isfinite(chi) & np.isfinite(F)
            rs, chi, F = rs[ok], chi[ok], F[ok]
            if rs.size < 3:
                continue
            integrand = 2.0 * rs * chi
            cum = np.concatenate(
                [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(rs))]
            )
            direct = F[0] + cum
            worst = max(worst, float(np.max(np.abs(direct - F))))
        return worst


class _EdgeTracker:
    """Warm-started support tracking along a radius sweep."""

    def __init__(self, spec: SigmaSpectrum, opts: SolverOptions, scan: FindEdgesOptions,
                 rescan_every: int = 25):
        self.spec = spec
        self.opts = opts
        self.scan = scan
        self.rescan_every = rescan_every
        self._profile: SupportProfile | None = None
        self._since_scan = 0

    def profile_at(self, z_mod: float) -> SupportProfile:
        if self._profile is None or self._since_scan >= self.rescan_every:
            self._profile = find_edges(self.spec, z_mod, self.opts, self.scan)
            self._since_scan = 0
            return self._profile
        prev = self._profile
        new_edges = []
        ok = True
        for ed in prev.edges:
            got = _refine_edge_newton(ed.e, ed.m_c, self.spec, z_mod)
            if got is None or got[2] > 1e-8 or got[3] > 1e-6:
                ok = False
                break
            e_new, m_new, fabs, dfabs, d2f = got
            new_edges.append((ed, e_new, m_new, fabs, dfabs, d2f))
        if ok:
            positions = sorted(e for _, e, _, _, _, _ in new_edges)
            if any(b - a < 1e-10 for a, b in zip(positions, positions[1:])):
                ok = False
        if not ok:
            self._profile = find_edges(self.spec, z_mod, self.opts, self.scan)
            self._since_scan = 0
            return self._profile
        edges = []
        all_pos = [e for _, e, _, _, _, _ in new_edges]
        touches_zero = prev.zero_edge is not None
        for ed, e_new, m_new, fabs, dfabs, d2f in new_edges:
            others = [y for y in all_pos if abs(y - e_new) > 1e-12] + (
                [0.0] if touches_zero else []
            )
            gap = min((abs(e_new - y) for y in others), default=np.inf)
            edges.append(
                EdgeInfo(
                    e=e_new, m_c=m_new, d2f=d2f, pole_distance=ed.pole_distance,
                    neighbor_gap=float(gap), side=ed.side, refined=True,
                )
            )
        edges.sort(key=lambda e: -e.e)
        band_edges = ([0.0] if touches_zero else []) + sorted(all_pos)
        bands = tuple(
            sorted(
                (
                    (band_edges[i], band_edges[i + 1])
                    for i in range(0, len(band_edges), 2)
                ),
                reverse=True,
            )
        )
        zero_edge = None
        if touches_zero:
            t = zero_edge_scale(self.spec, z_mod, self.scan.tau)
            zero_edge = ZeroEdgeInfo(
                t=t,
                rho1_amplitude=float(np.sqrt(t) / np.pi),
                rho2_amplitude=float(np.sqrt(t) / (np.pi * (t + z_mod * z_mod))),
            )
        self._profile = SupportProfile(
            z_mod=z_mod, bands=bands, edges=tuple(edges), zero_edge=zero_edge,
            scan_points=prev.scan_points, scan_max=prev.scan_max,
        )
        self._since_scan += 1
        return self._profile

    def invalidate(self):
        self._profile = None


def compute_radial_profile(
    spec: SigmaSpectrum,
    r_lo: float,
    r_hi: float,
    h: float = 0.005,
    opts: SolverOptions | None = None,
    resolution: int = 768,
    scan: FindEdgesOptions | None = None,
) -> RadialProfile:
    """Radial profile of U, chi and F on [r_lo, r_hi] with grid step h <= 0.01.

    Grid points inside the excluded band |r^2 - 1| < z_band_min are dropped;
    each remaining side is extended by two stencil margins where allowed.
    """
    opts = opts or SolverOptions()
    scan = scan or FindEdgesOptions()
    if h > 0.01:
        raise DomainError("radial grid step must be <= 0.01")
    if r_lo <= 0 or r_hi <= r_lo:
        raise DomainError("need 0 < r_lo < r_hi")
    zb = opts.params.z_band_min
    n_req = int(round((r_hi - r_lo) / h))
    req = r_lo + h * np.arange(n_req + 1)

    def allowed(r):
        return np.abs(r * r - 1.0) >= zb

    keep = allowed(req)
    # split requested points into contiguous segments
    seg_bounds: list[tuple[int, int]] = []
    i = 0
    while i <= n_req:
        if not keep[i]:
            i += 1
            continue
        j = i
        while j + 1 <= n_req and keep[j + 1]:
            j += 1
        seg_bounds.append((i, j))
        i = j + 1
    if not seg_bounds:
        raise DomainError("entire grid lies inside the excluded band")

    out_r: list[np.ndarray] = []
    out_U: list[np.ndarray] = []
    out_dU: list[np.ndarray] = []
    out_chi: list[np.ndarray] = []
    out_F: list[np.ndarray] = []
    out_kink: list[np.ndarray] = []
    out_slices: list[tuple[int, int]] = []
    cursor = 0

    for (i0, i1) in seg_bounds:
        # extend by 2 margins per side where allowed
        ext_lo = 0
        while ext_lo < 2:
            cand = req[i0] - (ext_lo + 1) * h
            if cand <= 0 or not allowed(np.array([cand]))[0]:
                break
            ext_lo += 1
        ext_hi = 0
        while ext_hi < 2:
            cand = req[i1] + (ext_hi + 1) * h
            if not allowed(np.array([cand]))[0]:
                break
            ext_hi += 1
        rg = req[i0] - ext_lo * h + h * np.arange(i1 - i0 + 1 + ext_lo + ext_hi)
        tracker = _EdgeTracker(spec, opts, scan)
        U = np.empty(rg.size)
        for k, r in enumerate(rg):
            profile = tracker.profile_at(float(r))
            try:
                table = tabulate_density(
                    spec, float(r), resolution=resolution, profile=profile, opts=opts
                )
            except TableTooCoarseError:
                tracker.invalidate()
                profile = tracker.profile_at(float(r))
                table = tabulate_density(
                    spec, float(r), resolution=resolution, profile=profile, opts=opts
                )
            U[k], _ = log_potential(spec, float(r), table=table, opts=opts)
        dU = np.full(rg.size, np.nan)
        d2U = np.full(rg.size, np.nan)
        if rg.size >= 5:
            dU[2:-2] = (-U[4:] + 8 * U[3:-1] - 8 * U[1:-3] + U[:-4]) / (12 * h)
            d2U[2:-2] = (
                -U[4:] + 16 * U[3:-1] - 30 * U[2:-2] + 16 * U[1:-3] - U[:-4]
            ) / (12 * h * h)
        chi = 0.25 * (d2U + dU / rg)
        F = 0.5 * rg * dU
        d2_3pt = np.full(rg.size, np.nan)
        if rg.size >= 3:
            d2_3pt[1:-1] = (U[2:] - 2 * U[1:-1] + U[:-2]) / (h * h)
        kink = np.abs(d2U - d2_3pt) > 0.05 * np.maximum(1.0, np.abs(d2U))
        sl = slice(ext_lo, rg.size - ext_hi)
        out_r.append(rg[sl])
        out_U.append(U[sl])
        out_dU.append(dU[sl])
        out_chi.append(chi[sl])
        out_F.append(F[sl])
        out_kink.append(kink[sl])
        n_here = rg[sl].size
        out_slices.append((cursor, cursor + n_here))
        cursor += n_here

    return RadialProfile(
        r=np.concatenate(out_r),
        U=np.concatenate(out_U),
        dU=np.concatenate(out_dU),
        chi=np.concatenate(out_chi),
        F=np.concatenate(out_F),
        kink=np.concatenate(out_kink),
        h=h,
        z_band_min=zb,
        segments=tuple(out_slices),
    )


# ---------------------------------------------------------------------------
# CSV emitters (fixed headers)
# ---------------------------------------------------------------------------

def write_density_csv(table: DensityTable, path) -> None:
    order = np.argsort(table.x)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho2c"])
        for i in order:
            w.writerow([f"{table.x[i]:.17g}", f"{table.rho2[i]:.17g}"])


def write_radial_csv(profile: RadialProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "U", "chi", "F"])
        for i in range(profile.r.size):
            w.writerow(
                [
                    f"{profile.r[i]:.17g}",
                    f"{profile.U[i]:.17g}",
                    f"{profile.chi[i]:.17g}",
                    f"{profile.F[i]:.17g}",
                ]
            )


def write_quantiles_csv(qt: QuantileTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "gamma_j"])
        for j, g in enumerate(qt.gamma, 1):
            w.writerow([j, f"{g:.17g}"])
