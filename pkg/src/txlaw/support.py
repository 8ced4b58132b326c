"""Support structure of the limiting densities: edges, critical points, regularity.

The support of rho_{1,2} on (0, inf) is a finite union of bands whose
endpoints satisfy f = df/dm = 0 simultaneously. Edges are located by a
log-uniform density scan, bracketed by bisection on the support indicator
and refined by a two-variable real Newton iteration. For |z| < 1 the lowest
band reaches 0 where the density diverges like x^(-1/2) with a computable
scale t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BracketingError, DomainError, SolverError
from .master import (
    SolverOptions,
    cubic_factorize,
    density_batch,
    master_f_all,
    solve_master_batch,
)
from .sigma import SigmaSpectrum, sigma_harmonic_mean

EDGE_F_TOL = 1e-10
EDGE_DF_TOL = 1e-8


# ---------------------------------------------------------------------------
# critical points of m -> f(sqrt(w), m) at real w
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalPointSet:
    """Critical points of the master function over the real m axis at real w > 0.

    poles_pos holds the 2n positive poles (all b_i then a_i, sorted), poles_neg
    the n negative-pole magnitudes (c_i, sorted). points is a list of
    (m_location, critical_value, interval_index) with intervals indexed
    -n..2n as the gaps between consecutive poles. Occupancy must be exactly 1
    in the two unbounded intervals and 0 or 2 in every bounded one; critical
    values weakly descend with m.
    """

    w: float
    z_mod: float
    poles_pos: np.ndarray
    poles_neg: np.ndarray
    points: tuple[tuple[float, float, int], ...]
    occupancy: dict[int, int]
    ordering_ok: bool
    value_bound: float

    @property
    def critical_values(self) -> np.ndarray:
        """h_k sorted by descending m location."""
        pts = sorted(self.points, key=lambda p: -p[0])
        return np.array([p[1] for p in pts])

    def occupancy_ok(self, n: int) -> bool:
        if self.occupancy.get(-n, 0) != 1 or self.occupancy.get(2 * n, 0) != 1:
            return False
        return all(
            self.occupancy.get(k, 0) in (0, 2) for k in range(-n + 1, 2 * n)
        )


def _dfdm_numerator_coeffs(w: float, spec: SigmaSpectrum, z_mod: float) -> np.ndarray:
    """Coefficients (descending) of the cleared numerator of df/dm, degree <= 6n."""
    u = np.sqrt(float(w))
    z2 = z_mod * z_mod
    wts = spec.weights
    cubs = [
        np.array([u, -(si + z2), -u * z2, z2 * z2], dtype=float) for si in spec.s
    ]
    dcubs = [np.array([3 * u, -2 * (si + z2), -u * z2], dtype=float) for si in spec.s]
    prod_sq = np.array([1.0])
    for c in cubs:
        prod_sq = np.convolve(prod_sq, np.convolve(c, c))
    out = prod_sq.copy()
    num_m = np.array([3.0, 0.0, -z2])          # d/dm of m(m^2 - z^2)
    num = np.array([1.0, 0.0, -z2, 0.0])       # m(m^2 - z^2)
    for i, si in enumerate(spec.s):
        qi = np.polysub(np.convolve(num_m, cubs[i]), np.convolve(num, dcubs[i]))
        term = wts[i] * si * qi
        for j in range(spec.n):
            if j != i:
                term = np.convolve(term, np.convolve(cubs[j], cubs[j]))
        out = np.polyadd(out, term)
    return out


def critical_points(
    w: float, spec: SigmaSpectrum, z_mod: float, opts: SolverOptions | None = None
) -> CriticalPointSet:
    """All real critical points of f at real w > 0, with occupancy checks."""
    opts = opts or SolverOptions()
    if w <= 0:
        raise DomainError("critical_points needs w > 0")
    if z_mod <= 0:
        raise DomainError("critical_points needs |z| > 0")
    fac = cubic_factorize(w, spec, z_mod)
    poles_pos = np.sort(np.concatenate([fac.b, fac.a]))
    poles_neg = np.sort(fac.c)
    coeffs = _dfdm_numerator_coeffs(w, spec, z_mod)
    roots = np.roots(coeffs / np.max(np.abs(coeffs)))
    scale = max(1.0, poles_pos.max())
    cand = roots[np.abs(roots.imag) < 1e-7 * scale].real
    # polish on df/dm and deduplicate
    polished = []
    for m0 in np.sort(cand):
        m = m0
        for _ in range(40):
            _, fm, fmm, _, _ = master_f_all(w, m, spec, z_mod)
            if abs(fmm) < 1e-300:
                break
            step = (fm / fmm).real
            m -= step
            if abs(step) < 1e-14 * max(1.0, abs(m)):
                break
        _, fm, _, _, _ = master_f_all(w, m, spec, z_mod)
        if abs(fm) > 1e-7:
            continue
        polished.append(float(np.real(m)))
    all_poles = np.concatenate([-poles_neg, poles_pos])
    points = []
    for m in polished:
        if np.min(np.abs(all_poles - m)) < 1e-8 * scale:
            continue
        if any(abs(m - p[0]) < 1e-9 * scale for p in points):
            continue
        k = int(np.searchsorted(poles_pos, m))
        if m < -poles_neg[-1]:
            idx = -spec.n
        elif m < poles_pos[0]:
            jneg = int(np.searchsorted(-poles_neg[::-1], m))
            idx = -(spec.n - jneg)
        else:
            idx = k
        f, _, _, _, _ = master_f_all(w, m, spec, z_mod)
        points.append((m, float(np.real(f)), idx))
    pts = tuple(sorted(points, key=lambda p: -p[0]))
    hvals = np.array([p[1] for p in pts])
    ordering_ok = bool(np.all(np.diff(hvals) <= 1e-9 * (1 + np.abs(hvals[:-1]))))
    occupancy: dict[int, int] = {}
    for _, _, idx in pts:
        occupancy[idx] = occupancy.get(idx, 0) + 1
    u = np.sqrt(w)
    s1 = spec.s[0]
    z2 = z_mod * z_mod
    bound = (
        2 * (np.sqrt(5 * (s1 + z2 + u * z_mod) / w) + (s1 + z2) / u + 2 * z_mod)
        + 1.0 / u
    )
    cps = CriticalPointSet(
        w=float(w),
        z_mod=z_mod,
        poles_pos=poles_pos,
        poles_neg=poles_neg,
        points=pts,
        occupancy=occupancy,
        ordering_ok=ordering_ok,
        value_bound=float(bound),
    )
    if not cps.occupancy_ok(spec.n):
        raise SolverError(
            f"critical-point occupancy violated at w={w}, |z|={z_mod}: {occupancy} "
            "(numerically degenerate spectrum?)"
        )
    return cps


def support_indicator_by_critical_values(
    w: float, spec: SigmaSpectrum, z_mod: float
) -> bool:
    """Sign test on critical values: w is in the support iff 0 avoids every
    increasing branch image of f."""
    cps = critical_points(w, spec, z_mod)
    pts = sorted(cps.points, key=lambda p: p[0])
    by_idx: dict[int, list[tuple[float, float]]] = {}
    for m, h, idx in pts:
        by_idx.setdefault(idx, []).append((m, h))
    n = spec.n
    for idx, group in by_idx.items():
        group.sort()
        if idx == -n:
            if group[-1][1] > 0:      # local max above zero
                return False
        elif idx == 2 * n:
            if group[0][1] < 0:       # local min below zero
                return False
        elif len(group) == 2:
            h_min, h_max = group[0][1], group[1][1]
            if h_min < 0 < h_max:
                return False
    return True


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeInfo:
    e: float
    m_c: float
    d2f: float
    pole_distance: float
    neighbor_gap: float
    side: str                 # "lower" or "upper"
    refined: bool


@dataclass(frozen=True)
class RegularityReport:
    edge: EdgeInfo
    epsilon: float
    pole_distance_ok: bool
    curvature_ok: bool
    neighbor_gap: float

    @property
    def regular(self) -> bool:
        return self.pole_distance_ok and self.curvature_ok


@dataclass(frozen=True)
class ZeroEdgeInfo:
    t: float
    rho1_amplitude: float     # rho1 ~ amp / sqrt(x)
    rho2_amplitude: float


@dataclass(frozen=True)
class SupportProfile:
    z_mod: float
    bands: tuple[tuple[float, float], ...]     # descending [e_lo, e_hi]
    edges: tuple[EdgeInfo, ...]
    zero_edge: ZeroEdgeInfo | None
    scan_points: int
    scan_max: float

    @property
    def bands_ascending(self) -> tuple[tuple[float, float], ...]:
        return tuple(sorted(self.bands))

    @property
    def lowest_edge(self) -> float:
        return self.bands_ascending[0][0]

    @property
    def top_edge(self) -> float:
        return self.bands_ascending[-1][1]

    def to_dict(self) -> dict:
        return {
            "z_mod": self.z_mod,
            "bands": [list(b) for b in self.bands],
            "edges": [
                {
                    "e": ed.e,
                    "m_c": ed.m_c,
                    "d2f": ed.d2f,
                    "pole_distance": ed.pole_distance,
                    "neighbor_gap": ed.neighbor_gap,
                    "side": ed.side,
                    "refined": ed.refined,
                }
                for ed in self.edges
            ],
            "zero_edge": (
                None
                if self.zero_edge is None
                else {
                    "t": self.zero_edge.t,
                    "rho1_amplitude": self.zero_edge.rho1_amplitude,
                    "rho2_amplitude": self.zero_edge.rho2_amplitude,
                }
            ),
            "scan_points": self.scan_points,
            "scan_max": self.scan_max,
        }


def support_indicator(
    E: float,
    spec: SigmaSpectrum,
    z_mod: float,
    opts: SolverOptions | None = None,
    diagnostics: bool = False,
) -> bool:
    """True iff rho1(E) exceeds the density floor; optional cross-check against
    the critical-value sign test."""
    opts = opts or SolverOptions()
    if E <= 0:
        raise DomainError("support_indicator needs E > 0")
    rho1, _, _, _ = density_batch(np.array([E]), spec, z_mod, opts)
    inside = bool(rho1[0] > opts.density_floor)
    if diagnostics and z_mod > 0:
        cv = not support_indicator_by_critical_values(E, spec, z_mod)
        if cv != inside:
            import warnings

            warnings.warn(
                f"support tests disagree at E={E}: density says {inside}, "
                f"critical values say {cv}",
                stacklevel=2,
            )
    return inside


def zero_edge_scale(spec: SigmaSpectrum, z_mod: float, tau: float = 0.05) -> float:
    """Scale t of the x^(-1/2) density divergence at the zero edge (|z|^2 <= 1 - tau).

    t is the unique positive root of
        (1/K) sum_i l_i (t + |z|^2 - s_i) / ((s_i + |z|^2) t + |z|^4) = 0,
    found by bracketed root finding; the target function is strictly
    increasing in t so the root is unique. As |z| -> 0, t tends to the
    harmonic mean of the spectrum.
    """
    if z_mod < 0 or z_mod * z_mod > 1 - tau:
        raise DomainError("zero edge requires |z|^2 <= 1 - tau")
    if z_mod == 0.0:
        return sigma_harmonic_mean(spec)
    s = np.asarray(spec.s)
    wts = spec.weights
    z2 = z_mod * z_mod

    def G(t):
        return float(np.dot(wts, (t + z2 - s) / ((s + z2) * t + z2 * z2)))

    lo = 1e-14
    hi = 4.0 * max(1.0, float(s.max()))
    while G(hi) <= 0:
        hi *= 2
        if hi > 1e8:
            raise SolverError("zero-edge bracket expansion failed")
    if G(lo) >= 0:
        raise SolverError("zero-edge bracket collapsed (|z| too close to 1?)")
    t = brentq(G, lo, hi, xtol=1e-15, rtol=8.9e-16)
    return float(t)


def _bisect_indicator(
    lo: np.ndarray,
    hi: np.ndarray,
    lo_inside: np.ndarray,
    spec: SigmaSpectrum,
    z_mod: float,
    opts: SolverOptions,
    width: float = 1e-10,
    max_iter: int = 60,
):
    """Vectorized bisection of indicator sign changes on brackets [lo, hi]."""
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(max_iter):
        if np.all(hi - lo <= width * np.maximum(1.0, hi)):
            break
        mid = 0.5 * (lo + hi)
        rho1, _, _, _ = density_batch(mid, spec, z_mod, opts)
        mid_inside = rho1 > opts.density_floor
        take_lo = mid_inside == lo_inside
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
    return 0.5 * (lo + hi)


def _refine_edge_newton(
    E0: float,
    m0: float,
    spec: SigmaSpectrum,
    z_mod: float,
    max_iter: int = 80,
) -> tuple[float, float, float, float, float] | None:
    """Newton on (f, df/dm)(u, m) = 0 over real (u = sqrt(w), m).

    Returns (e, m, |f|, |df/dm|, d2f/dm2) or None when the iteration leaves
    the trust region or the Jacobian degenerates.
    """
    u = np.sqrt(E0)
    m = m0
    for _ in range(max_iter):
        f, fm, fmm, fu, fum = master_f_all(u * u, m, spec, z_mod)
        f, fm, fmm, fu, fum = (
            np.real(f), np.real(fm), np.real(fmm), np.real(fu), np.real(fum),
        )
        J = np.array([[fu, fm], [fum, fmm]], dtype=float)
        try:
            step = np.linalg.solve(J, -np.array([f, fm], dtype=float))
        except np.linalg.LinAlgError:
            return None
        u += step[0]
        m += step[1]
        if not np.isfinite(u) or u <= 0 or u * u > 100 * max(1.0, E0):
            return None
        if max(abs(step[0]), abs(step[1])) < 1e-14 * max(1.0, abs(u) + abs(m)):
            break
    f, fm, fmm, _, _ = master_f_all(u * u, m, spec, z_mod)
    return float(u * u), float(np.real(m)), abs(complex(f)), abs(complex(fm)), float(np.real(fmm))


def _real_m_outside(
    E: float, spec: SigmaSpectrum, z_mod: float, opts: SolverOptions
) -> float:
    """m_c at a real point just off the support (real-valued branch)."""
    m, _, _, _, _ = solve_master_batch(np.array([E + 1e-9j]), spec, z_mod, opts)
    if not np.isfinite(m[0]):
        from .master import _continuation_solve

        mc, _ = _continuation_solve(complex(E, 1e-9), spec, z_mod, opts)
        return float(np.real(mc))
    return float(np.real(m[0]))


@dataclass(frozen=True)
class FindEdgesOptions:
    scan_points: int = 2000
    scan_max: float | None = None     # default 4 (s_1 + |z|^2 + 1)
    grid_lo: float = 1e-6
    bisect_width: float = 1e-10
    tau: float = 0.05


def find_edges(
    spec: SigmaSpectrum,
    z_mod: float,
    opts: SolverOptions | None = None,
    scan: FindEdgesOptions | None = None,
) -> SupportProfile:
    """Locate all support bands and edges of the limiting densities.

    Scans the support indicator on a log-uniform grid, brackets each sign
    change by bisection to relative width 1e-10, then refines nonzero edges
    by the two-variable Newton iteration to |f| <= 1e-10, |df/dm| <= 1e-8.
    Retries once at 4x resolution on inconsistent bracketing.
    """
    opts = opts or SolverOptions()
    scan = scan or FindEdgesOptions()
    opts.params.check_z(z_mod)
    spec.require_normalized()
    scan_max = scan.scan_max or 4.0 * (spec.s[0] + z_mod * z_mod + 1.0)

    last_err: Exception | None = None
    for attempt, pts in enumerate((scan.scan_points, 4 * scan.scan_points)):
        try:
            return _find_edges_once(spec, z_mod, opts, pts, scan_max, scan)
        except BracketingError as exc:
            last_err = exc
    raise last_err  # type: ignore[misc]


def _find_edges_once(
    spec: SigmaSpectrum,
    z_mod: float,
    opts: SolverOptions,
    scan_points: int,
    scan_max: float,
    scan: FindEdgesOptions,
) -> SupportProfile:
    grid = np.exp(np.linspace(np.log(scan.grid_lo), np.log(scan_max), scan_points))
    rho1, _, _, _ = density_batch(grid, spec, z_mod, opts)
    inside = rho1 > opts.density_floor
    if inside[-1]:
        raise BracketingError("support reaches the scan ceiling; enlarge scan_max")
    if not np.any(inside):
        raise BracketingError("no support found on the scan grid")

    # collect sign-change brackets
    flips = np.nonzero(np.diff(inside.astype(int)))[0]
    lo = grid[flips]
    hi = grid[flips + 1]
    lo_inside = inside[flips]
    mids = _bisect_indicator(lo, hi, lo_inside, spec, z_mod, opts, scan.bisect_width)

    # assemble bands in ascending order
    edges_asc: list[tuple[float, str]] = []
    touches_zero = bool(inside[0])
    for x, was_inside in zip(mids, lo_inside):
        edges_asc.append((float(x), "upper" if was_inside else "lower"))
    band_edges: list[float] = []
    if touches_zero:
        band_edges.append(0.0)
    band_edges.extend(x for x, _ in edges_asc)
    if len(band_edges) % 2 != 0:
        raise BracketingError("odd number of edges; grid too coarse")
    bands_asc = [
        (band_edges[i], band_edges[i + 1]) for i in range(0, len(band_edges), 2)
    ]
    if any(b[0] >= b[1] for b in bands_asc):
        raise BracketingError("band assembly failed; grid too coarse")

    # refine nonzero edges
    all_nonzero = [x for x, _ in edges_asc]
    refined_edges: list[EdgeInfo] = []
    for x, side in edges_asc:
        out_sign = -1.0 if side == "lower" else 1.0
        e_out = x * (1 + out_sign * 1e-6) + out_sign * 1e-12
        m_start = _real_m_outside(e_out, spec, z_mod, opts)
        got = _refine_edge_newton(x, m_start, spec, z_mod)
        refined = False
        e_fin, m_fin, fabs, dfabs, d2f = x, m_start, np.inf, np.inf, np.nan
        if got is not None:
            e_new, m_new, fabs_new, dfabs_new, d2f_new = got
            # the floor crossing sits within ~1e-6 of the true edge; a larger
            # jump means Newton escaped to a different edge
            if abs(e_new - x) <= max(1e-6 * max(1.0, x), 100 * scan.bisect_width):
                e_fin, m_fin, fabs, dfabs, d2f = (
                    e_new, m_new, fabs_new, dfabs_new, d2f_new,
                )
                refined = fabs <= EDGE_F_TOL and dfabs <= EDGE_DF_TOL
        if z_mod > 0:
            fac = cubic_factorize(e_fin, spec, z_mod)
            pole_distance = float(
                min(
                    np.min(np.abs(m_fin - fac.a)),
                    np.min(np.abs(m_fin - fac.b)),
                    np.min(np.abs(m_fin + fac.c)),
                )
            )
        else:
            pole_distance = float(
                np.min(np.abs(m_fin - np.asarray(spec.s) / np.sqrt(e_fin)))
            )
        others = [y for y in all_nonzero if abs(y - x) > 1e-12] + (
            [0.0] if touches_zero else []
        )
        gap = min((abs(e_fin - y) for y in others), default=np.inf)
        refined_edges.append(
            EdgeInfo(
                e=e_fin,
                m_c=m_fin,
                d2f=d2f,
                pole_distance=pole_distance,
                neighbor_gap=float(gap),
                side=side,
                refined=refined,
            )
        )

    # rebuild bands with refined endpoints
    ref_pos = [ed.e for ed in refined_edges]
    band_edges = ([0.0] if touches_zero else []) + ref_pos
    bands_asc = [
        (band_edges[i], band_edges[i + 1]) for i in range(0, len(band_edges), 2)
    ]

    zero_edge = None
    if touches_zero:
        t = zero_edge_scale(spec, z_mod, scan.tau)
        zero_edge = ZeroEdgeInfo(
            t=t,
            rho1_amplitude=float(np.sqrt(t) / np.pi),
            rho2_amplitude=float(np.sqrt(t) / (np.pi * (t + z_mod * z_mod))),
        )

    return SupportProfile(
        z_mod=z_mod,
        bands=tuple(sorted(bands_asc, reverse=True)),
        edges=tuple(sorted(refined_edges, key=lambda e: -e.e)),
        zero_edge=zero_edge,
        scan_points=scan_points,
        scan_max=scan_max,
    )


def check_edge_regularity(edge: EdgeInfo, epsilon: float) -> RegularityReport:
    """Compare the edge's pole distance and curvature against the margin epsilon."""
    return RegularityReport(
        edge=edge,
        epsilon=epsilon,
        pole_distance_ok=bool(edge.pole_distance >= epsilon),
        curvature_ok=bool(abs(edge.d2f) >= epsilon),
        neighbor_gap=edge.neighbor_gap,
    )


def check_bulk_regularity(
    band: tuple[float, float],
    spec: SigmaSpectrum,
    z_mod: float,
    tau_prime: float,
    c: float,
    opts: SolverOptions | None = None,
    grid_points: int = 200,
) -> bool:
    """True iff rho1 >= c on the band shrunk by tau_prime at both ends."""
    opts = opts or SolverOptions()
    lo, hi = min(band), max(band)
    if hi - lo <= 2 * tau_prime:
        raise DomainError("band too narrow for the requested shrink")
    x = np.linspace(lo + tau_prime, hi - tau_prime, grid_points)
    rho1, _, _, _ = density_batch(x, spec, z_mod, opts)
    return bool(np.min(rho1) >= c)


def edge_exponent_fit(
    edge: EdgeInfo | ZeroEdgeInfo,
    spec: SigmaSpectrum,
    z_mod: float,
    opts: SolverOptions | None = None,
    window: tuple[float, float] = (1e-4, 1e-2),
    n_points: int = 20,
) -> float:
    """Least-squares slope of log rho1 against log distance from the edge.

    Regular nonzero edges give about +1/2; the zero edge gives about -1/2.
    """
    opts = opts or SolverOptions()
    d = np.exp(np.linspace(np.log(window[0]), np.log(window[1]), n_points))
    if isinstance(edge, ZeroEdgeInfo):
        x = d
    else:
        into = 1.0 if edge.side == "lower" else -1.0
        x = edge.e + into * d
        if np.any(x <= 0):
            raise DomainError("fit window leaves the positive axis")
    rho1, _, _, _ = density_batch(x, spec, z_mod, opts)
    if np.any(rho1 <= 0):
        raise SolverError("density vanished inside the fit window")
    slope = np.polyfit(np.log(d), np.log(rho1), 1)[0]
    return float(slope)
