"""Per-leaf analytic estimates: bundle curvature, capacity, inequalities,
area uniformity, and the boundary maximum principle for holomorphic sections.

At complex dimension one the tangent-pullback bundle along a leaf is a line
bundle. Its fiber metric is the moving volume density at the leaf point in
the holomorphic frame; the stored ``h`` is the volume *ratio* against the
background (the capacity integrand and the inequality combination), while
the curvature uses the full fiber metric, which differs from the ratio by
the background metric factor at the moving base point (constant on the flat
torus, so there the two give identical second differences).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationFailed, DegenerateLeaf
from .foliation import Leaf, _Rows, leaf_base_energy
from .geometry import ModelKind
from .solver import StripSolution


@dataclass(frozen=True)
class LeafBundleMetric:
    leaf: Leaf
    h: np.ndarray
    log_h: np.ndarray
    truncated: bool


@dataclass(frozen=True)
class CurvatureReport:
    trF: np.ndarray
    max_trF: float
    ineq1_margin: float
    ineq2_margin: float
    ineq3_margin: float
    C1_used: float
    C2_used: float
    scale1: float
    scale2: float
    scale3: float
    largest_quad_constant: float


@dataclass(frozen=True)
class CapacityReport:
    capacities: np.ndarray
    max: float
    min: float


@dataclass(frozen=True)
class AreaCheck:
    area: float
    bound: float
    bound_ok: bool


@dataclass(frozen=True)
class MaxPrincipleReport:
    worst_excess: float
    dynamic_range: float
    excesses: np.ndarray


def pullback_density(strip: StripSolution, leaf: Leaf,
                     rows: _Rows | None = None) -> LeafBundleMetric:
    """Volume ratio of the moving slice at the leaf point, per time node."""
    rows = rows or _Rows(strip)
    nv = leaf.n_valid
    h = np.full(strip.grid.nt, np.nan)
    for j in range(nv):
        h[j] = rows.ratio(j, leaf.trajectory[j])
    valid = h[:nv]
    if np.any(valid <= 0):
        raise DegenerateLeaf(f"pullback ratio hit {np.min(valid):.3g} on leaf "
                             f"{leaf.start:.4f}")
    log_h = np.where(np.isfinite(h), np.log(np.where(h > 0, h, 1.0)), np.nan)
    return LeafBundleMetric(leaf=leaf, h=h, log_h=log_h, truncated=leaf.truncated)


def _fiber_metric(strip: StripSolution, leaf: Leaf, h: np.ndarray) -> np.ndarray:
    """Line-bundle metric in the holomorphic leaf frame.

    Ratio times the background factor at the moving point; the factor is
    constant on the torus and the round metric factor on the sphere.
    """
    model = strip.model
    if model.kind is ModelKind.FLAT_TORUS:
        return h * model.total_area
    return h * np.maximum(model.metric_factor(leaf.trajectory), 1e-300)


def _second_diff(f: np.ndarray, dt: float) -> np.ndarray:
    return (f[2:] + f[:-2] - 2.0 * f[1:-1]) / (dt * dt)


def curvature_trace(strip: StripSolution, leaf: Leaf,
                    rows: _Rows | None = None) -> CurvatureReport:
    """Curvature function of the pullback line bundle along the leaf.

    trF = -(log fiber metric)'' in the strip coordinate; nonpositivity is
    the numerical content of the curvature sign theorem.
    """
    if leaf.n_valid < 7:
        raise ValueError("need at least 5 interior leaf nodes for curvature")
    metric = pullback_density(strip, leaf, rows)
    G = _fiber_metric(strip, leaf, metric.h)
    dt = strip.grid.dt
    nv = leaf.n_valid
    trF = np.full(strip.grid.nt - 2, np.nan)
    trF[: nv - 2] = -_second_diff(np.log(G[:nv]), dt)
    finite = trF[np.isfinite(trF)]
    return CurvatureReport(
        trF=trF, max_trF=float(np.max(finite)),
        ineq1_margin=float("nan"), ineq2_margin=float("nan"),
        ineq3_margin=float("nan"), C1_used=float("nan"), C2_used=float("nan"),
        scale1=float("nan"), scale2=float("nan"), scale3=float("nan"),
        largest_quad_constant=float("nan"),
    )


def capacity(strip: StripSolution, leaf: Leaf, rows: _Rows | None = None,
             floor: float = 1e-10) -> float:
    """Integral of the reciprocal volume ratio over the strip measure."""
    if leaf.truncated:
        raise DegenerateLeaf(f"leaf {leaf.start:.4f} is truncated; capacity undefined")
    metric = pullback_density(strip, leaf, rows)
    if np.min(metric.h) < floor:
        raise DegenerateLeaf(f"pullback ratio below {floor:g}; capacity blows up")
    s_measure = 1.0 if strip.grid.geometry == "cylinder" else 2.0 * strip.grid.R
    return float(s_measure * np.trapz(1.0 / metric.h, dx=strip.grid.dt))


def capacity_report(strip: StripSolution, leaves: list[Leaf]) -> CapacityReport:
    rows = _Rows(strip)
    caps = np.array([capacity(strip, lf, rows) for lf in leaves])
    return CapacityReport(capacities=caps, max=float(np.max(caps)), min=float(np.min(caps)))


def _leaf_terms(strip: StripSolution, leaf: Leaf, rows: _Rows):
    """Shared interior-node quantities for the inequality family."""
    if leaf.truncated:
        raise DegenerateLeaf("inequalities are evaluated on full leaves only")
    metric = pullback_density(strip, leaf, rows)
    dt = strip.grid.dt
    lap_logh = _second_diff(metric.log_h, dt)
    phi_leaf = np.array([rows.value(j, leaf.trajectory[j])
                         for j in range(strip.grid.nt)])
    lap_phi = _second_diff(phi_leaf, dt)
    G = _fiber_metric(strip, leaf, metric.h)
    trF = -_second_diff(np.log(G), dt)
    return lap_logh, lap_phi, trF


def inequality_margins(strip: StripSolution, leaf: Leaf, C1: float, C2: float,
                       rows: _Rows | None = None) -> CurvatureReport:
    """Minimum slack of the three leaf inequalities at the given constants.

    (1) (log ratio + C1 phi)'' >= 0  (subharmonicity with potential weight)
    (2) (log ratio + C2 phi)'' <= -trF  (trace domination)
    (3) -(trF)'' >= 2 (trF)^2  (the quadratic trace inequality at n = 1)
    Negative margins are findings, not failures.
    """
    rows = rows or _Rows(strip)
    lap_logh, lap_phi, trF = _leaf_terms(strip, leaf, rows)
    dt = strip.grid.dt
    e1 = lap_logh + C1 * lap_phi
    e2 = -trF - (lap_logh + C2 * lap_phi)
    lap_trF = _second_diff(trF, dt)
    e3 = -lap_trF - 2.0 * trF[1:-1] ** 2
    scale1 = 1.0 + float(np.max(np.abs(lap_logh)) + abs(C1) * np.max(np.abs(lap_phi)))
    scale2 = scale1 + float(np.max(np.abs(trF))) + abs(C2 - C1) * float(np.max(np.abs(lap_phi)))
    scale3 = 1.0 + float(np.max(np.abs(lap_trF)) + 2.0 * np.max(trF ** 2))
    ratios = [(-lap_trF[i]) / (trF[1:-1][i] ** 2)
              for i in range(lap_trF.size) if trF[1:-1][i] ** 2 > 1e-30]
    largest = float(min(ratios)) if ratios else float("inf")
    return CurvatureReport(
        trF=trF, max_trF=float(np.max(trF)),
        ineq1_margin=float(np.min(e1)), ineq2_margin=float(np.min(e2)),
        ineq3_margin=float(np.min(e3)), C1_used=float(C1), C2_used=float(C2),
        scale1=scale1, scale2=scale2, scale3=scale3,
        largest_quad_constant=largest,
    )


@dataclass(frozen=True)
class CalibrationResult:
    C1: float
    C2: float
    tol: float


def calibrate_constants(strip: StripSolution, leaves: list[Leaf],
                        tol: float = 1e-6, cap: float = 1e3) -> CalibrationResult:
    """Smallest constants making inequality margins acceptable over the ensemble.

    Coarse geometric scan from zero up to the cap, then bisection refinement
    to the smallest passing value. The pass test uses margin >= -tol * scale.
    """
    rows = _Rows(strip)
    terms = [_leaf_terms(strip, lf, rows) for lf in leaves]
    lap_logh = np.concatenate([t[0] for t in terms])
    lap_phi = np.concatenate([t[1] for t in terms])
    trF = np.concatenate([t[2] for t in terms])

    def margin1(C):
        return float(np.min(lap_logh + C * lap_phi))

    def scale_at(C):
        return 1.0 + float(np.max(np.abs(lap_logh)) + abs(C) * np.max(np.abs(lap_phi)))

    def margin2(C):
        return float(np.min(-trF - (lap_logh + C * lap_phi)))

    def scale2_at(C):
        return scale_at(C) + float(np.max(np.abs(trF)))

    def smallest_passing(margin, scale, which):
        grid = np.concatenate(([0.0], np.geomspace(1e-3, cap, 61)))
        passing = None
        prev = None
        for C in grid:
            if margin(C) >= -tol * scale(C):
                passing = C
                break
            prev = C
        if passing is None:
            vals = lap_logh + cap * lap_phi if which == "subharmonicity" \
                else -trF - (lap_logh + cap * lap_phi)
            worst = int(np.argmin(vals))
            raise CalibrationFailed(which, (worst,), float(np.min(vals)))
        if prev is None or passing == 0.0:
            return passing
        lo, hi = prev, passing
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if margin(mid) >= -tol * scale(mid):
                hi = mid
            else:
                lo = mid
        return hi

    c1 = smallest_passing(margin1, scale_at, "subharmonicity")
    c2 = smallest_passing(margin2, scale2_at, "trace domination")
    return CalibrationResult(C1=float(c1), C2=float(c2), tol=tol)


def leaf_area_and_bound(strip: StripSolution, leaf: Leaf) -> AreaCheck:
    """Lifted-curve area against the strip-plus-pullback bound.

    The bound constant grows with the stored second-difference seminorm of
    the solution; the fiber term of the area vanishes in the exact limit
    because the lift is conserved.
    """
    s_measure = 1.0 if strip.grid.geometry == "cylinder" else 2.0 * strip.grid.R
    kinetic = leaf_base_energy(strip.model, leaf, strip.grid.dt) * s_measure
    bound = (1.0 + strip.c11) * (s_measure + kinetic) + 1e-9
    return AreaCheck(area=leaf.area, bound=bound, bound_ok=bool(leaf.area <= bound))


def _poly_from_roots(roots) -> np.ndarray:
    coeffs = np.array([1.0 + 0j])
    for r in roots:
        coeffs = np.convolve(coeffs, np.array([1.0, -r]))
    return coeffs


def max_principle_check(strip: StripSolution, leaf: Leaf, test_count: int = 20,
                        R: float | None = None, seed: int = 0,
                        inverted: bool = False,
                        rows: _Rows | None = None) -> MaxPrincipleReport:
    """Interior-vs-boundary excess of log |s|^2 for holomorphic test sections.

    Sections are polynomial multiples of the leaf frame; their squared norm
    is |p(z)|^2 times the fiber metric. Tests: monomials, seeded random
    cubic polynomials, and one adaptive root test tuned to the mean slope of
    the log metric (the configuration that gives the inverted-metric control
    probe guaranteed power). A nonpositive excess confirms the boundary
    maximum property discretely.
    """
    rows = rows or _Rows(strip)
    if leaf.truncated:
        raise DegenerateLeaf("maximum principle needs a full leaf")
    metric = pullback_density(strip, leaf, rows)
    G = _fiber_metric(strip, leaf, metric.h)
    logG = np.log(G)
    if inverted:
        logG = -logG
    R = R if R is not None else (strip.grid.R if strip.grid.geometry == "rectangle" else 1.0)
    nt = strip.grid.nt
    t = strip.grid.times
    ns = nt if nt % 2 == 1 else nt + 1
    s = np.linspace(-R, R, ns)
    Z = t[:, None] + 1j * s[None, :]

    tests = [np.array([1.0 + 0j])]
    for k in range(1, 5):
        mono = np.zeros(k + 1, dtype=complex)
        mono[0] = 1.0
        tests.append(mono)
    slope = (logG[-1] - logG[0])
    if abs(slope) > 1e-8:
        # root placed so log|z - c|^2 + logG has a stationary interior hump
        root_c = 0.5 + 2.0 / slope
        tests.append(_poly_from_roots([0.5 + 1.2j * R, 0.5 - 1.2j * R, root_c]))
    rng = np.random.default_rng(seed)
    while len(tests) < test_count:
        coeffs = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        tests.append(coeffs)
    tests = tests[:test_count]

    excesses = np.empty(len(tests))
    worst_range = 0.0
    interior = np.s_[1:-1, 1:-1]
    for i, coeffs in enumerate(tests):
        P = np.polyval(coeffs, Z)
        abs2 = np.abs(P) ** 2
        tiny = max(float(np.max(abs2)), 1e-300) * 1e-18
        F = np.log(np.maximum(abs2, tiny)) + logG[:, None]
        boundary_max = max(F[0].max(), F[-1].max(), F[:, 0].max(), F[:, -1].max())
        interior_max = F[interior].max()
        excesses[i] = interior_max - boundary_max
        worst_range = max(worst_range, float(F.max() - F.min()))
    return MaxPrincipleReport(worst_excess=float(np.max(excesses)),
                              dynamic_range=worst_range, excesses=excesses)
