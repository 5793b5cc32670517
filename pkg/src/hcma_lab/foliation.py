"""Kernel distribution of a strip solution and its holomorphic leaves.

Where a slice volume form is nondegenerate the degenerate product form has a
one-complex-dimensional kernel spanned by d/dz + v; in the reduction

    v(t, zeta) = - c(zeta) * Phi_tzeta / (2 d(t, zeta)),

the characteristic field of the geodesic equation. Leaves are traced by RK4
and carry their cotangent lift (half the gradient of the full local
potential in the log coordinate), which is conserved along exact leaves:
leaves are the level sets of the moving moment maps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._interp import TrigInterp, periodic_spline_from_scatter, spline
from .errors import EmptyRegularSet, LeftRegularSet, NonGraphical
from .geometry import ModelKind, Potential, SurfaceModel, density_ratio, gradient
from .solver import StripSolution, _build_solution


@dataclass(frozen=True)
class LeafField:
    """Reduced kernel vector field; NaN outside the regular set."""

    v: np.ndarray
    sup_norm: float
    mask: np.ndarray
    defect: np.ndarray
    defect_sup: float


@dataclass(frozen=True)
class Leaf:
    start: float
    trajectory: np.ndarray
    lift: np.ndarray
    area: float
    moment_value: float
    moment_drift: float
    boundary_defect: float
    truncated: bool
    n_valid: int


@dataclass(frozen=True)
class RegularSetReport:
    mask: np.ndarray
    fraction: float
    min_density_interior: float


@dataclass(frozen=True)
class GammaCheck:
    margin: float
    coverage: float


class _Rows:
    """Per-time-row interpolants of a strip solution.

    Torus rows are trigonometric (spectrally accurate); sphere rows are
    cubic splines in the moment coordinate.
    """

    def __init__(self, strip: StripSolution):
        self.model = strip.model
        self.strip = strip
        m = self.model
        self.ratio_rows = strip.slice_ratios()
        if m.kind is ModelKind.FLAT_TORUS:
            self._val = [TrigInterp(row) for row in strip.values]
            self._ratio = [TrigInterp(row) for row in self.ratio_rows]
        else:
            x = m.grid.nodes
            self._val = [spline(x, row) for row in strip.values]
            self._ratio = [spline(x, row) for row in self.ratio_rows]

    def value(self, j: int, X):
        return self._val[j](self._wrap(X))

    def value_deriv(self, j: int, X):
        if self.model.kind is ModelKind.FLAT_TORUS:
            return self._val[j].derivative(self._wrap(X))
        return self._val[j].derivative()(X)

    def ratio(self, j: int, X):
        return self._ratio[j](self._wrap(X))

    def lift(self, j: int, X):
        """Cotangent coordinate of the slice graph at X (half log-coordinate gradient)."""
        m = self.model
        if m.kind is ModelKind.FLAT_TORUS:
            return m.total_area * np.asarray(X, float) + 0.5 * self.value_deriv(j, X)
        X = np.asarray(X, float)
        return X + 0.5 * m.metric_factor(X) * self.value_deriv(j, X)

    def _wrap(self, X):
        if self.model.kind is ModelKind.FLAT_TORUS:
            return np.asarray(X, float)  # trig interps are periodic by construction
        return np.asarray(X, float)


def boundary_lift(model: SurfaceModel, phi_values, X):
    """Lagrangian-graph cotangent value of raw potential values at X."""
    vals = phi_values.values if isinstance(phi_values, Potential) else np.asarray(phi_values, float)
    X = np.asarray(X, float)
    if model.kind is ModelKind.FLAT_TORUS:
        f = TrigInterp(vals)
        return model.total_area * X + 0.5 * f.derivative(X)
    f = spline(model.grid.nodes, vals)
    return X + 0.5 * model.metric_factor(X) * f.derivative()(X)


def _time_gradient(values: np.ndarray, dt: float) -> np.ndarray:
    """Second-order d/dt along rows; one-sided at the strip boundary."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


def leaf_vector(strip: StripSolution, delta: float = 1e-6) -> LeafField:
    """Solve the kernel contraction identity for v wherever the slice is regular.

    The two contraction components agree exactly when the equation holds;
    the defect field reports the first component's failure relative to the
    local density scale, so non-solutions are diagnosed rather than refused.
    """
    from .solver import _first_diff_matrix, _time_second_diff

    model = strip.model
    V = strip.values
    dt = strip.grid.dt
    d = strip.slice_ratios() * model.b
    mask = d > delta * float(np.max(d))
    if not mask.any():
        raise EmptyRegularSet("no node clears the regular-set threshold")
    Sx = _first_diff_matrix(model)
    Vt = _time_gradient(V, dt)
    Phi_tz = (Sx @ Vt.T).T
    with np.errstate(divide="ignore", invalid="ignore"):
        v = -model.c_nodes[None, :] * Phi_tz / (2.0 * d)
    v = np.where(mask, v, np.nan)
    rho = d / model.b
    cb = model.c_nodes / (2.0 * model.b)
    defect = np.full_like(V, np.nan)
    Phi_tt = _time_second_diff(V, dt)
    resid = Phi_tt * rho[1:-1] - cb[None, :] * Phi_tz[1:-1] ** 2
    defect[1:-1] = np.abs(resid) / rho[1:-1]
    defect[~mask] = np.nan
    finite_v = v[np.isfinite(v)]
    finite_d = defect[np.isfinite(defect)]
    return LeafField(
        v=v,
        sup_norm=float(np.max(np.abs(finite_v))) if finite_v.size else 0.0,
        mask=mask,
        defect=defect,
        defect_sup=float(np.max(finite_d)) if finite_d.size else 0.0,
    )


class _VField:
    """Evaluates the filled leaf field at arbitrary (t, X) for the tracer.

    Cubic 4-point interpolation across time rows keeps the ODE error below
    the PDE discretization error.
    """

    def __init__(self, strip: StripSolution, field: LeafField):
        self.model = strip.model
        self.nt = strip.grid.nt
        self.dt = strip.grid.dt
        filled = np.where(np.isfinite(field.v), field.v, 0.0)
        if self.model.kind is ModelKind.FLAT_TORUS:
            self._rows = [TrigInterp(row) for row in filled]
        else:
            x = self.model.grid.nodes
            self._rows = [spline(x, row) for row in filled]
        if self.model.kind is ModelKind.ROUND_SPHERE:
            self._lo = self.model.grid.nodes[0]
            self._hi = self.model.grid.nodes[-1]

    def _row_eval(self, j, X):
        if self.model.kind is ModelKind.ROUND_SPHERE:
            X = np.clip(X, self._lo, self._hi)
        return self._rows[j](X)

    def __call__(self, t: float, X):
        s = t / self.dt
        j0 = int(np.floor(s))
        frac = s - j0
        if frac < 1e-14 and 0 <= j0 < self.nt:
            return self._row_eval(j0, X)
        base = min(max(j0 - 1, 0), self.nt - 4)
        xs = np.arange(base, base + 4, dtype=float)
        w = np.ones(4)
        for a in range(4):
            for bidx in range(4):
                if a != bidx:
                    w[a] *= (s - xs[bidx]) / (xs[a] - xs[bidx])
        out = w[0] * self._row_eval(base, X)
        for a in range(1, 4):
            out = out + w[a] * self._row_eval(base + a, X)
        return out


def trace_ensemble(strip: StripSolution, seeds=None, delta: float = 1e-6,
                   field: LeafField | None = None) -> list[Leaf]:
    """RK4-trace leaves from the given basepoints (default: every grid node)."""
    model = strip.model
    if seeds is None:
        seeds = model.grid.nodes.copy()
    seeds = np.atleast_1d(np.asarray(seeds, dtype=float))
    field = field if field is not None else leaf_vector(strip, delta)
    rows = _Rows(strip)
    vf = _VField(strip, field)
    nt = strip.grid.nt
    dt = strip.grid.dt
    dmax = float(np.max(rows.ratio_rows))
    floor = delta * dmax

    X = np.full((nt, seeds.size), np.nan)
    X[0] = seeds
    alive = rows.ratio(0, seeds) > floor
    if not alive.all():
        bad = seeds[~alive]
        raise LeftRegularSet(f"seed(s) {bad} start outside the regular set")
    cut = np.full(seeds.size, nt, dtype=int)
    for j in range(nt - 1):
        t = j * dt
        cur = X[j]
        live = cut == nt
        if not live.any():
            break
        k1 = vf(t, cur)
        k2 = vf(t + dt / 2, cur + dt * k1 / 2)
        k3 = vf(t + dt / 2, cur + dt * k2 / 2)
        k4 = vf(t + dt, cur + dt * k3)
        nxt = cur + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        ok = rows.ratio(j + 1, nxt) > floor
        newly_cut = live & ~ok
        cut[newly_cut] = j + 1
        X[j + 1, live & ok] = nxt[live & ok]

    leaves = []
    s_measure = 1.0 if strip.grid.geometry == "cylinder" else 2.0 * strip.grid.R
    for i, x0 in enumerate(seeds):
        nv = int(cut[i])
        traj = X[:, i].copy()
        lift = np.full(nt, np.nan)
        for j in range(min(nv, nt)):
            lift[j] = rows.lift(j, traj[j])
        truncated = nv < nt
        moment_value = float(model.fiber_period * lift[0])
        valid = slice(0, min(nv, nt))
        drift = float(model.fiber_period * np.max(np.abs(lift[valid] - lift[0])))
        b_def = abs(float(boundary_lift(model, strip.boundary[0], traj[0])) - lift[0])
        if not truncated:
            b_def = max(b_def, abs(
                float(boundary_lift(model, strip.boundary[1], traj[-1])) - lift[-1]))
            area = _leaf_area(model, traj, lift, dt, s_measure)
        else:
            area = float("nan")
        leaves.append(Leaf(start=float(x0), trajectory=traj, lift=lift, area=area,
                           moment_value=moment_value, moment_drift=drift,
                           boundary_defect=float(b_def), truncated=truncated,
                           n_valid=min(nv, nt)))
    return leaves


def trace_leaf(strip: StripSolution, x0: float, delta: float = 1e-6,
               field: LeafField | None = None) -> Leaf:
    return trace_ensemble(strip, seeds=[x0], delta=delta, field=field)[0]


def _leaf_area(model: SurfaceModel, traj, lift, dt, s_measure) -> float:
    """Area of the lifted curve in the product metric (graph energy form).

    Contributions: the strip itself, the base kinetic term (= the pullback of
    the background form for holomorphic leaves), and the cotangent-fiber
    kinetic term, which vanishes in the exact limit because the lift is the
    conserved moment coordinate.
    """
    Xdot = np.gradient(traj, dt)
    ldot = np.gradient(lift, dt)
    if model.kind is ModelKind.FLAT_TORUS:
        g = np.full_like(traj, model.total_area)
        xi_dot = Xdot
    else:
        g = model.metric_factor(traj)
        g = np.maximum(g, 1e-300)
        xi_dot = Xdot / g
    integrand = 1.0 + g * xi_dot ** 2 + ldot ** 2 / g
    return float(s_measure * np.trapz(integrand, dx=dt))


def leaf_base_energy(model: SurfaceModel, leaf: Leaf, dt: float) -> float:
    """Pullback of the background form through the leaf's base map."""
    Xdot = np.gradient(leaf.trajectory, dt)
    if model.kind is ModelKind.FLAT_TORUS:
        g = np.full_like(leaf.trajectory, model.total_area)
        xi_dot = Xdot
    else:
        g = np.maximum(model.metric_factor(leaf.trajectory), 1e-300)
        xi_dot = Xdot / g
    return float(np.trapz(g * xi_dot ** 2, dx=dt))


def regular_set(strip: StripSolution, delta: float = 1e-6) -> RegularSetReport:
    """Nodes whose slice density clears the relative threshold."""
    if delta <= 0:
        raise ValueError("threshold must be positive")
    d = strip.slice_ratios() * strip.model.b
    mask = d > delta * float(np.max(d))
    return RegularSetReport(
        mask=mask,
        fraction=float(np.mean(mask)),
        min_density_interior=float(np.min(d[1:-1])),
    )


def gamma_diffeo_check(leaves: list[Leaf], t_index: int,
                       periodic: bool = False) -> GammaCheck:
    """Monotonicity margin of seed -> position at one time node.

    A positive margin certifies grid-scale bijectivity of the time-t leaf
    transport; on the periodic base the wrap-around pair enforces winding
    number one. Truncated leaves are excluded; coverage reports the
    surviving fraction.
    """
    ordered = sorted(leaves, key=lambda lf: lf.start)
    surviving = [lf for lf in ordered if lf.n_valid > t_index]
    coverage = len(surviving) / max(len(leaves), 1)
    if len(surviving) < 2:
        return GammaCheck(margin=float("nan"), coverage=coverage)
    X = np.array([lf.trajectory[t_index] for lf in surviving])
    diffs = list(np.diff(X))
    if periodic:
        diffs.append(X[0] + 1.0 - X[-1])
    return GammaCheck(margin=float(np.min(diffs)), coverage=coverage)


@dataclass(frozen=True)
class ReconstructionResult:
    solution: StripSolution
    roundtrip_error: float
    gap_flag: bool


def reconstruct_potential(strip: StripSolution, leaves: list[Leaf]) -> ReconstructionResult:
    """Rebuild the strip potential from the leaf ensemble and boundary data.

    Slice by slice, the lifts sweep the Lagrangian graph of the slice; the
    graph 1-form is integrated (through the antiderivative of its spline) to
    recover each slice up to a constant. Boundary slices pin their constants
    by the boundary data; interior constants are completed by the equation
    itself: the slice-mean of the reconstructed residual determines C''(t),
    a scalar two-point problem.
    """
    model = strip.model
    nt = strip.grid.nt
    if any(lf.truncated for lf in leaves):
        raise LeftRegularSet("cannot reconstruct from a truncated ensemble")
    order = np.argsort([lf.start for lf in leaves])
    leaves = [leaves[i] for i in order]
    X = np.stack([lf.trajectory for lf in leaves], axis=1)   # (nt, n_leaves)
    Xi = np.stack([lf.lift for lf in leaves], axis=1)
    gap_flag = False
    nodes = model.grid.nodes
    rebuilt = np.empty((nt, model.grid.count))

    for j in range(nt):
        pos = X[j]
        spacing = np.diff(pos)
        if np.any(spacing <= 0):
            raise NonGraphical(f"leaf sweep is not monotone at time row {j}")
        wrap_sp = spacing
        if model.kind is ModelKind.FLAT_TORUS:
            wrap_sp = np.append(spacing, pos[0] + 1.0 - pos[-1])
            if wrap_sp[-1] <= 0:
                raise NonGraphical(f"leaf sweep does not close up at time row {j}")
        if np.max(wrap_sp) > 3.0 * np.median(wrap_sp):
            gap_flag = True
        if model.kind is ModelKind.FLAT_TORUS:
            A = model.total_area
            grad_vals = 2.0 * Xi[j] - 2.0 * A * X[j]
            sp_fun, x_left = periodic_spline_from_scatter(pos % 1.0, grad_vals, 1.0)
            anti = sp_fun.antiderivative()
            drift = (anti(x_left + 1.0) - anti(x_left))
            pts = x_left + (nodes - x_left) % 1.0
            rebuilt[j] = anti(pts) - drift * (pts - x_left)
        else:
            H = np.maximum(model.metric_factor(pos), 1e-300)
            grad_vals = (2.0 * Xi[j] - 2.0 * pos) / H
            sp_fun = spline(pos, grad_vals)
            anti = sp_fun.antiderivative()
            rebuilt[j] = anti(nodes)

    # equation completion of the per-slice constants
    from .solver import _first_diff_matrix, _mixed_diff, _time_second_diff

    dt = strip.grid.dt
    Sx = _first_diff_matrix(model)
    rho = np.stack([density_ratio(model, row) for row in rebuilt])
    cb = model.c_nodes / (2.0 * model.b)
    R = (_time_second_diff(rebuilt, dt) * rho[1:-1]
         - cb[None, :] * _mixed_diff(rebuilt, Sx, dt) ** 2)
    mean_def = np.mean(R / rho[1:-1], axis=1)
    c0 = float(np.mean(strip.boundary[0].values - rebuilt[0]))
    c1 = float(np.mean(strip.boundary[1].values - rebuilt[-1]))
    C = _solve_constant_bvp(mean_def, c0, c1, dt)
    rebuilt = rebuilt + C[:, None]

    roundtrip = float(np.max(np.abs(rebuilt - strip.values)))
    sol = _build_solution(strip.grid, strip.boundary[0], strip.boundary[1],
                          rebuilt, "reconstructed")
    return ReconstructionResult(solution=sol, roundtrip_error=roundtrip, gap_flag=gap_flag)


def _solve_constant_bvp(mean_def: np.ndarray, c0: float, c1: float, dt: float) -> np.ndarray:
    """Tridiagonal solve of C'' = -mean_def with fixed end values."""
    n = mean_def.size
    rhs = -mean_def * dt * dt
    rhs[0] -= c0
    rhs[-1] -= c1
    a = np.ones(n - 1)
    b = -2.0 * np.ones(n)
    sol = _thomas(a, b, a, rhs)
    return np.concatenate(([c0], sol, [c1]))


def _thomas(lower, diag, upper, rhs):
    n = rhs.size
    c = np.zeros(n)
    d = np.zeros(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i - 1] * c[i - 1]
        c[i] = upper[i] / m if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m
    out = np.zeros(n)
    out[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


@dataclass(frozen=True)
class LagrangianCheck:
    defect: float
    graph_defect: float
    chart_defect: float


def lagrangian_symplectic_check(model: SurfaceModel, phi: Potential) -> LagrangianCheck:
    """Discrete pullback identity of the holomorphic 2-form on the graph.

    The real part vanishes identically in the reduction; the imaginary part
    states that the graph 1-form's derivative reproduces the slice density
    over the fiber period. The two sides are discretized independently
    (graph from the interpolant's derivative, density from the flux form).
    On the sphere the graph is built in both pole charts and the twisted
    cotangent transition (the background-potential twist cancels for the
    round metric by symmetry) is verified on the overlap.
    """
    d = phi.density
    P = model.fiber_period
    h = model.grid.spacing
    if model.kind is ModelKind.FLAT_TORUS:
        g = boundary_lift(model, phi, model.grid.nodes)
        dgdx = (np.roll(g, -1) - np.roll(g, 1)) / (2.0 * h)
        # wrap rows cross the quasi-period jump of the graph coordinate
        dgdx[0] += model.total_area / (2.0 * h)
        dgdx[-1] += model.total_area / (2.0 * h)
        graph_defect = float(np.max(np.abs(dgdx - d / P)))
        chart_defect = 0.0
    else:
        g = boundary_lift(model, phi, model.grid.nodes)
        dgdx = np.empty_like(g)
        dgdx[1:-1] = (g[2:] - g[:-2]) / (2.0 * h)
        dgdx[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
        dgdx[-1] = (3.0 * g[-1] - 4.0 * g[-2] + g[-3]) / (2.0 * h)
        graph_defect = float(np.max(np.abs(dgdx - d / P)))
        # opposite-pole chart: same potential seen in the reversed moment
        # coordinate; the cotangent components must be mirror-negatives
        g_north = boundary_lift(model, phi.values[::-1].copy(), model.grid.nodes)
        chart_defect = float(np.max(np.abs(g_north[::-1] + g)))
    return LagrangianCheck(defect=max(graph_defect, chart_defect),
                           graph_defect=graph_defect, chart_defect=chart_defect)
