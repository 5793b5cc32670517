"""Geodesic solvers for the degenerate Monge-Ampere equation on the strip.

In the symmetric reduction the equation for Phi(t, zeta) reads

    Phi_tt * rho - (c / 2b) * Phi_tzeta^2 = 0,      rho = d / b,

the dimensionless determinant of the 2x2 complex Hessian against the product
background volume. Two routes to a solution:

* ``legendre_geodesic``: the exact device. Writing each slice through its
  dual (symplectic) potential in the moment variable, the equation linearizes;
  the geodesic is the pointwise linear interpolation of the endpoint duals.
* ``epsilon_geodesic``: damped Newton continuation on the regularized
  equation (determinant ratio = epsilon), whose limit as epsilon -> 0 is the
  degenerate solution.

Torus constructions evaluate through trigonometric interpolants, so the
built solution carries spectrally small construction error and the
second-order residual checker sees pure truncation. Sphere constructions use
cubic splines in the moment variable with exact pole anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._interp import TrigInterp, invert_monotone, spline
from .errors import ConeExit, NewtonDiverged, NonMonotoneInversion, NotKahlerError
from .geometry import (
    ModelKind,
    Potential,
    SurfaceModel,
    density_ratio,
    gradient,
)


@dataclass(frozen=True)
class StripGrid:
    """Discretization of the strip factor: nt time nodes on [0, 1].

    ``cylinder`` geometry means data invariant in the imaginary strip
    direction (period 1); ``rectangle`` keeps a finite half-height R for
    boundary-maximum diagnostics.
    """

    nt: int
    base: "object"
    geometry: str = "cylinder"
    R: float | None = None

    def __post_init__(self):
        if self.nt < 17:
            raise ValueError(f"need at least 17 time nodes, got {self.nt}")
        if self.geometry not in ("cylinder", "rectangle"):
            raise ValueError(f"unknown strip geometry {self.geometry!r}")
        if self.geometry == "rectangle" and not (self.R and self.R > 0):
            raise ValueError("rectangle geometry requires R > 0")

    @property
    def dt(self) -> float:
        return 1.0 / (self.nt - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) / (self.nt - 1)


@dataclass(frozen=True)
class StripSolution:
    """Candidate solution on the strip with its stored diagnostics."""

    grid: StripGrid
    values: np.ndarray            # (nt, nx)
    boundary: tuple
    method: str                   # "legendre" | "epsilon" | "manufactured"
    epsilon: float | None
    residual_sup: float
    c11: float
    slice_margin: float

    def __post_init__(self):
        phi0, phi1 = self.boundary
        if not (np.array_equal(self.values[0], phi0.values)
                and np.array_equal(self.values[-1], phi1.values)):
            raise ValueError("boundary rows must equal the boundary potentials exactly")
        if self.slice_margin < 0:
            raise NotKahlerError(self.slice_margin)

    @property
    def model(self) -> SurfaceModel:
        return self.boundary[0].model

    def slice_ratios(self) -> np.ndarray:
        """Volume ratio of every time slice, (nt, nx)."""
        m = self.model
        return np.stack([density_ratio(m, row) for row in self.values])


@dataclass(frozen=True)
class ResidualReport:
    sup_norm: float
    l2_norm: float
    location_of_max: tuple
    per_slice_sup: np.ndarray


@dataclass(frozen=True)
class MomentMap:
    """Moment map sampled at cell edges; its divided difference is the density."""

    coordinates: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SymplecticPotential:
    """Dual potential of a (shift-normalized) slice on a uniform moment grid."""

    model_kind: ModelKind
    total_area: float
    moment_nodes: np.ndarray
    values: np.ndarray
    _dual: "object"


# ---------------------------------------------------------------------------
# stencils shared by residual, c11 and the Newton solver
# ---------------------------------------------------------------------------

def _first_diff_matrix(model: SurfaceModel) -> sp.csr_matrix:
    """Second-order d/dzeta; periodic on the torus, one-sided at sphere edges."""
    n = model.grid.count
    h = model.grid.spacing
    if model.grid.periodic:
        M = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format="lil")
        M[0, n - 1] = -1.0
        M[n - 1, 0] = 1.0
        return (M / (2.0 * h)).tocsr()
    M = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format="lil")
    M[0, 0], M[0, 1], M[0, 2] = -3.0, 4.0, -1.0
    M[n - 1, n - 1], M[n - 1, n - 2], M[n - 1, n - 3] = 3.0, -4.0, 1.0
    return (M / (2.0 * h)).tocsr()


def _halved_flux_matrix(model: SurfaceModel) -> sp.csr_matrix:
    """Matrix of f -> (c f')' / (2 b), the density perturbation operator."""
    n = model.grid.count
    h = model.grid.spacing
    scale = 1.0 / (2.0 * model.b * h * h)
    if model.grid.periodic:
        M = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="lil")
        M[0, n - 1] = 1.0
        M[n - 1, 0] = 1.0
        return (M * scale).tocsr()
    ch = model.c_half
    lower = ch[1:n]
    main = -(ch[:n] + ch[1:])
    upper = ch[1:n]
    M = sp.diags([lower, main, upper], [-1, 0, 1], shape=(n, n))
    return (M * scale).tocsr()


def _time_second_diff(values: np.ndarray, dt: float) -> np.ndarray:
    return (values[2:] + values[:-2] - 2.0 * values[1:-1]) / (dt * dt)


def _mixed_diff(values: np.ndarray, Sx: sp.csr_matrix, dt: float) -> np.ndarray:
    dx = (Sx @ values.T).T
    return (dx[2:] - dx[:-2]) / (2.0 * dt)


def hcma_residual(strip: StripSolution) -> ResidualReport:
    """Discrete determinant defect of the geodesic equation at interior nodes."""
    model = strip.model
    V = strip.values
    dt = strip.grid.dt
    Sx = _first_diff_matrix(model)
    rho = strip.slice_ratios()
    cb = model.c_nodes / (2.0 * model.b)
    Phi_tt = _time_second_diff(V, dt)
    Phi_tz = _mixed_diff(V, Sx, dt)
    R = Phi_tt * rho[1:-1] - cb[None, :] * Phi_tz ** 2
    absR = np.abs(R)
    flat = int(np.argmax(absR))
    j, k = np.unravel_index(flat, absR.shape)
    per_slice = np.zeros(strip.grid.nt)
    per_slice[1:-1] = absR.max(axis=1)
    l2 = float(np.sqrt(np.sum(R * R) * model.grid.spacing * dt))
    return ResidualReport(
        sup_norm=float(absR.max()),
        l2_norm=l2,
        location_of_max=(int(j + 1), int(k)),
        per_slice_sup=per_slice,
    )


def c11_seminorm(strip: StripSolution) -> float:
    """Max of all pure and mixed divided second differences on interior nodes."""
    model = strip.model
    V = strip.values
    dt = strip.grid.dt
    h = model.grid.spacing
    tt = np.abs(_time_second_diff(V, dt))
    if model.grid.periodic:
        zz = np.abs((np.roll(V, -1, axis=1) + np.roll(V, 1, axis=1) - 2.0 * V) / (h * h))
    else:
        zz = np.abs((V[:, 2:] + V[:, :-2] - 2.0 * V[:, 1:-1]) / (h * h))
    Sx = _first_diff_matrix(model)
    tz = np.abs(_mixed_diff(V, Sx, dt))
    return float(max(tt.max(), zz.max(), tz.max()))


def _build_solution(grid, phi0, phi1, values, method, epsilon=None) -> StripSolution:
    values = np.asarray(values, dtype=float)
    values[0] = phi0.values
    values[-1] = phi1.values
    model = phi0.model
    margin = min(float(np.min(density_ratio(model, row))) for row in values)
    if margin <= 0 and method == "legendre":
        raise NonMonotoneInversion(
            f"a Legendre slice lost positivity (margin {margin:.3g}); refine the grid"
        )
    sol = StripSolution(grid=grid, values=values, boundary=(phi0, phi1),
                        method=method, epsilon=epsilon, residual_sup=0.0,
                        c11=0.0, slice_margin=margin)
    rep = hcma_residual(sol)
    return replace(sol, residual_sup=rep.sup_norm, c11=c11_seminorm(sol))


def manufactured_strip(grid: StripGrid, phi0: Potential, phi1: Potential,
                       values: np.ndarray) -> StripSolution:
    """Wrap raw strip values (e.g. a non-solution path) with full diagnostics."""
    return _build_solution(grid, phi0, phi1, np.array(values, dtype=float), "manufactured")


# ---------------------------------------------------------------------------
# moment map / dual potential machinery
# ---------------------------------------------------------------------------

def moment_map(model: SurfaceModel, phi: Potential) -> MomentMap:
    """Moment map of the deformed form, sampled at cell edges.

    The construction pairs exactly with the flux-form density: the divided
    difference of the returned values reproduces the density at the enclosed
    node to machine precision, and monotonicity is equivalent to positivity.
    On the sphere the edge values at the poles are exactly +-area/2.
    """
    vals = phi.values
    h = model.grid.spacing
    if model.grid.periodic:
        A = model.total_area
        edges = h * (np.arange(model.grid.count) + 0.5)
        flux = (np.roll(vals, -1) - vals) / h
        m = A * edges + 0.5 * flux
    else:
        L = model.moment_half_length
        edges = -L + h * np.arange(model.grid.count + 1)
        flux = np.zeros(model.grid.count + 1)
        flux[1:-1] = model.c_half[1:-1] * np.diff(vals) / h
        m = 2.0 * np.pi * edges + 0.5 * flux
    if np.any(np.diff(m) <= 0):
        raise NotKahlerError(phi.margin)
    return MomentMap(coordinates=edges, values=m)


class _TorusDual:
    """Dual-potential data of one torus slice, spectrally represented.

    Pairing: u(m) = m x - psi(x)/2 at m = psi'(x)/2, psi = A x^2 + phi.
    The periodic parts of x(m) and u(m) (relative to the flat slope and the
    flat quadratic) are stored as trigonometric interpolants over one moment
    period A.
    """

    def __init__(self, model: SurfaceModel, phi_values: np.ndarray, nm: int | None = None):
        A = model.total_area
        n = model.grid.count
        nm = nm or n
        f = TrigInterp(phi_values)
        self.A = A
        self._f = f

        def mhat(x):
            return A * x + 0.5 * f.derivative(x)

        def dmhat(x):
            return A + 0.5 * f.second_derivative(x)

        self.mhat = mhat
        self.dmhat = dmhat
        mg = A * np.arange(nm) / nm
        slope = np.max(np.abs(f.derivative(model.grid.nodes)))
        pad = (slope + 1.0) / A
        x = invert_monotone(mhat, dmhat, mg, mg / A - pad, mg / A + pad)
        psi = A * x * x + f(x)
        u = mg * x - 0.5 * psi
        self.moment_nodes = mg
        self.u_values = u
        self.x_periodic = TrigInterp(x - mg / A, period=A)
        self.u_periodic = TrigInterp(u - mg * mg / (2.0 * A), period=A)

    def x_of_m(self, m):
        return m / self.A + self.x_periodic(m)

    def dx_of_m(self, m):
        return 1.0 / self.A + self.x_periodic.derivative(m)

    def u_of_m(self, m):
        return m * m / (2.0 * self.A) + self.u_periodic(m)


class _SphereDual:
    """Dual-potential data of one sphere slice in the moment variable.

    Represented relative to the closed-form round background dual (the
    Guillemin potential), so the stored corrections are smooth up to the
    poles. Moment scaling matches moment_map: the interval is [-A/2, A/2].
    """

    def __init__(self, model: SurfaceModel, phi_values: np.ndarray, nm: int | None = None):
        A = model.total_area
        L = model.moment_half_length
        n = model.grid.count
        nm = nm or n
        nodes = model.grid.nodes
        self.A = A
        self.L = L
        g = gradient(model, phi_values)
        mhat_nodes = 2.0 * np.pi * nodes + np.pi * model.metric_factor(nodes) * g
        if np.any(np.diff(mhat_nodes) <= 0):
            raise NotKahlerError(float(np.min(density_ratio(model, phi_values))))
        # exact pole anchors: the metric factor vanishes there
        anchor_mu = np.concatenate(([-L], nodes, [L]))
        anchor_m = np.concatenate(([-A / 2.0], mhat_nodes, [A / 2.0]))
        self._mhat_spline = spline(anchor_mu, anchor_m)
        self._phi_spline = spline(anchor_mu, np.concatenate(
            ([self._pole_value(phi_values, left=True)], phi_values,
             [self._pole_value(phi_values, left=False)])))
        mg = -A / 2.0 + (A / nm) * (np.arange(nm) + 0.5)
        mu = invert_monotone(self._mhat_spline, self._mhat_spline.derivative(),
                             mg, np.full(nm, -L), np.full(nm, L))
        sigma = np.clip(mg / (2.0 * np.pi * L), -1 + 1e-15, 1 - 1e-15)
        xi = np.arctanh(np.clip(mu / L, -1 + 1e-15, 1 - 1e-15))
        xi_bg = np.arctanh(sigma)
        F0 = -L * np.log1p(-np.clip(mu / L, -1 + 1e-15, 1 - 1e-15) ** 2)
        psi = F0 + self._phi_spline(mu)
        u = mg * xi - np.pi * psi
        u_bg = np.pi * L * ((1 + sigma) * np.log1p(sigma) + (1 - sigma) * np.log1p(-sigma))
        self.moment_nodes = mg
        self.u_values = u
        self.chi = spline(mg, xi - xi_bg)       # log-coordinate correction
        self.w = spline(mg, u - u_bg)           # dual-value correction

    @staticmethod
    def _pole_value(vals: np.ndarray, left: bool) -> float:
        # quadratic one-sided extrapolation to the cell edge (half step out)
        v = vals[:3] if left else vals[::-1][:3]
        return 1.875 * v[0] - 1.25 * v[1] + 0.375 * v[2]

    def xi_of_m(self, m):
        sigma = np.clip(m / (2.0 * np.pi * self.L), -1 + 1e-15, 1 - 1e-15)
        return np.arctanh(sigma) + self.chi(m)

    def dxi_of_m(self, m):
        sigma = np.clip(m / (2.0 * np.pi * self.L), -1 + 1e-15, 1 - 1e-15)
        return 1.0 / (2.0 * np.pi * self.L * (1.0 - sigma ** 2)) + self.chi.derivative()(m)

    def u_of_m(self, m):
        sigma = np.clip(m / (2.0 * np.pi * self.L), -1 + 1e-15, 1 - 1e-15)
        u_bg = np.pi * self.L * ((1 + sigma) * np.log1p(sigma)
                                 + (1 - sigma) * np.log1p(-sigma))
        return u_bg + self.w(m)


def symplectic_potential(model: SurfaceModel, phi: Potential) -> SymplecticPotential:
    """Legendre-dual potential of the slice on a uniform moment grid.

    The potential is shift-normalized first (constants do not move the
    metric), so equal metrics give identical duals. Discrete convexity of the
    samples is guaranteed by positivity of the slice density.
    """
    centered = phi.values - float(np.mean(phi.values))
    if model.kind is ModelKind.FLAT_TORUS:
        dual = _TorusDual(model, centered)
    else:
        dual = _SphereDual(model, centered)
    return SymplecticPotential(model_kind=model.kind, total_area=model.total_area,
                               moment_nodes=dual.moment_nodes, values=dual.u_values,
                               _dual=dual)


def inverse_legendre(model: SurfaceModel, sym: SymplecticPotential) -> np.ndarray:
    """Recover the (shift-normalized) potential from its dual samples."""
    dual = sym._dual
    if model.kind is ModelKind.FLAT_TORUS:
        A = model.total_area
        x = model.grid.nodes
        pad = A * (np.max(np.abs(dual.x_periodic(dual.moment_nodes))) + 0.5)
        m = invert_monotone(dual.x_of_m, dual.dx_of_m, x, A * x - pad, A * x + pad)
        psi = 2.0 * (m * x - dual.u_of_m(m))
        vals = psi - A * x * x
    else:
        A = model.total_area
        L = model.moment_half_length
        mu = model.grid.nodes
        xi_bar = np.arctanh(mu / L)
        m = invert_monotone(dual.xi_of_m, dual.dxi_of_m, xi_bar,
                            np.full(mu.size, -A / 2.0), np.full(mu.size, A / 2.0))
        F0 = -L * np.log1p(-(mu / L) ** 2)
        vals = (m * xi_bar - dual.u_of_m(m)) / np.pi - F0
    return vals - float(np.mean(vals))


# ---------------------------------------------------------------------------
# exact geodesic via linear interpolation of duals
# ---------------------------------------------------------------------------

def _check_grid(model: SurfaceModel, grid: StripGrid):
    base = grid.base
    if base.count != model.grid.count or abs(base.spacing - model.grid.spacing) > 0:
        raise ValueError("strip base grid does not match the model grid")


def legendre_geodesic(model: SurfaceModel, phi0: Potential, phi1: Potential,
                      grid: StripGrid) -> StripSolution:
    """Exact geodesic: slices are inversions of linearly interpolated duals."""
    if grid.geometry != "cylinder":
        raise ValueError("the Legendre device needs cylinder geometry")
    _check_grid(model, grid)
    nt = grid.nt
    values = np.empty((nt, model.grid.count))
    values[0] = phi0.values
    values[-1] = phi1.values
    times = grid.times
    if model.kind is ModelKind.FLAT_TORUS:
        d0 = _TorusDual(model, phi0.values)
        d1 = _TorusDual(model, phi1.values)
        A = model.total_area
        x = model.grid.nodes
        pad = A * (max(np.max(np.abs(d0.x_periodic(d0.moment_nodes))),
                       np.max(np.abs(d1.x_periodic(d1.moment_nodes)))) + 0.5)
        for j in range(1, nt - 1):
            t = times[j]

            def x_t(m):
                return m / A + (1 - t) * d0.x_periodic(m) + t * d1.x_periodic(m)

            def dx_t(m):
                return 1.0 / A + ((1 - t) * d0.x_periodic.derivative(m)
                                  + t * d1.x_periodic.derivative(m))

            m = invert_monotone(x_t, dx_t, x, A * x - pad, A * x + pad)
            u_t = (m * m / (2.0 * A) + (1 - t) * d0.u_periodic(m) + t * d1.u_periodic(m))
            values[j] = 2.0 * (m * x - u_t) - A * x * x
    else:
        d0 = _SphereDual(model, phi0.values)
        d1 = _SphereDual(model, phi1.values)
        A = model.total_area
        L = model.moment_half_length
        mu = model.grid.nodes
        xi_bar = np.arctanh(mu / L)
        F0 = -L * np.log1p(-(mu / L) ** 2)
        eps = 1e-12 * A
        for j in range(1, nt - 1):
            t = times[j]

            def xi_t(m):
                return ((1 - t) * d0.xi_of_m(m) + t * d1.xi_of_m(m))

            def dxi_t(m):
                return ((1 - t) * d0.dxi_of_m(m) + t * d1.dxi_of_m(m))

            m = invert_monotone(xi_t, dxi_t, xi_bar,
                                np.full(mu.size, -A / 2.0 + eps),
                                np.full(mu.size, A / 2.0 - eps))
            u_t = (1 - t) * d0.u_of_m(m) + t * d1.u_of_m(m)
            values[j] = (m * xi_bar - u_t) / np.pi - F0
    return _build_solution(grid, phi0, phi1, values, "legendre")


# ---------------------------------------------------------------------------
# regularized Newton continuation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 30
    schedule_start: float = 0.1
    schedule_ratio: float = 10.0


def _interior_residual(model, V, dt, Sx, Lx, cb):
    rho = 1.0 + (Lx @ V.T).T
    Phi_tt = _time_second_diff(V, dt)
    Phi_tz = _mixed_diff(V, Sx, dt)
    R = Phi_tt * rho[1:-1] - cb[None, :] * Phi_tz ** 2
    return R, rho, Phi_tt, Phi_tz


def epsilon_geodesic(model: SurfaceModel, phi0: Potential, phi1: Potential,
                     epsilon: float, grid: StripGrid,
                     newton: NewtonConfig | None = None) -> StripSolution:
    """Solve the epsilon-regularized problem by damped Newton with continuation.

    The determinant ratio is driven to epsilon (a fixed multiple of the
    product background volume). Continuation runs a geometric epsilon
    schedule down to the target; each stage starts from the previous one.
    The very first iterate is the linear interpolation of the endpoints plus
    a t(1-t) bowl sized so the starting residual is positive (ellipticity).
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must lie in (0, 1]")
    _check_grid(model, grid)
    cfg = newton or NewtonConfig()
    nt, nx = grid.nt, model.grid.count
    dt = grid.dt
    Sx = _first_diff_matrix(model)
    Lx = _halved_flux_matrix(model)
    cb = model.c_nodes / (2.0 * model.b)
    times = grid.times

    stages = [max(epsilon, cfg.schedule_start)]
    while stages[-1] > epsilon * (1.0 + 1e-12):
        stages.append(max(epsilon, stages[-1] / cfg.schedule_ratio))

    V = np.outer(1.0 - times, phi0.values) + np.outer(times, phi1.values)
    _, rho0, _, Phi_tz0 = _interior_residual(model, V, dt, Sx, Lx, cb)
    mix = float(np.max(cb[None, :] * Phi_tz0 ** 2)) if nt > 2 else 0.0
    kappa = (stages[0] + mix) / (2.0 * float(np.min(rho0)))
    V = V - kappa * (times * (1.0 - times))[:, None]

    ni = nt - 2
    T2 = sp.kron(sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(ni, ni)) / (dt * dt),
                 sp.identity(nx), format="csr")
    St = sp.kron(sp.diags([-1.0, 1.0], [-1, 1], shape=(ni, ni)) / (2.0 * dt),
                 Sx, format="csr")
    LxK = sp.kron(sp.identity(ni), Lx, format="csr")

    for stage_eps in stages:
        converged = False
        res_vec, rho, Phi_tt, Phi_tz = _interior_residual(model, V, dt, Sx, Lx, cb)
        res = float(np.max(np.abs(res_vec - stage_eps)))
        for _ in range(cfg.max_iter):
            if res < cfg.tol:
                converged = True
                break
            Dr = sp.diags(rho[1:-1].ravel())
            Dtt = sp.diags(Phi_tt.ravel())
            Dmix = sp.diags((-2.0 * cb[None, :] * Phi_tz).ravel())
            J = Dr @ T2 + Dtt @ LxK + Dmix @ St
            rhs = -(res_vec - stage_eps).ravel()
            step = spla.spsolve(J.tocsc(), rhs).reshape(ni, nx)
            s = 1.0
            accepted = False
            cone_blocked = True
            for _ in range(cfg.max_halvings):
                cand = V.copy()
                cand[1:-1] += s * step
                cand_rho = 1.0 + (Lx @ cand.T).T
                if np.min(cand_rho) <= 0.0:
                    s *= 0.5
                    continue
                cone_blocked = False
                cand_res_vec, crho, ctt, ctz = _interior_residual(model, cand, dt, Sx, Lx, cb)
                cand_res = float(np.max(np.abs(cand_res_vec - stage_eps)))
                if cand_res < res:
                    V = cand
                    res_vec, rho, Phi_tt, Phi_tz = cand_res_vec, crho, ctt, ctz
                    res = cand_res
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                if cone_blocked:
                    raise ConeExit(
                        f"Newton step leaves the positivity cone at eps={stage_eps:g}"
                    )
                raise NewtonDiverged(
                    f"backtracking exhausted at eps={stage_eps:g}, residual {res:.3g}"
                )
        if not converged and res >= cfg.tol:
            raise NewtonDiverged(
                f"no convergence after {cfg.max_iter} iterations at eps={stage_eps:g}"
            )
    return _build_solution(grid, phi0, phi1, V, "epsilon", epsilon=epsilon)
