"""Circle-symmetric model surfaces: grids, densities, curvature, quadrature.

Two desk-scale models, both reduced to one real coordinate by the circle
symmetry:

* flat torus, coordinate x on [0, 1) (periodic), area form ``A dx dy``;
* round sphere, moment coordinate on [-L, L] with ``L = A / 4pi``, sampled
  cell-centered so the poles are cell edges and the degenerate metric factor
  vanishes exactly at the quadrature boundary (Guillemin closure).

Every symmetric Kahler form in the class is encoded by its node density
``d = b + (c phi')' / 2`` against the reduced coordinate, where (b, c) is
(A, 1) on the torus and (2pi, 2pi*H0) on the sphere, H0 the round metric
factor. ``d/b`` is the volume ratio against the background form; positivity
of that ratio is exactly membership in the space of Kahler potentials.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NotKahlerError


class ModelKind(str, enum.Enum):
    FLAT_TORUS = "flat_torus"
    ROUND_SPHERE = "round_sphere"


MIN_RESOLUTION = 16


@dataclass(frozen=True)
class GridS1:
    """Equispaced 1-d grid of the reduced coordinate."""

    count: int
    spacing: float
    periodic: bool
    nodes: np.ndarray

    def __post_init__(self):
        if self.count < MIN_RESOLUTION:
            raise ValueError(f"grid needs at least {MIN_RESOLUTION} nodes, got {self.count}")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        d = np.diff(self.nodes)
        if not (np.all(d > 0) and np.allclose(d, self.spacing, rtol=1e-12, atol=0)):
            raise ValueError("nodes must be strictly increasing and equispaced")

    @property
    def domain_length(self) -> float:
        # spacing * count is the domain length exactly in both constructions
        return self.spacing * self.count


@dataclass(frozen=True)
class SurfaceModel:
    """A reduced model surface plus the stencil data every operation shares."""

    kind: ModelKind
    total_area: float
    grid: GridS1
    background_density: np.ndarray
    # flux coefficient c at half nodes (length count+1; ends are the pole
    # values, exactly zero on the sphere) and at nodes
    c_half: np.ndarray = field(repr=False)
    c_nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.background_density <= 0):
            raise ValueError("background density must be strictly positive")
        total = integrate(self, np.ones(self.grid.count), against="omega")
        if abs(total - self.total_area) > 1e-12 * self.total_area:
            raise ValueError("background density does not integrate to the total area")

    @property
    def b(self) -> float:
        """Constant background density against the reduced coordinate."""
        return self.total_area / self.grid.domain_length

    @property
    def fiber_period(self) -> float:
        return 1.0 if self.kind is ModelKind.FLAT_TORUS else 2.0 * np.pi

    @property
    def moment_half_length(self) -> float:
        """L such that the sphere moment coordinate runs over [-L, L]."""
        if self.kind is not ModelKind.ROUND_SPHERE:
            raise ValueError("moment half-length only defined for the sphere")
        return self.total_area / (4.0 * np.pi)

    def metric_factor(self, zeta) -> np.ndarray:
        """H0 for the sphere (degenerating at the poles), 1 for the torus."""
        zeta = np.asarray(zeta, dtype=float)
        if self.kind is ModelKind.FLAT_TORUS:
            return np.ones_like(zeta)
        L = self.moment_half_length
        return (L * L - zeta * zeta) / L

    def background_scalar(self) -> float:
        if self.kind is ModelKind.FLAT_TORUS:
            return 0.0
        return 2.0 / self.moment_half_length

    def log_coordinate(self, zeta) -> np.ndarray:
        """Complex-affine coordinate of the reduced point (x itself; arctanh on the sphere)."""
        zeta = np.asarray(zeta, dtype=float)
        if self.kind is ModelKind.FLAT_TORUS:
            return zeta
        return np.arctanh(zeta / self.moment_half_length)

    def background_potential(self, zeta) -> np.ndarray:
        """Local Kahler potential of the background form in the log coordinate."""
        zeta = np.asarray(zeta, dtype=float)
        if self.kind is ModelKind.FLAT_TORUS:
            A = self.total_area
            return A * zeta * zeta
        L = self.moment_half_length
        # 2L log cosh(xi), written in the moment coordinate for stability
        return -L * np.log1p(-((zeta / L) ** 2))


def make_model(kind: ModelKind | str, resolution: int, total_area: float) -> SurfaceModel:
    """Build the flat torus or round sphere at the given node count and area."""
    kind = ModelKind(kind)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION}, got {resolution}")
    if not total_area > 0:
        raise ValueError("total_area must be positive")
    n = int(resolution)
    if kind is ModelKind.FLAT_TORUS:
        spacing = 1.0 / n
        nodes = spacing * np.arange(n)
        grid = GridS1(count=n, spacing=spacing, periodic=True, nodes=nodes)
        bg = np.full(n, total_area)
        c_half = np.ones(n + 1)
        c_nodes = np.ones(n)
    else:
        L = total_area / (4.0 * np.pi)
        spacing = 2.0 * L / n
        nodes = -L + spacing * (np.arange(n) + 0.5)
        grid = GridS1(count=n, spacing=spacing, periodic=False, nodes=nodes)
        bg = np.full(n, 2.0 * np.pi)
        edges = -L + spacing * np.arange(n + 1)
        H_half = (L * L - edges * edges) / L
        H_half[0] = 0.0
        H_half[-1] = 0.0
        c_half = 2.0 * np.pi * H_half
        c_nodes = 2.0 * np.pi * (L * L - nodes * nodes) / L
    return SurfaceModel(kind=kind, total_area=total_area, grid=grid,
                        background_density=bg, c_half=c_half, c_nodes=c_nodes)


def flux_divergence(model: SurfaceModel, f: np.ndarray) -> np.ndarray:
    """Second-order flux-form operator (c f')' on the grid.

    Torus: periodic wrap. Sphere: the half-node coefficient vanishes at both
    poles, so the boundary flux is exactly zero.
    """
    f = np.asarray(f, dtype=float)
    h = model.grid.spacing
    if model.grid.periodic:
        return (np.roll(f, -1) - 2.0 * f + np.roll(f, 1)) / (h * h)
    flux = np.zeros(f.size + 1)
    flux[1:-1] = model.c_half[1:-1] * np.diff(f) / h
    return np.diff(flux) / h


def gradient(model: SurfaceModel, f: np.ndarray) -> np.ndarray:
    """Second-order first derivative; one-sided closure at the sphere's end cells."""
    f = np.asarray(f, dtype=float)
    h = model.grid.spacing
    if model.grid.periodic:
        return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * h)
    g = np.empty_like(f)
    g[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    g[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    g[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return g


def density(model: SurfaceModel, phi_values: np.ndarray) -> np.ndarray:
    """Density of the deformed form against the reduced coordinate.

    No positivity is enforced; callers decide what a non-metric means.
    """
    phi_values = np.asarray(phi_values, dtype=float)
    if phi_values.shape != (model.grid.count,):
        raise ValueError("potential values must live on the model grid")
    return model.b + 0.5 * flux_divergence(model, phi_values)


def density_ratio(model: SurfaceModel, phi_values: np.ndarray) -> np.ndarray:
    """Volume ratio of the deformed form against the background form."""
    return density(model, phi_values) / model.b


@dataclass(frozen=True)
class KahlerCheck:
    ok: bool
    margin: float


def is_kahler(model: SurfaceModel, phi_values: np.ndarray) -> KahlerCheck:
    """Positivity test; the margin is the minimum volume ratio."""
    margin = float(np.min(density_ratio(model, phi_values)))
    return KahlerCheck(ok=margin > 0.0, margin=margin)


@dataclass(frozen=True)
class Potential:
    """A symmetric Kahler potential with its cached (validated) density."""

    model: SurfaceModel
    values: np.ndarray
    density: np.ndarray

    @classmethod
    def from_values(cls, model: SurfaceModel, values) -> "Potential":
        values = np.array(values, dtype=float)
        d = density(model, values)
        if np.any(d <= 0):
            ratio = d / model.b
            raise NotKahlerError(float(np.min(ratio)), where=int(np.argmin(ratio)))
        return cls(model=model, values=values, density=d)

    @property
    def ratio(self) -> np.ndarray:
        return self.density / self.model.b

    @property
    def margin(self) -> float:
        return float(np.min(self.ratio))

    def shifted(self, constant: float) -> "Potential":
        return Potential(model=self.model, values=self.values + constant, density=self.density)


def scalar_curvature(model: SurfaceModel, phi: Potential) -> np.ndarray:
    """Scalar curvature of the deformed metric on the grid.

    Surface formula for a conformal change: s = (s0 - Lap0 log(rho)) / rho,
    with Lap0 the background Laplace-Beltrami operator in flux form. The
    divergence structure makes the discrete Gauss-Bonnet identity exact.
    """
    if not isinstance(phi, Potential):
        phi = Potential.from_values(model, phi)
    rho = phi.ratio
    log_rho = np.log(rho)
    lap = flux_divergence(model, log_rho) / model.b
    return (model.background_scalar() - lap) / rho


def average_scalar(model: SurfaceModel) -> float:
    """Class average of the scalar curvature, from the topology alone."""
    if model.kind is ModelKind.FLAT_TORUS:
        return 0.0
    return 8.0 * np.pi / model.total_area


def integrate(model: SurfaceModel, fieldvals: np.ndarray, against: str = "omega",
              phi: Potential | None = None) -> float:
    """Quadrature of a node field against the chosen volume form.

    Rectangle rule: exact for constants, spectrally accurate for smooth
    periodic integrands on the torus, midpoint rule on the sphere's
    cell-centered grid. Summation is numpy's fixed pairwise order, so
    results are bit-identical regardless of caller parallelism.
    """
    fieldvals = np.asarray(fieldvals, dtype=float)
    if fieldvals.shape != (model.grid.count,):
        raise ValueError("field must live on the model grid")
    if against == "omega":
        weight = model.background_density
    elif against == "omega_phi":
        if phi is None:
            raise ValueError("integrating against omega_phi requires the potential")
        weight = phi.density
    else:
        raise ValueError(f"unknown measure {against!r}")
    return float(model.grid.spacing * np.sum(fieldvals * weight))


def moment_map_values(model: SurfaceModel, phi_values: np.ndarray) -> np.ndarray:
    """Moment map of the deformed form, canonical constant.

    The discrete derivative equals the density; along geodesic leaves this
    quantity is conserved exactly (it is the half gradient of the full local
    potential in the log coordinate, times the fiber period).
    """
    phi_values = np.asarray(phi_values, dtype=float)
    g = gradient(model, phi_values)
    if model.kind is ModelKind.FLAT_TORUS:
        return model.total_area * model.grid.nodes + 0.5 * g
    return 2.0 * np.pi * model.grid.nodes + np.pi * model.metric_factor(model.grid.nodes) * g
