"""Mabuchi energy by its defining path integral, plus diagnostics.

The energy of a potential is minus the path integral of
``phidot * (s - mu)`` against the moving volume form, over any admissible
path from the background to the potential. Linear paths are the default;
every sampled slice must stay in the positive cone or the computation is
refused (PathLeavesCone), never silently repaired.

``kenergy_closed_form`` carries the independent surface-case identity
(entropy plus background curvature terms) used as a cross-check oracle;
the path integral never calls it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotKahlerError, PathLeavesCone
from .geometry import (
    Potential,
    SurfaceModel,
    average_scalar,
    density,
    flux_divergence,
    integrate,
)


@dataclass(frozen=True)
class PathSpec:
    """A comparison path: linear, or two legs through a waypoint."""

    kind: str = "linear"
    steps: int = 64
    waypoint: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "two_leg"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.steps < 8:
            raise ValueError("need at least 8 Simpson steps")
        if self.kind == "two_leg" and self.waypoint is None:
            raise ValueError("two_leg path needs a waypoint")


@dataclass(frozen=True)
class KEnergyReport:
    value: float
    t_samples: np.ndarray
    E_of_t: np.ndarray
    second_differences: np.ndarray


def _simpson_weights(steps: int) -> np.ndarray:
    if steps % 2:
        steps += 1
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * steps)


def _slice_integrand(model: SurfaceModel, slice_values: np.ndarray,
                     phidot: np.ndarray, mu: float) -> float:
    d = density(model, slice_values)
    ratio = d / model.b
    if np.min(ratio) <= 0.0:
        raise PathLeavesCone(
            f"a path slice left the positive cone (min ratio {np.min(ratio):.3g})"
        )
    s = (model.background_scalar() - flux_divergence(model, np.log(ratio)) / model.b) / ratio
    h = model.grid.spacing
    return float(h * np.sum(phidot * (s - mu) * d))


def _leg_energy(model, start, end, steps, mu) -> float:
    """Simpson integral of one affine leg from start to end values."""
    w = _simpson_weights(steps)
    phidot = end - start
    total = 0.0
    for i, wi in enumerate(w):
        tau = i / (w.size - 1)
        total += wi * _slice_integrand(model, start + tau * phidot, phidot, mu)
    return -total


def kenergy(model: SurfaceModel, phi: Potential, path: PathSpec | None = None) -> float:
    """Mabuchi energy through the chosen path of potentials.

    The class average mu is topological and never recomputed per slice.
    """
    path = path or PathSpec()
    mu = average_scalar(model)
    zero = np.zeros(model.grid.count)
    if path.kind == "linear":
        return _leg_energy(model, zero, phi.values, path.steps, mu)
    waypoint = np.asarray(path.waypoint, dtype=float)
    ratio_w = density(model, waypoint) / model.b
    if np.min(ratio_w) <= 0.0:
        raise PathLeavesCone(
            f"two_leg waypoint is not Kahler (min ratio {np.min(ratio_w):.3g})"
        )
    half = max(4, path.steps // 2)
    return (_leg_energy(model, zero, waypoint, half, mu)
            + _leg_energy(model, waypoint, phi.values, half, mu))


def path_independence(model: SurfaceModel, phi: Potential,
                      path_a: PathSpec, path_b: PathSpec) -> float:
    """Absolute disagreement of the energy through two paths."""
    return abs(kenergy(model, phi, path_a) - kenergy(model, phi, path_b))


def kenergy_closed_form(model: SurfaceModel, phi: Potential) -> float:
    """Surface-case identity: 2 * entropy + background curvature terms.

    Independent of the path integral; the entropy term is a Jensen sum, so
    on the flat torus this is nonnegative summand by summand.
    """
    ratio = phi.ratio
    ent = integrate(model, ratio * np.log(ratio), against="omega")
    s0 = model.background_scalar()
    mu = average_scalar(model)
    lin = integrate(model, phi.values, against="omega")
    lin_phi = integrate(model, phi.values, against="omega_phi", phi=phi)
    return 2.0 * ent - s0 * lin + 0.5 * mu * (lin + lin_phi)


def kenergy_along(model: SurfaceModel, strip, steps: int = 64,
                  residual_threshold: float = 1e-2) -> KEnergyReport:
    """Energy of every time slice of a strip solution, with convexity data.

    second_differences are the raw centered differences of E(t) (undivided),
    the quantity whose sign expresses discrete convexity.
    """
    if strip.residual_sup > residual_threshold:
        raise ValueError(
            f"strip residual {strip.residual_sup:.3g} exceeds sanity threshold "
            f"{residual_threshold:g}; not a solution"
        )
    t = strip.grid.times
    energies = np.empty(strip.grid.nt)
    for j in range(strip.grid.nt):
        try:
            slice_phi = Potential.from_values(model, strip.values[j])
        except NotKahlerError as exc:
            raise PathLeavesCone(f"slice {j} of the strip exits the cone") from exc
        energies[j] = kenergy(model, slice_phi, PathSpec(steps=steps))
    second = energies[2:] + energies[:-2] - 2.0 * energies[1:-1]
    return KEnergyReport(value=float(energies[-1]), t_samples=t,
                         E_of_t=energies, second_differences=second)
