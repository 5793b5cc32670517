"""Exception types shared across the lab."""


class HcmaLabError(Exception):
    """Base class for all lab-specific failures."""


class NotKahlerError(HcmaLabError):
    """A potential fails the positivity condition. Carries the offending margin."""

    def __init__(self, margin: float, where: int | None = None):
        self.margin = float(margin)
        self.where = where
        loc = f" (worst node {where})" if where is not None else ""
        super().__init__(f"potential is not Kahler: min density ratio {margin:.6g}{loc}")


class PathLeavesCone(HcmaLabError):
    """A comparison path of potentials exits the positive-density cone."""


class NonMonotoneInversion(HcmaLabError):
    """A moment-map inversion lost strict monotonicity; discretization too coarse."""


class NewtonDiverged(HcmaLabError):
    """Damped Newton exhausted its iteration or backtracking budget."""


class ConeExit(HcmaLabError):
    """A Newton iterate's slice lost positivity and damping could not recover it."""


class EmptyRegularSet(HcmaLabError):
    """No grid node qualifies as regular; the leaf field is undefined everywhere."""


class LeftRegularSet(HcmaLabError):
    """A leaf trajectory entered the singular set and was truncated."""


class NonGraphical(HcmaLabError):
    """A leaf-lift sweep is not a monotone graph; slice integration impossible."""


class DegenerateLeaf(HcmaLabError):
    """Pullback density dropped below threshold; capacity undefined."""


class CalibrationFailed(HcmaLabError):
    """No constant up to the cap makes an inequality margin acceptable."""

    def __init__(self, which: str, worst_node: tuple, worst_margin: float):
        self.which = which
        self.worst_node = worst_node
        self.worst_margin = float(worst_margin)
        super().__init__(
            f"calibration failed for {which}: worst margin {worst_margin:.6g} at node {worst_node}"
        )


class ConfigError(HcmaLabError):
    """Experiment configuration failed validation."""
