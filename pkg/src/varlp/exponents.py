"""Construction and adaptation of pixel-wise exponent maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, DimensionMismatch
from .operators import LinearOperator
from .solvers import SolverConfig, StepSchedule, run
from .spaces import EXPONENT_GUARD, ExponentMap, as_signal, validate_exponent_map


@dataclass(frozen=True)
class InterpolationSpec:
    """Target exponent range for min-max interpolation of a source signal."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (EXPONENT_GUARD <= self.lower <= self.upper < np.inf):
            raise ConfigInvalid(
                f"need {EXPONENT_GUARD} <= lower <= upper < inf, got {self.lower}, {self.upper}")


def interpolate(source, spec: InterpolationSpec) -> ExponentMap:
    """Map ``|source|`` linearly onto ``[spec.lower, spec.upper]``.

    The smallest magnitude goes to ``lower`` and the largest to ``upper``;
    a flat source yields the constant map ``lower``.
    """
    mag = np.abs(as_signal(source, "source"))
    lo, hi = mag.min(), mag.max()
    if hi == lo:
        return validate_exponent_map(np.full(mag.size, spec.lower))
    t = (mag - lo) / (hi - lo)
    values = spec.lower + (spec.upper - spec.lower) * t
    return validate_exponent_map(np.clip(values, spec.lower, spec.upper))


def pilot_reconstruction(A: LinearOperator, y, p_const: float, epochs: int, mu: float,
                         num_subsets: int = 1, seed: int = 0, x0=None) -> np.ndarray:
    """Constant-step Banach SGD in l^p (with l^p data fit) from ``x0`` (zero)."""
    cfg = SolverConfig(
        algorithm="sgd_p", p=p_const, q=p_const,
        schedule=StepSchedule(mu, kind="constant"),
        num_subsets=num_subsets, epochs=epochs, seed=seed, x0=x0)
    x, _ = run(cfg, A, y)
    return x


def build_p_map(pilot, spec: InterpolationSpec) -> ExponentMap:
    return interpolate(pilot, spec)


def build_q_map(A: LinearOperator, p_map: ExponentMap, spec: InterpolationSpec) -> ExponentMap:
    """Interpolate the forward projection of the raw ``p_map`` values."""
    if len(p_map) != A.cols:
        raise DimensionMismatch("p_map does not match the operator columns")
    return interpolate(A.apply(p_map.values), spec)


def build_q_map_from_data(y, spec: InterpolationSpec) -> ExponentMap:
    """Interpolate the measured data directly (sinogram-driven exponents)."""
    return interpolate(y, spec)


def adapt_p_map(current, spec: InterpolationSpec) -> ExponentMap:
    return interpolate(current, spec)


def make_adapt_hook(spec: InterpolationSpec):
    """Hook for :func:`varlp.solvers.run` that re-derives ``p_map`` from ``x``."""

    def hook(epoch, x):
        return adapt_p_map(x, spec)

    return hook
