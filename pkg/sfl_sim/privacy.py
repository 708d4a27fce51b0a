"""(epsilon, delta)-local differential privacy for model updates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .const import DEFAULT_EPSILON, DEFAULT_SENSITIVITY
from .exceptions import SpecificationError
from .model import ParameterVector, as_parameter_vector

_LOGGER = logging.getLogger(__name__)


def calibrate_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Gaussian mechanism scale S * sqrt(2 ln(1.25 / delta)) / epsilon."""
    _validate(epsilon, delta, sensitivity)
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def _validate(epsilon: float, delta: float, sensitivity: float) -> None:
    if not epsilon > 0:
        msg = f"epsilon must be positive, got {epsilon}"
        raise SpecificationError(msg)
    if not 0 < delta < 1:
        msg = f"delta must lie in (0, 1), got {delta}"
        raise SpecificationError(msg)
    if not sensitivity > 0:
        msg = f"sensitivity must be positive, got {sensitivity}"
        raise SpecificationError(msg)


@dataclass(frozen=True)
class PrivacyParams:
    """
    Privacy budget and the derived Gaussian noise scale.

    ``sensitivity`` may be ``math.inf`` to disable clipping; ``sigma_override``
    replaces the calibrated scale (0 switches the noise off).
    """

    epsilon: float = DEFAULT_EPSILON
    delta: float = math.exp(-5)
    sensitivity: float = DEFAULT_SENSITIVITY
    sigma_override: float | None = None

    def __post_init__(self) -> None:
        """Validate the budget."""
        _validate(self.epsilon, self.delta, self.sensitivity)
        if self.sigma_override is not None and not self.sigma_override >= 0:
            msg = f"sigma_override must be non-negative, got {self.sigma_override}"
            raise SpecificationError(msg)
        if math.isinf(self.sensitivity) and self.sigma_override is None:
            msg = "Unbounded sensitivity needs an explicit sigma_override"
            raise SpecificationError(msg)

    @property
    def sigma(self) -> float:
        """Noise standard deviation per coordinate."""
        if self.sigma_override is not None:
            return self.sigma_override
        return calibrate_sigma(self.epsilon, self.delta, self.sensitivity)


@dataclass(frozen=True, eq=False)
class PerturbedUpdate:
    """A clipped, noised update as submitted by a device."""

    values: ParameterVector
    was_clipped: bool
    device_id: str

    def __post_init__(self) -> None:
        """Freeze the values."""
        values = as_parameter_vector(self.values).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        """Number of parameters."""
        return int(self.values.shape[0])


def clip_update(update: ParameterVector, sensitivity: float) -> tuple[ParameterVector, bool]:
    """Scale ``update`` to L2 norm at most ``sensitivity``, keeping its direction."""
    if not sensitivity > 0:
        msg = f"sensitivity must be positive, got {sensitivity}"
        raise SpecificationError(msg)
    vector = as_parameter_vector(update)
    norm = float(np.linalg.norm(vector))
    if norm <= sensitivity:
        return vector.copy(), False
    return vector * (sensitivity / norm), True


def perturb(
    update: ParameterVector,
    params: PrivacyParams,
    rng: np.random.Generator,
    device_id: str = "",
) -> PerturbedUpdate:
    """Clip to the sensitivity bound, then add N(0, sigma^2) to every coordinate."""
    clipped, was_clipped = clip_update(update, params.sensitivity)
    sigma = params.sigma
    if sigma > 0:
        noisy = clipped + sigma * rng.standard_normal(clipped.shape[0])
    else:
        noisy = clipped
    if was_clipped:
        _LOGGER.debug("Clipped update of %s to norm %s", device_id, params.sensitivity)
    return PerturbedUpdate(values=noisy, was_clipped=was_clipped, device_id=device_id)
