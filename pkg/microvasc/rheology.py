"""
Constitutive laws for blood in the 1D network: the in-vivo viscosity law
for a given discharge hematocrit and the Hagen-Poiseuille conductance.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ImproperlyConfigured
from .units import MICROMETER

# Diameters in the viscosity law are dimensionless multiples of this length.
REFERENCE_DIAMETER = 1.0 * MICROMETER
CELL_FREE_LAYER = 1.1
REFERENCE_HEMATOCRIT = 0.45


@dataclass(frozen=True)
class RheologyParameters:
    plasma_viscosity: float = 1.0e-3
    hematocrit: float = REFERENCE_HEMATOCRIT

    def __post_init__(self):
        if not self.plasma_viscosity > 0.0:
            raise ImproperlyConfigured(
                "MICROVASC_PLASMA_VISCOSITY must be positive, got %r."
                % self.plasma_viscosity
            )
        if not 0.0 <= self.hematocrit < 1.0:
            raise ImproperlyConfigured(
                "MICROVASC_HEMATOCRIT must lie in [0, 1), got %r."
                % self.hematocrit
            )


def relative_viscosity_045(diameter):
    """Relative apparent viscosity at the reference hematocrit 0.45."""
    d = np.asarray(diameter, dtype=float)
    return 6.0 * np.exp(-0.085 * d) + 3.2 - 2.44 * np.exp(-0.06 * d ** 0.645)


def hematocrit_exponent(diameter):
    d = np.asarray(diameter, dtype=float)
    shape = 1.0 / (1.0 + 1e-11 * d ** 12)
    return (0.8 + np.exp(-0.075 * d)) * (-1.0 + shape) + shape


def _hematocrit_ratio(exponent, hematocrit):
    """
    ``((1 - H)^C - 1) / (0.55^C - 1)``. ``C`` crosses zero near d = 8.5, so
    the ratio is evaluated through ``expm1`` and replaced by its limit
    ``log(1 - H) / log(0.55)`` where ``C`` vanishes.
    """
    exponent = np.asarray(exponent, dtype=float)
    log_h = np.log1p(-hematocrit)
    log_ref = np.log1p(-REFERENCE_HEMATOCRIT)
    limit = log_h / log_ref
    small = np.abs(exponent) < 1e-12
    safe = np.where(small, 1.0, exponent)
    ratio = np.expm1(safe * log_h) / np.expm1(safe * log_ref)
    return np.where(small, limit, ratio)


def in_vivo_viscosity(diameter, params=None):
    """
    Apparent blood viscosity in Pa s for the dimensionless vessel diameter
    ``diameter`` (physical diameter over 1 um)::

        mu = mu_p * (1 + (mu45 - 1) * ratio(H) * f**2) * f**2,
        f = d / (d - 1.1)

    Accepts scalars or arrays. Raises ``DomainError`` for d <= 1.1.
    """
    params = params or RheologyParameters()
    d = np.asarray(diameter, dtype=float)
    if np.any(~(d > CELL_FREE_LAYER)):
        raise DomainError(
            "The viscosity law needs diameters above %.1f um, got %r."
            % (CELL_FREE_LAYER, float(np.min(d)))
        )
    factor = (d / (d - CELL_FREE_LAYER)) ** 2
    ratio = _hematocrit_ratio(hematocrit_exponent(d), params.hematocrit)
    viscosity = params.plasma_viscosity * (
        1.0 + (relative_viscosity_045(d) - 1.0) * ratio * factor
    ) * factor
    if viscosity.ndim == 0:
        return float(viscosity)
    return viscosity


def segment_viscosity(radius, params=None):
    """Viscosity for a vessel of the given radius in metres."""
    return in_vivo_viscosity(2.0 * np.asarray(radius, dtype=float)
        / REFERENCE_DIAMETER, params)


def vessel_conductance(radius, length, viscosity):
    """
    Hagen-Poiseuille conductance ``pi R^4 / (8 mu l)`` in m^3/(Pa s).
    """
    radius = np.asarray(radius, dtype=float)
    length = np.asarray(length, dtype=float)
    viscosity = np.asarray(viscosity, dtype=float)
    for name, value in (('radius', radius), ('length', length),
            ('viscosity', viscosity)):
        if np.any(~(value > 0.0)):
            raise DomainError("Conductance needs a positive %s." % name)
    conductance = np.pi * radius ** 4 / (8.0 * viscosity * length)
    if conductance.ndim == 0:
        return float(conductance)
    return conductance
