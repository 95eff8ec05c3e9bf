"""
Unit conversions. Everything inside the package is SI (m, Pa, s); mmHg only
appears for partial pressures of oxygen and at the reporting boundary.
"""

PASCAL_PER_MMHG = 133.322
MICROMETER = 1.0e-6
MILLIMETER = 1.0e-3
MICROGRAM_PER_KILOGRAM = 1.0e9


def pa_to_mmhg(value):
    return value / PASCAL_PER_MMHG
