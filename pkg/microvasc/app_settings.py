"""
Settings lookup. A settings file is a plain Python module whose upper-case
names carry the ``MICROVASC_`` prefix, e.g.::

    MICROVASC_GAMMA = 3.5
    MICROVASC_MAX_CONSUMPTION = 4.0
    MICROVASC_GRID_CELLS = (40, 40, 50)

Inside a Django project the same names may live in the project's settings
module instead. Every name not given falls back to the default listed in ``docs/settings.rst``,
which reproduces the reference parameterization.
"""
import os
import runpy
from dataclasses import MISSING, fields

from django.conf import LazySettings, global_settings, settings as django_settings

from .exceptions import ImproperlyConfigured
from .flow_solver import FlowParameters
from .growth import PHASES, GrowthParameters
from .linalg import DEFAULT_TOLERANCE, SOLVERS
from .network import DEFAULT_ENLARGEMENT, DEFAULT_LARGE_VESSEL_RADIUS, \
    DomainBox
from .oxygen_solver import OxygenParameters
from .rheology import RheologyParameters
from .tissue_grid import DEFAULT_ANGULAR_SAMPLES
from .units import MILLIMETER

PREFIX = "MICROVASC_"

_project_settings_registry = []

ROI_LOWER = (0.038 * MILLIMETER, 8.8e-4 * MILLIMETER, 8.8e-4 * MILLIMETER)
ROI_UPPER = (1.13 * MILLIMETER, 1.05 * MILLIMETER, 1.50 * MILLIMETER)

EXPORT_FORMATS = ('dgf', 'vtk', 'csv', 'json')

# Parameter group -> (dataclass field, setting name) pairs.
PARAMETER_SETTINGS = {
    RheologyParameters: (
        ('plasma_viscosity', 'PLASMA_VISCOSITY'),
        ('hematocrit', 'HEMATOCRIT'),
    ),
    FlowParameters: (
        ('tissue_permeability', 'TISSUE_PERMEABILITY'),
        ('interstitial_viscosity', 'INTERSTITIAL_VISCOSITY'),
        ('wall_conductivity', 'WALL_CONDUCTIVITY'),
        ('reflection_coefficient', 'REFLECTION_COEFFICIENT'),
        ('oncotic_plasma', 'ONCOTIC_PLASMA'),
        ('oncotic_interstitial', 'ONCOTIC_INTERSTITIAL'),
        ('water_density', 'WATER_DENSITY'),
    ),
    OxygenParameters: (
        ('vascular_diffusivity', 'VASCULAR_DIFFUSIVITY'),
        ('tissue_diffusivity', 'TISSUE_DIFFUSIVITY'),
        ('wall_permeability', 'WALL_PERMEABILITY'),
        ('max_consumption', 'MAX_CONSUMPTION'),
        ('half_consumption_po2', 'HALF_CONSUMPTION_PO2'),
        ('arterial_po2', 'ARTERIAL_PO2'),
        ('venous_po2', 'VENOUS_PO2'),
        ('damping', 'DAMPING'),
        ('tol', 'FIXED_POINT_TOL'),
        ('max_iter', 'FIXED_POINT_MAX_ITER'),
    ),
    GrowthParameters: tuple((f.name, f.name.upper())
        for f in fields(GrowthParameters)),
}

RUN_SETTINGS = {
    'INPUT': None,
    'OUTPUT_DIR': 'microvasc-output',
    'ROI_LOWER': ROI_LOWER,
    'ROI_UPPER': ROI_UPPER,
    'DOMAIN_ENLARGEMENT': DEFAULT_ENLARGEMENT,
    'GRID_CELLS': (20, 20, 20),
    'LARGE_VESSEL_RADIUS': DEFAULT_LARGE_VESSEL_RADIUS,
    'ANGULAR_SAMPLES': DEFAULT_ANGULAR_SAMPLES,
    'AXIAL_SAMPLES': None,
    'LINEAR_SOLVER': 'direct',
    'LINEAR_TOL': DEFAULT_TOLERANCE,
    'SEED': 0,
    'REPETITIONS': 20,
    'WORKERS': 1,
    'PHASES': PHASES,
    'EXPORT_FORMATS': EXPORT_FORMATS,
}


def known_settings():
    names = set(PREFIX + name for name in RUN_SETTINGS)
    for pairs in PARAMETER_SETTINGS.values():
        names.update(PREFIX + setting for _, setting in pairs)
    return names


def configure_settings(**options):
    """
    Returns a configured Django settings object holding ``options`` on top of
    Django's global defaults. Each call gives an independent object.
    """
    settings = LazySettings()
    settings.configure(global_settings, **options)
    return settings


def load_settings(path=None):
    """
    Reads a settings file into a Django settings object. Without a path the
    project's Django settings are used when they are configured; otherwise
    every lookup returns its default.
    """
    if path is None:
        if django_settings.configured:
            return django_settings
        return configure_settings()
    if not os.path.isfile(path):
        raise ImproperlyConfigured("Settings file %s does not exist." % path)
    try:
        namespace = runpy.run_path(path)
    except Exception as error:
        raise ImproperlyConfigured("Settings file %s could not be executed: "
            "%s" % (path, error))
    options = dict((name, value) for name, value in namespace.items()
        if name.isupper())
    unknown = sorted(name for name in options
        if name.startswith(PREFIX) and name not in known_settings())
    if unknown:
        raise ImproperlyConfigured("Unknown settings in %s: %s."
            % (path, ", ".join(unknown)))
    return configure_settings(**options)


def _get_setting(settings, project_setting_name, default=None,
        required=False):
    project_setting_name = PREFIX + project_setting_name
    if project_setting_name not in _project_settings_registry:
        _project_settings_registry.insert(0, project_setting_name)
    if required and default is None \
            and not hasattr(settings, project_setting_name):
        raise ImproperlyConfigured("The following setting is required: %s"
            % project_setting_name)
    return getattr(settings, project_setting_name, default)


def _build_parameters(cls, settings, overrides=None):
    overrides = overrides or {}
    kwargs = {}
    for field_info in fields(cls):
        setting = dict(PARAMETER_SETTINGS[cls])[field_info.name]
        default = field_info.default if field_info.default is not MISSING \
            else None
        value = _get_setting(settings, setting, default)
        if overrides.get(setting) is not None:
            value = overrides[setting]
        kwargs[field_info.name] = value
    try:
        return cls(**kwargs)
    except TypeError as error:
        raise ImproperlyConfigured("Invalid %s: %s" % (cls.__name__, error))


def get_rheology_parameters(settings, overrides=None):
    return _build_parameters(RheologyParameters, settings, overrides)


def get_flow_parameters(settings, overrides=None):
    return _build_parameters(FlowParameters, settings, overrides)


def get_oxygen_parameters(settings, overrides=None):
    return _build_parameters(OxygenParameters, settings, overrides)


def get_growth_parameters(settings, overrides=None):
    return _build_parameters(GrowthParameters, settings, overrides)


def get_run_setting(settings, name):
    return _get_setting(settings, name, RUN_SETTINGS[name])


def get_linear_solver(name):
    """
    Returns ``name`` if it is one of the sparse solvers. Allowed values are::

        'direct'
        'bicgstab'
        'gmres'

    """
    if name not in SOLVERS:
        raise ImproperlyConfigured(
            "The MICROVASC_LINEAR_SOLVER setting must be one of the "
            "following: %s." % ", ".join(sorted(SOLVERS))
        )
    return name


def get_region_of_interest(settings):
    lower = get_run_setting(settings, 'ROI_LOWER')
    upper = get_run_setting(settings, 'ROI_UPPER')
    try:
        return DomainBox(tuple(float(v) for v in lower),
            tuple(float(v) for v in upper))
    except (TypeError, ValueError) as error:
        raise ImproperlyConfigured("MICROVASC_ROI_LOWER/UPPER do not describe "
            "a box: %s" % error)


def get_grid_cells(value):
    try:
        cells = tuple(int(v) for v in value)
    except (TypeError, ValueError):
        cells = ()
    if len(cells) != 3:
        raise ImproperlyConfigured("MICROVASC_GRID_CELLS must hold three "
            "integers, got %r." % (value,))
    return cells


def get_phases(value):
    phases = tuple(int(p) for p in value)
    if not phases or any(p not in PHASES for p in phases) \
            or list(phases) != sorted(set(phases)):
        raise ImproperlyConfigured("MICROVASC_PHASES must be an increasing "
            "selection of %s, got %r." % (PHASES, value))
    return phases


def get_export_formats(value):
    formats = tuple(value)
    unknown = [f for f in formats if f not in EXPORT_FORMATS]
    if unknown:
        raise ImproperlyConfigured("MICROVASC_EXPORT_FORMATS must be drawn "
            "from %s, got %s." % (", ".join(EXPORT_FORMATS), ", ".join(unknown)))
    return formats
