import os
import shutil
import tempfile
import unittest
from unittest import mock

from django.core import exceptions as django_exceptions

from microvasc import app_settings
from microvasc.exceptions import ImproperlyConfigured
from microvasc.flow_solver import FlowParameters
from microvasc.growth import GrowthParameters
from microvasc.oxygen_solver import OxygenParameters
from microvasc.rheology import RheologyParameters
from microvasc.tests.factories import write_text
from microvasc.units import MILLIMETER


class AppSettingsTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.empty = app_settings.configure_settings()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def _settings_file(self, text):
        return write_text(self.directory, 'settings.py', text)

    def test_no_settings_file(self):
        settings = app_settings.load_settings(None)
        self.assertFalse(hasattr(settings, 'MICROVASC_GAMMA'))
        self.assertEqual(app_settings.get_growth_parameters(settings),
            GrowthParameters())

    def test_project_settings(self):
        project = app_settings.configure_settings(MICROVASC_GAMMA=2.5)
        with mock.patch.object(app_settings, 'django_settings', project):
            settings = app_settings.load_settings(None)
        self.assertIs(settings, project)
        self.assertEqual(app_settings.get_growth_parameters(settings).gamma, 2.5)

    def test_settings_are_independent(self):
        first = app_settings.configure_settings(MICROVASC_SEED=1)
        second = app_settings.configure_settings()
        self.assertEqual(app_settings.get_run_setting(first, 'SEED'), 1)
        self.assertEqual(app_settings.get_run_setting(second, 'SEED'), 0)

    def test_load_settings(self):
        path = self._settings_file(
            "import math\n"
            "MICROVASC_GAMMA = 3.5\n"
            "MICROVASC_GRID_CELLS = (4, 5, 6)\n"
            "OTHER_TOOL_OPTION = 1\n"
            "helper = math.pi\n"
        )
        settings = app_settings.load_settings(path)
        self.assertEqual(settings.MICROVASC_GAMMA, 3.5)
        self.assertEqual(settings.OTHER_TOOL_OPTION, 1)
        self.assertFalse(hasattr(settings, 'helper'))
        self.assertEqual(app_settings.get_run_setting(settings, 'GRID_CELLS'),
            (4, 5, 6))

    def test_missing_settings_file(self):
        with self.assertRaises(ImproperlyConfigured):
            app_settings.load_settings(os.path.join(self.directory, 'no.py'))

    def test_broken_settings_file(self):
        path = self._settings_file("MICROVASC_GAMMA = (\n")
        with self.assertRaises(ImproperlyConfigured):
            app_settings.load_settings(path)

    def test_unknown_setting(self):
        path = self._settings_file("MICROVASC_GAMA = 3.5\n")
        with self.assertRaises(ImproperlyConfigured) as raised:
            app_settings.load_settings(path)
        self.assertIn('MICROVASC_GAMA', str(raised.exception))

    def test_known_settings(self):
        names = app_settings.known_settings()
        for name in ('MICROVASC_FIXED_POINT_TOL', 'MICROVASC_HEMATOCRIT',
                'MICROVASC_LINK_MU', 'MICROVASC_MAX_ITER_P3',
                'MICROVASC_WORKERS', 'MICROVASC_ROI_UPPER'):
            self.assertIn(name, names)

    def test_defaults(self):
        self.assertEqual(app_settings.get_rheology_parameters(self.empty),
            RheologyParameters())
        self.assertEqual(app_settings.get_flow_parameters(self.empty), FlowParameters())
        self.assertEqual(app_settings.get_oxygen_parameters(self.empty),
            OxygenParameters())
        self.assertEqual(app_settings.get_growth_parameters(self.empty),
            GrowthParameters())

    def test_parameter_settings(self):
        settings = app_settings.configure_settings(MICROVASC_GAMMA=3.5,
            MICROVASC_FIXED_POINT_MAX_ITER=50, MICROVASC_WALL_CONDUCTIVITY=0.0)
        self.assertEqual(app_settings.get_growth_parameters(settings).gamma, 3.5)
        self.assertEqual(app_settings.get_oxygen_parameters(settings).max_iter,
            50)
        self.assertEqual(app_settings.get_flow_parameters(settings)
            .wall_conductivity, 0.0)

    def test_overrides(self):
        settings = app_settings.configure_settings(MICROVASC_GAMMA=3.5)
        params = app_settings.get_growth_parameters(settings, {'GAMMA': 2.5})
        self.assertEqual(params.gamma, 2.5)
        params = app_settings.get_growth_parameters(settings, {'GAMMA': None})
        self.assertEqual(params.gamma, 3.5)

    def test_invalid_parameter(self):
        with self.assertRaises(ImproperlyConfigured):
            app_settings.get_growth_parameters(
                app_settings.configure_settings(MICROVASC_GAMMA=5.0))
        with self.assertRaises(ImproperlyConfigured):
            app_settings.get_oxygen_parameters(
                app_settings.configure_settings(MICROVASC_DAMPING=0.0))

    def test_linear_solver(self):
        self.assertEqual(app_settings.get_linear_solver('gmres'), 'gmres')
        with self.assertRaises(ImproperlyConfigured) as raised:
            app_settings.get_linear_solver('cholesky')
        self.assertIn('bicgstab, direct, gmres', str(raised.exception))

    def test_region_of_interest(self):
        roi = app_settings.get_region_of_interest(self.empty)
        self.assertAlmostEqual(roi.lower[0], 0.038 * MILLIMETER)
        self.assertAlmostEqual(roi.upper[2], 1.50 * MILLIMETER)
        with self.assertRaises(ImproperlyConfigured):
            app_settings.get_region_of_interest(
                app_settings.configure_settings(MICROVASC_ROI_LOWER='x'))

    def test_grid_cells(self):
        self.assertEqual(app_settings.get_grid_cells(['4', 5, 6.0]), (4, 5, 6))
        for value in ((2, 2), ('a', 'b', 'c'), None):
            with self.assertRaises(ImproperlyConfigured):
                app_settings.get_grid_cells(value)

    def test_phases(self):
        self.assertEqual(app_settings.get_phases([1, 3]), (1, 3))
        for value in ((3, 1), (4,), (), (1, 1)):
            with self.assertRaises(ImproperlyConfigured):
                app_settings.get_phases(value)

    def test_export_formats(self):
        self.assertEqual(app_settings.get_export_formats(['vtk']), ('vtk',))
        with self.assertRaises(ImproperlyConfigured):
            app_settings.get_export_formats(['vtk', 'png'])

    def test_required_setting(self):
        with self.assertRaises(ImproperlyConfigured):
            app_settings._get_setting(self.empty, 'INPUT', required=True)
        self.assertIn('MICROVASC_INPUT', app_settings._project_settings_registry)

    def test_django_exception(self):
        with self.assertRaises(django_exceptions.ImproperlyConfigured):
            app_settings.get_linear_solver('cholesky')
