# Settings for a desk-scale growth study on a half millimetre cube.
# Pass with: microvasc stats --settings docs/example_settings.py --input seed.dgf

MICROVASC_ROI_LOWER = (0.0, 0.0, 0.0)
MICROVASC_ROI_UPPER = (5e-4, 5e-4, 5e-4)
MICROVASC_GRID_CELLS = (12, 12, 12)

MICROVASC_LINEAR_SOLVER = 'bicgstab'
MICROVASC_LINEAR_TOL = 1e-10

MICROVASC_GAMMA = 3.0
MICROVASC_MAX_CONSUMPTION = 4.0

MICROVASC_SEED = 42
MICROVASC_REPETITIONS = 10
MICROVASC_WORKERS = 4
MICROVASC_EXPORT_FORMATS = ('dgf', 'csv')
