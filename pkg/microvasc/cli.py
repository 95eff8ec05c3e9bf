"""
The ``microvasc`` command.

::

    microvasc solve --input network.dgf --output out/
    microvasc generate --input seed.dgf --output out/ --seed 7 [--sweep]
    microvasc stats --input seed.dgf --output out/ --repetitions 20 --workers 4
    microvasc export-vtk network.dgf network.vtk
    microvasc characteristics network.dgf

``solve``, ``generate`` and ``stats`` read an optional settings file
(``--settings``); flags override the file, the file overrides the defaults.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

from . import __version__
from . import app_settings
from .coupled import CoupledModel
from .exceptions import ImproperlyConfigured, InputNotFound, MicrovascError
from .export import Checkpointer, Provenance, config_hash, write_cell_csv, \
    write_csv, write_dgf_file, write_histogram_csv, write_network_json, \
    write_node_csv, write_segment_csv, write_trace_csv, write_vtk_grid, \
    write_vtk_network
from .flow_solver import FlowParameters
from .growth import GrowthParameters, NetworkGenerator
from .network import DomainBox, enlarge_domain, extract_large_vessels, \
    read_dgf
from .oxygen_solver import OxygenParameters
from .rheology import RheologyParameters
from .statistics import QUANTITIES, RunStatistics, length_histogram, \
    network_characteristics, radius_histogram, run_statistics, \
    running_means, summarize, tissue_averages
from .tissue_grid import build_grid

logger = logging.getLogger(__name__)

SWEEP_GAMMA = (3.0, 3.5)
SWEEP_CONSUMPTION = (3.0, 4.0)

STATISTICS_FILE = 'statistics.json'


@dataclass(frozen=True)
class RunConfig:
    input: str
    output_dir: str
    roi: DomainBox
    domain_enlargement: float
    grid_cells: tuple
    large_vessel_radius: float
    angular_samples: int
    axial_samples: object
    linear_solver: str
    linear_tol: float
    seed: int
    repetitions: int
    workers: int
    phases: tuple
    export_formats: tuple
    rheology: RheologyParameters
    flow: FlowParameters
    oxygen: OxygenParameters
    growth: GrowthParameters

    def validate(self):
        if self.input is None:
            raise ImproperlyConfigured("No input network given; use --input "
                "or MICROVASC_INPUT.")
        if self.domain_enlargement < 0.0:
            raise ImproperlyConfigured(
                "MICROVASC_DOMAIN_ENLARGEMENT must be non-negative.")
        if min(self.grid_cells) < 2:
            raise ImproperlyConfigured("MICROVASC_GRID_CELLS needs at least "
                "two cells per axis, got %r." % (self.grid_cells,))
        if self.angular_samples < 2:
            raise ImproperlyConfigured(
                "MICROVASC_ANGULAR_SAMPLES must be at least 2.")
        if self.axial_samples is not None and self.axial_samples < 2:
            raise ImproperlyConfigured(
                "MICROVASC_AXIAL_SAMPLES must be at least 2.")
        if not self.large_vessel_radius > 0.0:
            raise ImproperlyConfigured(
                "MICROVASC_LARGE_VESSEL_RADIUS must be positive.")
        if not self.linear_tol > 0.0:
            raise ImproperlyConfigured("MICROVASC_LINEAR_TOL must be positive.")
        if self.repetitions < 1:
            raise ImproperlyConfigured("MICROVASC_REPETITIONS must be at "
                "least 1.")
        if self.workers < 1:
            raise ImproperlyConfigured("MICROVASC_WORKERS must be at least 1.")
        app_settings.get_linear_solver(self.linear_solver)
        app_settings.get_phases(self.phases)
        app_settings.get_export_formats(self.export_formats)
        return self

    @property
    def domain(self):
        return enlarge_domain(self.roi, self.domain_enlargement)

    def as_dict(self):
        """Everything that influences results; the output location does not."""
        data = asdict(self)
        del data['output_dir']
        del data['workers']
        return data

    @property
    def hash(self):
        return config_hash(self.as_dict())

    def provenance(self, seed=None):
        return Provenance(self.hash, self.seed if seed is None else seed)

    def model(self):
        grid = build_grid(self.domain, self.grid_cells)
        return CoupledModel(grid, self.roi, self.rheology, self.flow,
            self.oxygen, n_angular=self.angular_samples,
            n_axial=self.axial_samples, linear_solver=self.linear_solver,
            linear_tol=self.linear_tol)

    def read_network(self):
        return read_input(self.input)


def build_run_config(args):
    """
    Combines the settings file named by ``args.settings`` with the command
    line overrides and validates the result.
    """
    settings = app_settings.load_settings(getattr(args, 'settings', None))

    def run_setting(name, flag):
        value = getattr(args, flag, None)
        if value is None:
            value = app_settings.get_run_setting(settings, name)
        return value

    overrides = {
        'GAMMA': getattr(args, 'gamma', None),
        'MAX_CONSUMPTION': getattr(args, 'm0', None),
    }
    config = RunConfig(
        input=run_setting('INPUT', 'input'),
        output_dir=run_setting('OUTPUT_DIR', 'output'),
        roi=app_settings.get_region_of_interest(settings),
        domain_enlargement=float(app_settings.get_run_setting(settings,
            'DOMAIN_ENLARGEMENT')),
        grid_cells=app_settings.get_grid_cells(run_setting('GRID_CELLS',
            'grid')),
        large_vessel_radius=float(run_setting('LARGE_VESSEL_RADIUS',
            'large_vessel_radius')),
        angular_samples=int(app_settings.get_run_setting(settings,
            'ANGULAR_SAMPLES')),
        axial_samples=app_settings.get_run_setting(settings, 'AXIAL_SAMPLES'),
        linear_solver=run_setting('LINEAR_SOLVER', 'linear_solver'),
        linear_tol=float(run_setting('LINEAR_TOL', 'linear_tol')),
        seed=int(run_setting('SEED', 'seed')),
        repetitions=int(run_setting('REPETITIONS', 'repetitions')),
        workers=int(run_setting('WORKERS', 'workers')),
        phases=app_settings.get_phases(run_setting('PHASES', 'phases')),
        export_formats=app_settings.get_export_formats(run_setting(
            'EXPORT_FORMATS', 'formats')),
        rheology=app_settings.get_rheology_parameters(settings),
        flow=app_settings.get_flow_parameters(settings),
        oxygen=app_settings.get_oxygen_parameters(settings, overrides),
        growth=app_settings.get_growth_parameters(settings, overrides),
    )
    args.resolved_output = config.output_dir
    return config.validate()


def _print_values(pairs):
    for name, value, unit in pairs:
        print("%-8s %.6g %s" % (name, value, unit))


# solve

def cmd_solve(args):
    config = build_run_config(args)
    net = config.read_network()
    model = config.model()
    solution = model.evaluate(net)
    po2_roi, p_t_roi, f_tv = tissue_averages(model.grid, solution.flow,
        solution.oxygen, config.roi)
    provenance = config.provenance()
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    formats = config.export_formats
    if 'vtk' in formats:
        write_vtk_network(net, os.path.join(out, 'network.vtk'), provenance,
            point_data={'p_v': solution.node_pressures(),
                'po2_v': solution.node_po2()},
            cell_data={'u_v': solution.flow.segment_velocities()})
        write_vtk_grid(model.grid, os.path.join(out, 'tissue.vtk'),
            provenance, {'p_t': solution.flow.p_t,
                'po2_t': solution.oxygen.po2_t, 'u_t': solution.flow.u_t})
    if 'csv' in formats:
        write_node_csv(net, os.path.join(out, 'nodes.csv'), provenance,
            solution.flow, solution.oxygen, solution.labels)
        write_segment_csv(net, os.path.join(out, 'segments.csv'), provenance,
            solution.flow)
        write_cell_csv(model.grid, os.path.join(out, 'cells.csv'), provenance,
            solution.flow, solution.oxygen)
        write_csv(os.path.join(out, 'summary.csv'),
            ['PO2_roi', 'p_t_roi', 'F_tv'], [[po2_roi, p_t_roi, f_tv]],
            provenance)
    if 'json' in formats:
        write_network_json(net, os.path.join(out, 'network.json'), provenance)
    if 'dgf' in formats:
        write_dgf_file(net, os.path.join(out, 'network.dgf'), provenance)
    _print_values([('PO2_roi', po2_roi, 'mmHg'), ('p_t_roi', p_t_roi, 'mmHg'),
        ('F_tv', f_tv, 'ug/s')])
    return 0


# generate

def generate_run(config, seed, directory, checkpoints=True):
    """
    One growth run from the large vessels of the input network. Writes the
    run's files into ``directory`` and returns its ``RunStatistics``.

    With ``checkpoints`` every growth iteration is saved under
    ``directory/checkpoints`` and a run interrupted earlier with the same
    configuration and seed continues from its newest checkpoint.
    """
    provenance = config.provenance(seed)
    model = config.model()
    checkpoint = None
    snapshot = None
    if checkpoints:
        checkpoint = Checkpointer(os.path.join(directory, 'checkpoints'),
            provenance)
        snapshot = checkpoint.latest()
    if snapshot is None:
        net = extract_large_vessels(config.read_network(),
            config.large_vessel_radius)
        generator = NetworkGenerator(net, model, config.growth, seed=seed,
            checkpoint=checkpoint)
        result = generator.run(config.phases)
    else:
        logger.info("Resuming from the checkpoint after phase %d, iteration "
            "%d.", snapshot.progress.phase, snapshot.progress.iteration)
        generator = NetworkGenerator.from_snapshot(snapshot, model,
            config.growth, checkpoint)
        result = generator.run(config.phases, resume=snapshot.progress)
    statistics = run_statistics(result, model.grid, config.roi)
    write_run_outputs(config, model, result, statistics, directory,
        provenance)
    return statistics


def write_run_outputs(config, model, result, statistics, directory,
        provenance):
    os.makedirs(directory, exist_ok=True)
    formats = config.export_formats
    network = result.network
    if 'dgf' in formats:
        write_dgf_file(network, os.path.join(directory, 'network.dgf'),
            provenance)
    if 'vtk' in formats:
        write_vtk_network(network, os.path.join(directory, 'network.vtk'),
            provenance, point_data={'p_v': result.solution.node_pressures(),
                'po2_v': result.solution.node_po2()})
        write_vtk_grid(model.grid, os.path.join(directory, 'tissue.vtk'),
            provenance, {'p_t': result.solution.flow.p_t,
                'po2_t': result.solution.oxygen.po2_t})
    if 'json' in formats:
        write_network_json(network, os.path.join(directory, 'network.json'),
            provenance)
    if 'csv' in formats:
        write_trace_csv(result.trace, os.path.join(directory,
            'po2_trace.csv'), provenance)
        write_csv(os.path.join(directory, 'statistics.csv'), QUANTITIES,
            [statistics.as_row()], provenance)
        if network.number_of_segments:
            write_histogram_csv(radius_histogram(network),
                os.path.join(directory, 'radius_histogram.csv'), provenance)
            write_histogram_csv(length_histogram(network),
                os.path.join(directory, 'length_histogram.csv'), provenance)
        else:
            logger.warning("The extracted network is empty; no histograms "
                "written.")
    with open(os.path.join(directory, STATISTICS_FILE), 'w') as stream:
        json.dump({'config_hash': provenance.config_hash,
            'seed': provenance.seed, 'version': provenance.version,
            'statistics': statistics.as_dict()}, stream, indent=2,
            sort_keys=True)
        stream.write("\n")


def sweep_configs(config):
    """The four (gamma, m0) combinations of the parameter study."""
    for gamma in SWEEP_GAMMA:
        for consumption in SWEEP_CONSUMPTION:
            yield gamma, consumption, replace(config,
                growth=replace(config.growth, gamma=gamma),
                oxygen=replace(config.oxygen, max_consumption=consumption))


def cmd_generate(args):
    config = build_run_config(args)
    out = config.output_dir
    if args.sweep:
        cases = [(gamma, consumption, case, os.path.join(out,
            "gamma_%s_m0_%s" % (gamma, consumption)))
            for gamma, consumption, case in sweep_configs(config)]
    else:
        cases = [(config.growth.gamma, config.oxygen.max_consumption, config,
            out)]
    rows = []
    for gamma, consumption, case, directory in cases:
        logger.info("Generating with gamma %s, m0 %s into %s.", gamma,
            consumption, directory)
        statistics = generate_run(case, case.seed, directory)
        rows.append([gamma, consumption] + statistics.as_row())
        _print_values(zip(QUANTITIES, statistics.as_row(),
            ('m', 'm^2', 'm^3', '', 'mmHg', 'mmHg', 'ug/s', '')))
    if args.sweep:
        write_csv(os.path.join(out, 'statistics.csv'), ['gamma', 'm0']
            + list(QUANTITIES), rows, config.provenance())
    return 0


# stats

def _load_finished(directory, config, seed):
    path = os.path.join(directory, STATISTICS_FILE)
    if not os.path.isfile(path):
        return None
    try:
        with open(path) as stream:
            data = json.load(stream)
    except ValueError:
        return None
    if data.get('config_hash') != config.hash or data.get('seed') != seed:
        return None
    return RunStatistics.from_dict(data['statistics'])


def _repetition(config, index):
    seed = config.seed + index
    directory = os.path.join(config.output_dir, "run_%d" % index)
    finished = _load_finished(directory, config, seed)
    if finished is not None:
        logger.info("Reusing finished repetition %d.", index)
        return finished
    return generate_run(config, seed, directory)


def run_repetitions(config):
    indices = list(range(config.repetitions))
    if config.workers == 1:
        return [_repetition(config, index) for index in indices]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_repetition, [config] * len(indices), indices))


def cmd_stats(args):
    config = build_run_config(args)
    samples = run_repetitions(config)
    out = config.output_dir
    provenance = config.provenance()
    write_csv(os.path.join(out, 'statistics.csv'), ['run', 'seed']
        + list(QUANTITIES), [[n, config.seed + n] + s.as_row()
        for n, s in enumerate(samples)], provenance)
    means = running_means(samples)
    write_csv(os.path.join(out, 'running_means.csv'), ['i'] + list(QUANTITIES),
        [[i + 1] + row for i, row in enumerate(means.rows())], provenance)
    summary = summarize(samples)
    write_csv(os.path.join(out, 'summary.csv'), ['quantity', 'mean', 'std'],
        [[name, mean, std] for name, (mean, std) in summary.items()],
        provenance)
    for name, (mean, std) in summary.items():
        print("%-8s %.6g +- %.3g" % (name, mean, std))
    return 0


# file conversions

def read_input(path):
    if not os.path.isfile(path):
        raise InputNotFound(path)
    return read_dgf(path)


def cmd_export_vtk(args):
    net = read_input(args.input)
    target = args.output or os.path.splitext(args.input)[0] + '.vtk'
    args.resolved_output = os.path.dirname(target)
    write_vtk_network(net, target)
    print(target)
    return 0


def cmd_characteristics(args):
    net = read_input(args.input)
    length, area, volume, count = network_characteristics(net)
    _print_values([('L', length, 'm'), ('A', area, 'm^2'),
        ('V', volume, 'm^3'), ('N_seg', count, '')])
    if args.output:
        write_csv(args.output, ['L', 'A', 'V', 'N_seg'],
            [[length, area, volume, count]])
    return 0


# entry point

def _add_run_arguments(parser):
    parser.add_argument('--settings', help="settings file (Python module)")
    parser.add_argument('--input', help="input network in DGF format")
    parser.add_argument('--output', help="output directory")
    parser.add_argument('--seed', type=int, help="master seed")
    parser.add_argument('--grid', type=int, nargs=3, metavar='N',
        help="tissue cells per axis")
    parser.add_argument('--linear-solver', choices=sorted(
        app_settings.SOLVERS))
    parser.add_argument('--linear-tol', type=float)
    parser.add_argument('--large-vessel-radius', type=float,
        help="large-vessel threshold in m")
    parser.add_argument('--gamma', type=float, help="Murray exponent")
    parser.add_argument('--m0', type=float,
        help="maximal oxygen consumption in mmHg/s")
    parser.add_argument('--phases', type=int, nargs='+')
    parser.add_argument('--formats', nargs='+',
        choices=app_settings.EXPORT_FORMATS)


def build_parser():
    parser = argparse.ArgumentParser(prog='microvasc', description="Coupled "
        "3D-1D blood flow and oxygen transport and stochastic growth of "
        "microvascular networks.")
    parser.add_argument('--version', action='version', version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    solve = commands.add_parser('solve', help="solve flow and oxygen")
    _add_run_arguments(solve)
    solve.set_defaults(func=cmd_solve)

    generate = commands.add_parser('generate', help="grow a network")
    _add_run_arguments(generate)
    generate.add_argument('--sweep', action='store_true',
        help="run every gamma in {3, 3.5} with every m0 in {3, 4}")
    generate.set_defaults(func=cmd_generate)

    stats = commands.add_parser('stats', help="repeated seeded growth runs")
    _add_run_arguments(stats)
    stats.add_argument('--repetitions', type=int)
    stats.add_argument('--workers', type=int)
    stats.set_defaults(func=cmd_stats)

    export = commands.add_parser('export-vtk', help="convert DGF to VTK")
    export.add_argument('input')
    export.add_argument('output', nargs='?')
    export.set_defaults(func=cmd_export_vtk)

    characteristics = commands.add_parser('characteristics',
        help="length, surface, volume and segment count of a network")
    characteristics.add_argument('input')
    characteristics.add_argument('--output', help="CSV file for the report")
    characteristics.set_defaults(func=cmd_characteristics)
    return parser


def configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s")


def error_report(error):
    context = error.context() if isinstance(error, MicrovascError) else {}
    return {'error': type(error).__name__, 'message': str(error),
        'context': context}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args)
    try:
        return args.func(args)
    except (MicrovascError, OSError) as error:
        report = json.dumps(error_report(error), sort_keys=True, default=str)
        sys.stderr.write(report + "\n")
        directory = getattr(args, 'resolved_output', None) \
            or getattr(args, 'output', None)
        if directory and os.path.isdir(directory):
            try:
                with open(os.path.join(directory, 'error.json'), 'w') \
                        as stream:
                    stream.write(report + "\n")
            except OSError as failure:
                logger.error("Could not write error.json: %s", failure)
        return 1


if __name__ == '__main__':
    sys.exit(main())
