"""
Writers for the output files: legacy ASCII VTK for the network and the tissue
grid, CSV tables, DGF and the JSON network form.

Every file starts with a provenance header (toolkit version, configuration
hash and master seed); nothing time dependent is written so that identical
runs produce identical files.
"""
import csv
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass

import numpy as np

from . import __version__
from .growth import GrowthSnapshot
from .network import write_dgf

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = re.compile(r"^p(\d+)_(\d+)\.json$")


def config_hash(settings):
    """sha256 of the canonical JSON form of a settings dictionary."""
    payload = json.dumps(settings, sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    seed: int
    version: str = __version__

    def lines(self):
        return [
            "microvasc %s" % self.version,
            "config sha256 %s" % self.config_hash,
            "master seed %d" % self.seed,
        ]

    def title(self):
        return "microvasc %s config %s seed %d" % (self.version,
            self.config_hash[:16], self.seed)


def _number(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _ensure_directory(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_csv(path, header, rows, provenance=None):
    _ensure_directory(path)
    with open(path, 'w', newline='') as stream:
        if provenance is not None:
            for line in provenance.lines():
                stream.write("# %s\n" % line)
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(v) if isinstance(v, (float, int,
                np.floating, np.integer)) and not isinstance(v, bool) else v
                for v in row])
    logger.debug("Wrote %s.", path)
    return path


def read_csv_rows(path):
    """Data rows of a CSV file written by ``write_csv``, header included."""
    with open(path, newline='') as stream:
        lines = [line for line in stream if not line.startswith('#')]
    return list(csv.reader(lines))


def write_vtk_network(net, path, provenance=None, point_data=None,
        cell_data=None):
    """
    Poly-line export: one line cell per segment, the radius as cell data and
    the mean radius of the incident segments as point data. ``point_data`` and
    ``cell_data`` add fields keyed by node id / segment id.
    """
    _ensure_directory(path)
    node_ids = net.node_ids()
    index = net.node_index()
    segment_ids = net.segment_ids()
    title = provenance.title() if provenance else "microvasc network"
    out = ["# vtk DataFile Version 3.0\n", title + "\n", "ASCII\n",
        "DATASET POLYDATA\n", "POINTS %d double\n" % len(node_ids)]
    for node_id in node_ids:
        out.append(" ".join(_number(x) for x in net.nodes[node_id].position)
            + "\n")
    out.append("LINES %d %d\n" % (len(segment_ids), 3 * len(segment_ids)))
    for segment_id in segment_ids:
        segment = net.segments[segment_id]
        out.append("2 %d %d\n" % (index[segment.node_a], index[segment.node_b]))

    point_fields = {'radius': dict((n, float(np.mean([net.segments[s].radius
        for s in net.adjacency[n]])) if net.adjacency[n] else 0.0)
        for n in node_ids)}
    point_fields.update(point_data or {})
    out.append("POINT_DATA %d\n" % len(node_ids))
    for name in sorted(point_fields):
        out += _scalar_block(name, [point_fields[name].get(n, 0.0)
            for n in node_ids])

    cell_fields = {'radius': dict((s, net.segments[s].radius)
        for s in segment_ids)}
    cell_fields.update(cell_data or {})
    out.append("CELL_DATA %d\n" % len(segment_ids))
    for name in sorted(cell_fields):
        out += _scalar_block(name, [cell_fields[name].get(s, 0.0)
            for s in segment_ids])
    with open(path, 'w') as stream:
        stream.writelines(out)
    logger.debug("Wrote %s.", path)
    return path


def _scalar_block(name, values):
    lines = ["SCALARS %s double 1\n" % name, "LOOKUP_TABLE default\n"]
    lines += [_number(v) + "\n" for v in values]
    return lines


def write_vtk_grid(grid, path, provenance=None, cell_data=None):
    """
    Structured points export of per-cell fields. VTK orders cells with x
    varying fastest, the reverse of the grid's own numbering.
    """
    _ensure_directory(path)
    title = provenance.title() if provenance else "microvasc tissue"
    nx, ny, nz = grid.shape
    out = ["# vtk DataFile Version 3.0\n", title + "\n", "ASCII\n",
        "DATASET STRUCTURED_POINTS\n",
        "DIMENSIONS %d %d %d\n" % (nx + 1, ny + 1, nz + 1),
        "ORIGIN %s\n" % " ".join(_number(v) for v in grid.box.lower),
        "SPACING %s\n" % " ".join(_number(v) for v in grid.spacing),
        "CELL_DATA %d\n" % grid.number_of_cells]
    for name in sorted(cell_data or {}):
        values = np.asarray(cell_data[name], dtype=float)
        if values.ndim == 2:
            out.append("VECTORS %s double\n" % name)
            ordered = values.reshape(grid.shape + (3,)).transpose(2, 1, 0, 3) \
                .reshape(-1, 3)
            out += [" ".join(_number(v) for v in row) + "\n"
                for row in ordered]
        else:
            out += _scalar_block(name,
                values.reshape(grid.shape).ravel(order='F'))
    with open(path, 'w') as stream:
        stream.writelines(out)
    logger.debug("Wrote %s.", path)
    return path


def write_node_csv(net, path, provenance=None, flow=None, oxygen=None,
        labels=None):
    pressures = flow.node_pressures() if flow is not None else {}
    po2 = oxygen.node_po2() if oxygen is not None else {}
    labels = labels or {}
    rows = []
    for node_id in net.node_ids():
        node = net.nodes[node_id]
        label = labels.get(node_id)
        rows.append([node_id] + [float(x) for x in node.position] + [
            node.kind.value,
            pressures.get(node_id, node.boundary_pressure or 0.0),
            po2.get(node_id, node.boundary_po2 or 0.0),
            label.value if label is not None else '',
        ])
    return write_csv(path, ['node', 'x', 'y', 'z', 'kind', 'p_v', 'po2_v',
        'label'], rows, provenance)


def write_segment_csv(net, path, provenance=None, flow=None):
    velocities = flow.segment_velocities() if flow is not None else {}
    rows = []
    for segment_id in net.segment_ids():
        segment = net.segments[segment_id]
        length, _ = net.segment_geometry(segment_id)
        rows.append([segment_id, segment.node_a, segment.node_b,
            segment.radius, length, velocities.get(segment_id, 0.0)])
    return write_csv(path, ['segment', 'node_a', 'node_b', 'radius', 'length',
        'u_v'], rows, provenance)


def write_cell_csv(grid, path, provenance=None, flow=None, oxygen=None):
    centers = grid.centers()
    columns = [('x', centers[:, 0]), ('y', centers[:, 1]), ('z', centers[:, 2])]
    if flow is not None:
        columns += [('p_t', flow.p_t), ('u_x', flow.u_t[:, 0]),
            ('u_y', flow.u_t[:, 1]), ('u_z', flow.u_t[:, 2])]
    if oxygen is not None:
        columns.append(('po2_t', oxygen.po2_t))
    header = ['cell'] + [name for name, _ in columns]
    rows = ([i] + [float(values[i]) for _, values in columns]
        for i in range(grid.number_of_cells))
    return write_csv(path, header, rows, provenance)


def write_network_json(net, path, provenance=None):
    _ensure_directory(path)
    payload = {'network': net.to_dict()}
    if provenance is not None:
        payload['provenance'] = {'version': provenance.version,
            'config_hash': provenance.config_hash, 'seed': provenance.seed}
    with open(path, 'w') as stream:
        json.dump(payload, stream, indent=2, sort_keys=True)
        stream.write("\n")
    return path


def write_dgf_file(net, path, provenance=None):
    _ensure_directory(path)
    with open(path, 'w') as stream:
        write_dgf(net, stream, provenance.lines() if provenance else ())
    logger.debug("Wrote %s.", path)
    return path


def write_histogram_csv(hist, path, provenance=None):
    rows = [[lower, upper, count] for lower, upper, count in hist.rows()]
    rows.append(['mean', hist.mean, ''])
    rows.append(['std', hist.std, ''])
    return write_csv(path, ['lower', 'upper', 'count'], rows, provenance)


def write_trace_csv(trace, path, provenance=None):
    rows = [[row.phase, row.iteration, row.po2_roi, row.segments,
        row.new_vessels, row.links, row.removed, row.terminals]
        for row in trace]
    return write_csv(path, ['phase', 'iteration', 'po2_roi', 'segments',
        'new_vessels', 'links', 'removed', 'terminals'], rows, provenance)


class Checkpointer(object):
    """
    Growth step callback writing ``checkpoints/p<phase>_<iteration>.dgf``
    plus a JSON sidecar holding the generator snapshot (network, trace, RNG
    state and phase progress) and, once oxygen was solved, an ``.npy`` file
    with the oxygen warm start. The sidecar is written last, so a sidecar on
    disk marks a complete checkpoint.
    """

    def __init__(self, directory, provenance=None):
        self.directory = directory
        self.provenance = provenance
        self.written = []

    def __call__(self, snapshot):
        progress = snapshot.progress
        row = snapshot.row
        stem = os.path.join(self.directory, "p%d_%03d" % (progress.phase,
            progress.iteration))
        write_dgf_file(snapshot.network, stem + '.dgf', self.provenance)
        warm_start = snapshot.warm_start()
        if warm_start is not None:
            np.save(stem + '.npy', warm_start)
        payload = snapshot.as_dict()
        payload.update({'po2_roi': row.po2_roi, 'segments': row.segments,
            'new_vessels': row.new_vessels, 'links': row.links,
            'removed': row.removed})
        if self.provenance is not None:
            payload.update({'config_hash': self.provenance.config_hash,
                'seed': self.provenance.seed})
        partial = stem + '.json.partial'
        with open(partial, 'w') as stream:
            json.dump(payload, stream, sort_keys=True)
        os.replace(partial, stem + '.json')
        self.written.append(stem)

    def stems(self):
        """Checkpoint stems on disk, oldest first."""
        if not os.path.isdir(self.directory):
            return []
        found = []
        for name in os.listdir(self.directory):
            match = CHECKPOINT_NAME.match(name)
            if match:
                found.append((int(match.group(1)), int(match.group(2)),
                    os.path.join(self.directory, name[:-len('.json')])))
        return [stem for _, _, stem in sorted(found)]

    def _matches(self, payload):
        if self.provenance is None:
            return True
        return payload.get('config_hash') == self.provenance.config_hash \
            and payload.get('seed') == self.provenance.seed

    def latest(self):
        """
        Returns the ``GrowthSnapshot`` of the newest readable checkpoint
        written under the same configuration hash and seed, or ``None``.
        """
        for stem in reversed(self.stems()):
            try:
                with open(stem + '.json') as stream:
                    payload = json.load(stream)
                warm_start = None
                if payload.get('oxygen') is not None:
                    warm_start = np.load(stem + '.npy')
            except (OSError, ValueError) as error:
                logger.warning("Skipping unreadable checkpoint %s: %s", stem,
                    error)
                continue
            if not self._matches(payload):
                logger.info("Checkpoint %s belongs to another configuration "
                    "or seed.", stem)
                continue
            try:
                return GrowthSnapshot.from_dict(payload, warm_start)
            except (KeyError, TypeError, ValueError) as error:
                logger.warning("Skipping incomplete checkpoint %s: %s", stem,
                    error)
        return None
