"""
The 1D vascular graph: nodes, straight cylindrical segments, boundary data,
the axis aligned domain boxes the graph lives in, and the DGF reader/writer.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import networkx as nx
import numpy as np

from .exceptions import ParseError, StateError, TopologyError, ValidationError
from .units import MICROMETER

logger = logging.getLogger(__name__)

DEFAULT_ENLARGEMENT = 0.10
DEFAULT_LARGE_VESSEL_RADIUS = 4.5 * MICROMETER

# Keywords of the DGF blocks we understand. Blocks we do not understand are
# skipped up to their terminating '#' line.
_DGF_HEADER = 'DGF'
_DGF_VERTEX = 'VERTEX'
_DGF_SIMPLEX = 'SIMPLEX'
_DGF_SKIPPED = ('BOUNDARYDOMAIN', 'BOUNDARYSEGMENTS', 'GRIDPARAMETER',
    'CUBE', 'INTERVAL', 'PROJECTION')


class NodeKind(str, Enum):
    BOUNDARY = 'boundary'
    INNER = 'inner'


class VesselLabel(str, Enum):
    ARTERY = 'artery'
    VEIN = 'vein'


@dataclass
class NetworkNode:
    id: int
    position: np.ndarray
    kind: NodeKind = NodeKind.INNER
    boundary_pressure: float = None
    boundary_po2: float = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.boundary_pressure is not None:
            self.boundary_pressure = float(self.boundary_pressure)
            if self.boundary_pressure <= 0.0:
                raise ValidationError(
                    "Boundary pressure of node %d must be positive, got %r."
                    % (self.id, self.boundary_pressure)
                )
            self.kind = NodeKind.BOUNDARY
        elif self.kind == NodeKind.BOUNDARY:
            raise ValidationError(
                "Boundary node %d has no boundary pressure." % self.id
            )

    @property
    def is_boundary(self):
        return self.kind == NodeKind.BOUNDARY

    def make_inner(self):
        self.kind = NodeKind.INNER
        self.boundary_pressure = None
        self.boundary_po2 = None

    def make_boundary(self, pressure, po2=None):
        if pressure is None or pressure <= 0.0:
            raise ValidationError(
                "Boundary pressure of node %d must be positive, got %r."
                % (self.id, pressure)
            )
        self.kind = NodeKind.BOUNDARY
        self.boundary_pressure = float(pressure)
        self.boundary_po2 = None if po2 is None else float(po2)


@dataclass(frozen=True)
class Segment:
    id: int
    node_a: int
    node_b: int
    radius: float

    def __post_init__(self):
        if self.node_a == self.node_b:
            raise TopologyError(
                "Segment %d is a self loop at node %d." % (self.id, self.node_a)
            )
        if not self.radius > 0.0:
            raise ValidationError(
                "Segment %d has a non-positive radius %r." % (self.id, self.radius)
            )

    @property
    def nodes(self):
        return (self.node_a, self.node_b)

    def other(self, node_id):
        if node_id == self.node_a:
            return self.node_b
        if node_id == self.node_b:
            return self.node_a
        raise TopologyError(
            "Node %d is not an endpoint of segment %d." % (node_id, self.id)
        )


@dataclass(frozen=True)
class DomainBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != 3 or len(upper) != 3:
            raise ValidationError("Domain boxes are three dimensional.")
        if not all(lo < hi for lo, hi in zip(lower, upper)):
            raise ValidationError(
                "Box lower corner %r must lie below upper corner %r."
                % (lower, upper)
            )
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    @property
    def extent(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.extent))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, points, strict=False, tol=0.0):
        """
        Tests points (shape ``(3,)`` or ``(n, 3)``) against the box. With
        ``strict`` the faces themselves are outside.
        """
        points = np.asarray(points, dtype=float)
        lo, hi = self.lo, self.hi
        if strict:
            inside = (points > lo + tol) & (points < hi - tol)
        else:
            inside = (points >= lo - tol) & (points <= hi + tol)
        return np.all(inside, axis=-1)

    def split(self, counts):
        """
        Splits the box into ``counts[0] * counts[1] * counts[2]`` equal sub
        boxes. The x index varies slowest.
        """
        counts = tuple(int(c) for c in counts)
        edges = [np.linspace(self.lower[a], self.upper[a], counts[a] + 1)
            for a in range(3)]
        boxes = []
        for i in range(counts[0]):
            for j in range(counts[1]):
                for k in range(counts[2]):
                    boxes.append(DomainBox(
                        (edges[0][i], edges[1][j], edges[2][k]),
                        (edges[0][i + 1], edges[1][j + 1], edges[2][k + 1]),
                    ))
        return boxes

    def clip_segment(self, start, end):
        """
        Liang-Barsky clipping of the straight segment ``start -> end``.
        Returns the parameter interval ``(t0, t1)`` inside the closed box, or
        ``None`` if the segment misses it.
        """
        start = np.asarray(start, dtype=float)
        direction = np.asarray(end, dtype=float) - start
        t0, t1 = 0.0, 1.0
        for axis in range(3):
            lo, hi = self.lower[axis], self.upper[axis]
            if direction[axis] == 0.0:
                if start[axis] < lo or start[axis] > hi:
                    return None
                continue
            ta = (lo - start[axis]) / direction[axis]
            tb = (hi - start[axis]) / direction[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return None
        return t0, t1

    def to_dict(self):
        return {'lower': list(self.lower), 'upper': list(self.upper)}


def enlarge_domain(roi, factor=DEFAULT_ENLARGEMENT):
    """
    Grows every axis of ``roi`` by ``factor`` times its extent at both ends.
    """
    if factor < 0.0:
        raise ValidationError("Enlargement factor must be non-negative.")
    margin = factor * roi.extent
    return DomainBox(tuple(roi.lo - margin), tuple(roi.hi + margin))


class VascularNetwork(object):
    """
    A geometric graph of nodes and straight cylindrical segments.

    ``adjacency`` maps every node id to the ids of its incident segments and
    is kept consistent by ``add_segment`` / ``remove_segment``; do not edit
    ``nodes``, ``segments`` or ``adjacency`` by hand.
    """

    def __init__(self):
        self.nodes = {}
        self.segments = {}
        self.adjacency = {}
        self._next_node_id = 0
        self._next_segment_id = 0

    def __repr__(self):
        return "<VascularNetwork: %d nodes, %d segments>" % (
            len(self.nodes), len(self.segments)
        )

    @property
    def number_of_segments(self):
        return len(self.segments)

    def add_node(self, position, boundary_pressure=None, boundary_po2=None,
            node_id=None):
        if node_id is None:
            node_id = self._next_node_id
        if node_id in self.nodes:
            raise TopologyError("Node %d already exists." % node_id)
        node = NetworkNode(node_id, position,
            boundary_pressure=boundary_pressure, boundary_po2=boundary_po2)
        if boundary_pressure is None:
            node.boundary_po2 = None
        self.nodes[node_id] = node
        self.adjacency[node_id] = []
        self._next_node_id = max(self._next_node_id, node_id + 1)
        return node

    def add_segment(self, node_a, node_b, radius, segment_id=None):
        for node_id in (node_a, node_b):
            if node_id not in self.nodes:
                raise TopologyError(
                    "Segment references unknown node %d." % node_id
                )
        if segment_id is None:
            segment_id = self._next_segment_id
        if segment_id in self.segments:
            raise TopologyError("Segment %d already exists." % segment_id)
        segment = Segment(segment_id, node_a, node_b, float(radius))
        if not np.linalg.norm(self.nodes[node_b].position
                - self.nodes[node_a].position) > 0.0:
            raise ValidationError(
                "Segment %d between nodes %d and %d has zero length."
                % (segment_id, node_a, node_b)
            )
        self.segments[segment_id] = segment
        self.adjacency[node_a].append(segment_id)
        self.adjacency[node_b].append(segment_id)
        self._next_segment_id = max(self._next_segment_id, segment_id + 1)
        return segment

    def remove_segment(self, segment_id, prune_orphans=True):
        segment = self.segments.pop(segment_id)
        for node_id in segment.nodes:
            self.adjacency[node_id].remove(segment_id)
            if prune_orphans and not self.adjacency[node_id]:
                self.remove_node(node_id)
        return segment

    def remove_node(self, node_id):
        if self.adjacency[node_id]:
            raise TopologyError(
                "Node %d still has incident segments." % node_id
            )
        del self.adjacency[node_id]
        return self.nodes.pop(node_id)

    def degree(self, node_id):
        return len(self.adjacency[node_id])

    def incident(self, node_id):
        return sorted(self.adjacency[node_id])

    def neighbours(self, node_id):
        return sorted(self.segments[s].other(node_id)
            for s in self.adjacency[node_id])

    def shares_node(self, segment_id, node_ids):
        return bool(set(self.segments[segment_id].nodes) & set(node_ids))

    def endpoints(self, segment_id):
        segment = self.segments[segment_id]
        return (self.nodes[segment.node_a].position,
            self.nodes[segment.node_b].position)

    def segment_geometry(self, segment_id):
        return segment_geometry(self, segment_id)

    def node_ids(self):
        return sorted(self.nodes)

    def segment_ids(self):
        return sorted(self.segments)

    def node_index(self):
        """Maps node ids to consecutive row indices, in id order."""
        return dict((node_id, i) for i, node_id in enumerate(self.node_ids()))

    def positions(self):
        ids = self.node_ids()
        if not ids:
            return np.zeros((0, 3))
        return np.array([self.nodes[i].position for i in ids])

    def boundary_nodes(self):
        return [i for i in self.node_ids() if self.nodes[i].is_boundary]

    def segment_arrays(self):
        """
        Returns ``(ids, a, b, radius, length)`` arrays in segment id order,
        with ``a``/``b`` as row indices of ``node_ids()``.
        """
        index = self.node_index()
        ids = self.segment_ids()
        a = np.array([index[self.segments[s].node_a] for s in ids], dtype=int)
        b = np.array([index[self.segments[s].node_b] for s in ids], dtype=int)
        radius = np.array([self.segments[s].radius for s in ids], dtype=float)
        positions = self.positions()
        if ids:
            length = np.linalg.norm(positions[b] - positions[a], axis=1)
        else:
            length = np.zeros(0)
        return np.array(ids, dtype=int), a, b, radius, length

    def to_graph(self):
        graph = nx.Graph()
        for node_id, node in self.nodes.items():
            graph.add_node(node_id, boundary=node.is_boundary)
        for segment in self.segments.values():
            graph.add_edge(segment.node_a, segment.node_b, segment=segment.id,
                radius=segment.radius)
        return graph

    def components(self):
        return [set(c) for c in nx.connected_components(self.to_graph())]

    def check_adjacency(self):
        """
        Raises ``TopologyError`` if ``adjacency`` disagrees with the segment
        list.
        """
        expected = dict((node_id, []) for node_id in self.nodes)
        for segment in self.segments.values():
            for node_id in segment.nodes:
                if node_id not in expected:
                    raise TopologyError(
                        "Segment %d references unknown node %d."
                        % (segment.id, node_id)
                    )
                expected[node_id].append(segment.id)
        for node_id, incident in expected.items():
            if sorted(incident) != sorted(self.adjacency.get(node_id, [])):
                raise TopologyError(
                    "Adjacency of node %d is inconsistent." % node_id
                )

    def copy(self):
        clone = VascularNetwork()
        for node_id in self.node_ids():
            node = self.nodes[node_id]
            copied = clone.add_node(node.position.copy(),
                boundary_pressure=node.boundary_pressure, node_id=node_id)
            copied.boundary_po2 = node.boundary_po2
        for segment_id in self.segment_ids():
            segment = self.segments[segment_id]
            clone.add_segment(segment.node_a, segment.node_b, segment.radius,
                segment_id=segment_id)
        clone._next_node_id = self._next_node_id
        clone._next_segment_id = self._next_segment_id
        return clone

    def to_dict(self):
        return {
            'nodes': [{
                'id': node.id,
                'position': [float(x) for x in node.position],
                'kind': node.kind.value,
                'boundary_pressure': node.boundary_pressure,
                'boundary_po2': node.boundary_po2,
            } for node in (self.nodes[i] for i in self.node_ids())],
            'segments': [{
                'id': segment.id,
                'node_a': segment.node_a,
                'node_b': segment.node_b,
                'radius': segment.radius,
            } for segment in (self.segments[i] for i in self.segment_ids())],
            'next_node_id': self._next_node_id,
            'next_segment_id': self._next_segment_id,
        }

    @classmethod
    def from_dict(cls, data):
        net = cls()
        for item in data['nodes']:
            node = net.add_node(item['position'],
                boundary_pressure=item.get('boundary_pressure'),
                node_id=int(item['id']))
            node.boundary_po2 = item.get('boundary_po2')
        for item in data['segments']:
            net.add_segment(int(item['node_a']), int(item['node_b']),
                float(item['radius']), segment_id=int(item['id']))
        net._next_node_id = max(net._next_node_id,
            int(data.get('next_node_id', 0)))
        net._next_segment_id = max(net._next_segment_id,
            int(data.get('next_segment_id', 0)))
        return net


def segment_geometry(net, segment_id):
    """
    Returns ``(length, orientation)`` of a segment; the orientation points
    from ``node_a`` to ``node_b``.
    """
    if segment_id not in net.segments:
        raise TopologyError("Unknown segment %d." % segment_id)
    start, end = net.endpoints(segment_id)
    delta = end - start
    length = float(np.linalg.norm(delta))
    if not length > 0.0:
        raise ValidationError("Segment %d has zero length." % segment_id)
    return length, delta / length


def tip_orientation(net, node_id):
    """
    Unit vector along the single segment of a degree-1 node, pointing out of
    the vessel through the tip.
    """
    (segment_id,) = net.adjacency[node_id]
    other = net.segments[segment_id].other(node_id)
    delta = net.nodes[node_id].position - net.nodes[other].position
    return delta / np.linalg.norm(delta)


def terminal_nodes(net, region):
    """
    Degree-1 nodes lying strictly inside ``region``. Inflow and outflow nodes
    of the segmented input sit on the faces of the domain and are therefore
    never returned.
    """
    return [node_id for node_id in net.node_ids()
        if net.degree(node_id) == 1
        and region.contains(net.nodes[node_id].position, strict=True)]


def classify_arterial_venous(net, flow, arterial_po2=75.0, venous_po2=38.0):
    """
    Labels every boundary node as artery or vein and assigns its boundary
    PO2. A boundary node is a vein when the mean velocity magnitude of its
    segment is strictly below the network-wide average velocity magnitude.

    Returns a dictionary ``node id -> VesselLabel``.
    """
    if flow is None:
        raise StateError("Arterial/venous classification needs a flow solution.")
    speeds = flow.segment_speeds()
    missing = set(net.segments) - set(speeds)
    if missing:
        raise StateError(
            "The flow solution does not cover segments %s."
            % sorted(missing)[:10]
        )
    average = float(np.mean([speeds[s] for s in net.segments])) \
        if net.segments else 0.0
    labels = {}
    for node_id in net.boundary_nodes():
        incident = net.incident(node_id)
        if not incident:
            continue
        node = net.nodes[node_id]
        if speeds[incident[0]] < average:
            labels[node_id] = VesselLabel.VEIN
            node.boundary_po2 = float(venous_po2)
        else:
            labels[node_id] = VesselLabel.ARTERY
            node.boundary_po2 = float(arterial_po2)
    logger.info("Classified %d arterial and %d venous boundary nodes.",
        sum(1 for l in labels.values() if l == VesselLabel.ARTERY),
        sum(1 for l in labels.values() if l == VesselLabel.VEIN))
    return labels


def extract_large_vessels(net, threshold=DEFAULT_LARGE_VESSEL_RADIUS):
    """
    Returns a copy holding only segments with ``radius >= threshold``.
    Nodes that lose all their segments are dropped; nodes that become
    terminal keep whatever boundary data they carried. Components left
    without any boundary node are dropped as well.
    """
    large = net.copy()
    for segment_id in net.segment_ids():
        if net.segments[segment_id].radius < threshold:
            large.remove_segment(segment_id)
    for component in large.components():
        if any(large.nodes[n].is_boundary for n in component):
            continue
        logger.warning("Dropping a large-vessel component of %d node(s) "
            "without boundary pressure.", len(component))
        for node_id in sorted(component):
            if node_id not in large.nodes:
                continue
            for segment_id in large.incident(node_id):
                large.remove_segment(segment_id)
            if node_id in large.nodes:
                large.remove_node(node_id)
    logger.info("Extracted %d of %d segments with radius >= %.3g m.",
        large.number_of_segments, net.number_of_segments, threshold)
    return large


def clip_to_region(net, region, pressures=None, po2=None):
    """
    Geometric intersection of the network with ``region``.

    Segments with both endpoints inside are kept unchanged, segments crossing
    a face are truncated at the face and the cut point becomes a new node
    carrying the boundary data of the nearer original endpoint. If that
    endpoint is an inner node, ``pressures`` / ``po2`` (node id -> value, e.g.
    from the last solve) provide the data; without them the cut node stays
    inner.
    """
    pressures = pressures or {}
    po2 = po2 or {}
    clipped = VascularNetwork()
    clipped._next_node_id = net._next_node_id

    def keep_node(node_id):
        if node_id not in clipped.nodes:
            node = net.nodes[node_id]
            copied = clipped.add_node(node.position.copy(),
                boundary_pressure=node.boundary_pressure, node_id=node_id)
            copied.boundary_po2 = node.boundary_po2
        return node_id

    def cut_node(position, source_id):
        source = net.nodes[source_id]
        pressure = source.boundary_pressure
        oxygen = source.boundary_po2
        if pressure is None:
            pressure = pressures.get(source_id)
            oxygen = po2.get(source_id)
        if pressure is not None and pressure > 0.0:
            node = clipped.add_node(position, boundary_pressure=pressure)
            node.boundary_po2 = None if oxygen is None else float(oxygen)
        else:
            node = clipped.add_node(position)
        return node.id

    for segment_id in net.segment_ids():
        segment = net.segments[segment_id]
        start, end = net.endpoints(segment_id)
        interval = region.clip_segment(start, end)
        if interval is None:
            continue
        t0, t1 = interval
        length = np.linalg.norm(end - start)
        if (t1 - t0) * length <= 1e-12 * max(length, 1.0):
            continue
        endpoints = []
        for t, own in ((t0, segment.node_a), (t1, segment.node_b)):
            if t in (0.0, 1.0):
                endpoints.append(keep_node(own))
                continue
            position = start + t * (end - start)
            nearer = segment.node_a if t < 0.5 else segment.node_b
            endpoints.append(cut_node(position, nearer))
        clipped.add_segment(endpoints[0], endpoints[1], segment.radius,
            segment_id=segment_id)
    return clipped


def parse_dgf(stream):
    """
    Reads a network from a DGF character stream.

    Understood layout::

        DGF
        Vertex
        parameters 1
        x y z [pressure]
        ...
        #
        SIMPLEX
        parameters 1
        node_a node_b radius
        ...
        #
        BOUNDARYDOMAIN
        default 1
        #

    Node ids are the zero based vertex order, segment ids the simplex order.
    Vertices with a positive pressure are boundary nodes; a pressure of 0.0
    (or no pressure column) marks an inner node. Lines starting with ``%``
    are comments; lines starting with ``#`` close the current block.
    """
    net = VascularNetwork()
    block = None
    saw_vertices = False
    pending = []
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith('%'):
            continue
        if line.startswith('#'):
            block = None
            continue
        keyword = line.split()[0].upper()
        if keyword == _DGF_HEADER:
            continue
        if keyword == _DGF_VERTEX:
            block = _DGF_VERTEX
            saw_vertices = True
            continue
        if keyword == _DGF_SIMPLEX:
            block = _DGF_SIMPLEX
            continue
        if keyword in _DGF_SKIPPED:
            block = keyword
            continue
        if keyword == 'PARAMETERS':
            continue
        if block == _DGF_VERTEX:
            values = _parse_floats(line, line_number)
            if len(values) < 3:
                raise ParseError(
                    "a vertex needs three coordinates, got %r" % line,
                    line_number,
                )
            pressure = values[3] if len(values) > 3 else None
            if pressure is not None and pressure < 0.0:
                raise ValidationError(
                    "line %d: negative boundary pressure %r"
                    % (line_number, pressure)
                )
            net.add_node(values[:3],
                boundary_pressure=pressure if pressure else None)
        elif block == _DGF_SIMPLEX:
            tokens = line.split()
            if len(tokens) < 3:
                raise ParseError(
                    "a segment needs two node indices and a radius, got %r"
                    % line, line_number,
                )
            try:
                node_a, node_b = int(tokens[0]), int(tokens[1])
                radius = float(tokens[2])
            except ValueError:
                raise ParseError("malformed segment row %r" % line, line_number)
            pending.append((line_number, node_a, node_b, radius))
        elif block in _DGF_SKIPPED:
            continue
        else:
            raise ParseError("data outside of any block: %r" % line, line_number)
    if not saw_vertices:
        raise ParseError("no Vertex block found")
    for line_number, node_a, node_b, radius in pending:
        if node_a == node_b:
            raise TopologyError(
                "line %d: segment is a self loop at node %d" % (line_number, node_a)
            )
        for node_id in (node_a, node_b):
            if node_id not in net.nodes:
                raise TopologyError(
                    "line %d: segment references unknown node %d"
                    % (line_number, node_id)
                )
        if not radius > 0.0:
            raise ValidationError(
                "line %d: non-positive radius %r" % (line_number, radius)
            )
        net.add_segment(node_a, node_b, radius)
    logger.info("Parsed DGF network with %d nodes (%d boundary) and %d segments.",
        len(net.nodes), len(net.boundary_nodes()), net.number_of_segments)
    return net


def _parse_floats(line, line_number):
    try:
        return [float(token) for token in line.split()]
    except ValueError:
        raise ParseError("malformed numeric row %r" % line, line_number)


def read_dgf(path):
    with open(path, 'r') as stream:
        return parse_dgf(stream)


def write_dgf(net, stream, header_lines=()):
    """
    Writes ``net`` in the layout read by ``parse_dgf``. Nodes and segments
    are renumbered consecutively in id order, so a parsed network round trips
    to identical ids. ``header_lines`` are written as ``%`` comments.
    """
    index = net.node_index()
    stream.write("DGF\n")
    for line in header_lines:
        stream.write("%% %s\n" % line)
    stream.write("Vertex\nparameters 1\n")
    for node_id in net.node_ids():
        node = net.nodes[node_id]
        pressure = node.boundary_pressure if node.is_boundary else 0.0
        stream.write("%s %s %s %s\n" % tuple(
            repr(float(v)) for v in (*node.position, pressure)
        ))
    stream.write("#\nSIMPLEX\nparameters 1\n")
    for segment_id in net.segment_ids():
        segment = net.segments[segment_id]
        stream.write("%d %d %s\n" % (
            index[segment.node_a], index[segment.node_b], repr(segment.radius)
        ))
    stream.write("#\nBOUNDARYDOMAIN\ndefault 1\n#\n")


def check_inside(net, domain, tol=1e-12):
    """
    Raises ``ValidationError`` if a node lies outside the closed ``domain``.
    """
    positions = net.positions()
    if not len(positions):
        return
    scale = tol * float(np.max(domain.extent))
    outside = ~domain.contains(positions, tol=scale)
    if np.any(outside):
        ids = [i for i, flag in zip(net.node_ids(), outside) if flag]
        raise ValidationError(
            "%d node(s) lie outside the domain, e.g. %s." % (len(ids), ids[:5])
        )
