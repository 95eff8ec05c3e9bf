"""
Stochastic three phase network growth driven by the tissue oxygen field.

Phase 1 extends the large vessels, phase 2 adds fine vessels in oxygen poor
control volumes and links terminals, phase 3 prunes dead ends inside the
region of interest. Every step inserts new segments through a collision test
against the existing network.

All stochastic draws of one run come from a single ``numpy.random.Generator``.
Tips are processed in ascending node id and consume, in this order: the
length ratio, the two branch radii (bifurcations only), the small radius
redraws (phase 2 only), the random plane normal (degenerate bifurcations
only) and the length ratios of both branches. Linking then draws one
``d_x`` per terminal, again in ascending node id.
"""
import logging
import math
from dataclasses import asdict, astuple, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import erf

from .exceptions import DomainError, GrowthError, ImproperlyConfigured, \
    MicrovascError
from .network import VascularNetwork, clip_to_region, terminal_nodes, \
    tip_orientation
from .oxygen_solver import OxygenState
from .tissue_grid import perpendicular_basis
from .units import MICROMETER

logger = logging.getLogger(__name__)

PHASES = (1, 2, 3)


@dataclass(frozen=True)
class GrowthParameters:
    gamma: float = 3.0
    lambda_g: float = 1.0
    mu_r: float = 2.4
    sigma_r: float = 0.3
    p_th: float = 0.6
    large_radius: float = 4.5 * MICROMETER
    small_radius_mu: float = 2.75 * MICROMETER
    small_radius_sigma: float = 0.25 * MICROMETER
    min_radius: float = 2.0 * MICROMETER
    small_radius_switch: float = 3.0 * MICROMETER
    link_mu: float = 60.0 * MICROMETER
    link_sigma: float = 10.0 * MICROMETER
    cone_angle: float = 2.0 * math.pi / 3.0
    cv_per_axis: int = 4
    po2_stop: float = 36.5
    max_iter_p1: int = 35
    max_iter_p2: int = 35
    max_iter_p3: int = 15
    p3_terminal_stop: int = 10
    radius_sigma_divisor: float = 32.0
    rel_change_p1: float = 1e-2
    change_p2: float = 1e-3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ImproperlyConfigured(
                    "Growth parameter %s must be positive, got %r."
                    % (name, value)
                )
        if not 0.0 < self.p_th < 1.0:
            raise ImproperlyConfigured(
                "MICROVASC_P_TH must lie in (0, 1), got %r." % self.p_th)
        if not 2.0 <= self.gamma <= 4.0:
            raise ImproperlyConfigured(
                "MICROVASC_GAMMA must lie in [2, 4], got %r." % self.gamma)
        if self.min_radius > self.small_radius_switch:
            raise ImproperlyConfigured(
                "MICROVASC_MIN_RADIUS must not exceed "
                "MICROVASC_SMALL_RADIUS_SWITCH.")
        if self.cone_angle > 2.0 * math.pi:
            raise ImproperlyConfigured(
                "MICROVASC_CONE_ANGLE must not exceed 2 pi.")

    @property
    def cv_count(self):
        return self.cv_per_axis ** 3


def _normalize(vector):
    norm = np.linalg.norm(vector)
    if not norm > 0.0 or not np.isfinite(norm):
        return None
    return vector / norm


# Collision detection

def segment_distance(p1, q1, p2, q2):
    """
    Minimal distance between the segments ``p1 q1`` and ``p2 q2`` by the
    clamped closest point construction.
    """
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(np.dot(d1, d1))
    e = float(np.dot(d2, d2))
    f = float(np.dot(d2, r))
    eps = 1e-300
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = float(np.dot(d1, r))
        if e <= eps:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = float(np.dot(d1, d2))
            denom = a * e - b * b
            if denom > 1e-14 * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    closest_1 = p1 + s * d1
    closest_2 = p2 + t * d2
    return float(np.linalg.norm(closest_1 - closest_2))


class OctantIndex(object):
    """
    The domain split into 2 x 2 x 2 boxes, each holding the ids of the
    segments whose radius-inflated bounding box touches it. The outer faces
    of the octants are treated as unbounded so segments poking out of the
    domain are still registered.
    """

    def __init__(self, domain, counts=(2, 2, 2)):
        self.domain = domain
        self.boxes = domain.split(counts)
        self.members = [set() for _ in self.boxes]
        self._lower = np.array([b.lower for b in self.boxes])
        self._upper = np.array([b.upper for b in self.boxes])
        self._lower[np.isclose(self._lower, domain.lo)] = -np.inf
        self._upper[np.isclose(self._upper, domain.hi)] = np.inf
        self._where = {}

    @classmethod
    def from_network(cls, net, domain):
        index = cls(domain)
        for segment_id in net.segment_ids():
            start, end = net.endpoints(segment_id)
            index.add(segment_id, start, end, net.segments[segment_id].radius)
        return index

    def octants_for(self, start, end, radius):
        lo = np.minimum(start, end) - radius
        hi = np.maximum(start, end) + radius
        hits = np.all((lo <= self._upper) & (hi >= self._lower), axis=1)
        return np.flatnonzero(hits).tolist()

    def add(self, segment_id, start, end, radius):
        octants = self.octants_for(start, end, radius)
        for octant in octants:
            self.members[octant].add(segment_id)
        self._where[segment_id] = octants

    def discard(self, segment_id):
        for octant in self._where.pop(segment_id, ()):
            self.members[octant].discard(segment_id)

    def candidates(self, start, end, radius):
        found = set()
        for octant in self.octants_for(start, end, radius):
            found |= self.members[octant]
        return sorted(found)

    def __len__(self):
        return len(self._where)


def _collides_with(net, segment_ids, start, end, radius, shared_nodes):
    for segment_id in segment_ids:
        segment = net.segments[segment_id]
        if shared_nodes & set(segment.nodes):
            continue
        other_start, other_end = net.endpoints(segment_id)
        if segment_distance(start, end, other_start, other_end) \
                < radius + segment.radius:
            return segment_id
    return None


def collides(net, octants, start, end, radius, shared_nodes=()):
    """
    Returns the id of an existing segment that the candidate cylinder
    ``start -> end`` would hit, or ``None``. Segments sharing one of
    ``shared_nodes`` are exempt.
    """
    return _collides_with(net, octants.candidates(start, end, radius), start,
        end, radius, set(shared_nodes))


def collides_brute_force(net, start, end, radius, shared_nodes=()):
    return _collides_with(net, net.segment_ids(), start, end, radius,
        set(shared_nodes))


def check_and_insert(net, octants, node_a, target, radius,
        boundary_pressure=None, boundary_po2=None):
    """
    Inserts a segment from ``node_a`` to ``target`` unless it collides.

    ``target`` is either the id of an existing node (a link) or a position,
    in which case the new node is created with the given boundary data.
    Returns the new ``Segment`` or ``None`` when the candidate was rejected;
    a rejected candidate leaves network and index untouched.
    """
    start = net.nodes[node_a].position
    if isinstance(target, (int, np.integer)):
        end = net.nodes[int(target)].position
        shared = (node_a, int(target))
    else:
        end = np.asarray(target, dtype=float)
        shared = (node_a,)
    if collides(net, octants, start, end, radius, shared) is not None:
        return None
    if isinstance(target, (int, np.integer)):
        node_b = int(target)
    else:
        node = net.add_node(end, boundary_pressure=boundary_pressure)
        node.boundary_po2 = boundary_po2 if boundary_pressure else None
        node_b = node.id
    segment = net.add_segment(node_a, node_b, radius)
    octants.add(segment.id, start, end, radius)
    return segment


def find_collisions(net):
    """All pairs of segments without a shared node that overlap."""
    ids = net.segment_ids()
    pairs = []
    for i, first in enumerate(ids):
        a = net.segments[first]
        start_a, end_a = net.endpoints(first)
        for second in ids[i + 1:]:
            b = net.segments[second]
            if net.shares_node(second, a.nodes):
                continue
            start_b, end_b = net.endpoints(second)
            if segment_distance(start_a, end_a, start_b, end_b) \
                    < a.radius + b.radius:
                pairs.append((first, second))
    return pairs


# Directions, lengths and radii

def po2_gradient(grid, po2_t, position):
    """
    Tissue PO2 gradient at the cell containing ``position`` by central
    differences, one sided at the grid boundary.
    """
    field = np.asarray(po2_t).reshape(grid.shape)
    cells, _ = grid.locate(position)
    ijk = list(grid.unravel(int(cells[0])))
    gradient = np.zeros(3)
    for axis in range(3):
        n = grid.shape[axis]
        h = grid.spacing[axis]
        index = ijk[axis]
        lower, upper = max(index - 1, 0), min(index + 1, n - 1)
        a = list(ijk)
        b = list(ijk)
        a[axis] = lower
        b[axis] = upper
        gradient[axis] = (field[tuple(b)] - field[tuple(a)]) \
            / ((upper - lower) * h)
    return gradient


def growth_direction(gradient, parent_orientation, lambda_g=1.0):
    """
    ``normalize(normalize(grad) + lambda_g d_k)``. A vanishing gradient or
    a vanishing sum falls back to the parent orientation.
    """
    parent = _normalize(np.asarray(parent_orientation, dtype=float))
    pointing = _normalize(np.asarray(gradient, dtype=float))
    if pointing is None:
        return parent
    direction = _normalize(pointing + lambda_g * parent)
    return parent if direction is None else direction


def sample_length_ratio(rng, params):
    return float(rng.lognormal(params.mu_r, params.sigma_r))


def sample_length(parent_radius, rng, params=None):
    """Draws ``r ~ LogNormal(mu_r, sigma_r)`` and returns ``R r``."""
    params = params or GrowthParameters()
    if not parent_radius > 0.0:
        raise DomainError("Parent radius must be positive.")
    return parent_radius * sample_length_ratio(rng, params)


def bifurcation_probability(ratio, params):
    if not ratio > 0.0:
        raise DomainError("Length ratio must be positive, got %r." % ratio)
    return 0.5 + 0.5 * float(erf((math.log(ratio) - params.mu_r)
        / math.sqrt(2.0 * params.sigma_r ** 2)))


def bifurcation_decision(ratio, params=None):
    params = params or GrowthParameters()
    return bifurcation_probability(ratio, params) > params.p_th


def murray_radius(parent_radius, gamma):
    """The symmetric Murray radius ``2^(-1/gamma) R``."""
    return 2.0 ** (-1.0 / gamma) * parent_radius


def murray_branch_radii(parent_radius, gamma, rng, divisor=32.0,
        max_draws=1000):
    """
    Two independent draws from ``Normal(R_c, R_c / divisor)``, each redrawn
    until it lies in ``(0, parent_radius]``.
    """
    if not parent_radius > 0.0:
        raise DomainError("Parent radius must be positive.")
    center = murray_radius(parent_radius, gamma)
    radii = []
    for _ in range(2):
        for _ in range(max_draws):
            radius = float(rng.normal(center, center / divisor))
            if 0.0 < radius <= parent_radius:
                break
        else:
            radius = min(max(radius, center), parent_radius)
        radii.append(radius)
    return radii[0], radii[1]


class BifurcationAngles(NamedTuple):
    phi1: float
    phi2: float
    clamped: bool


def bifurcation_angles(parent_radius, radius_1, radius_2):
    """
    Minimum work branching angles::

        cos phi1 = (R^4 + R1^4 - R2^4) / (2 R^2 R1^2)

    and symmetrically for ``phi2``. Cosines outside [-1, 1] are clamped and
    reported through ``clamped``.
    """
    r4, a4, b4 = parent_radius ** 4, radius_1 ** 4, radius_2 ** 4
    cos_1 = (r4 + a4 - b4) / (2.0 * parent_radius ** 2 * radius_1 ** 2)
    cos_2 = (r4 + b4 - a4) / (2.0 * parent_radius ** 2 * radius_2 ** 2)
    clamped = not (-1.0 <= cos_1 <= 1.0 and -1.0 <= cos_2 <= 1.0)
    if clamped:
        logger.debug("Clamped bifurcation angle cosines (%.4f, %.4f).",
            cos_1, cos_2)
    return BifurcationAngles(math.acos(min(max(cos_1, -1.0), 1.0)),
        math.acos(min(max(cos_2, -1.0), 1.0)), clamped)


class BifurcationDirections(NamedTuple):
    d_b1: np.ndarray
    d_b2: np.ndarray
    normal: np.ndarray
    kept: int
    degenerate: bool


def bifurcation_normal(parent_orientation, growth_dir, rng=None):
    """
    Normal of the bifurcation plane, ``d_k x d_g`` normalized. For parallel
    vectors a random perpendicular is drawn from ``rng`` (or a fixed one
    without a generator).
    """
    normal = _normalize(np.cross(parent_orientation, growth_dir))
    if normal is not None and np.linalg.norm(
            np.cross(parent_orientation, growth_dir)) > 1e-12:
        return normal, False
    if rng is not None:
        for _ in range(100):
            candidate = rng.standard_normal(3)
            candidate -= np.dot(candidate, parent_orientation) \
                * parent_orientation
            normal = _normalize(candidate)
            if normal is not None:
                return normal, True
    return perpendicular_basis(parent_orientation)[0], True


def build_bifurcation_directions(parent_orientation, growth_dir, phi1, phi2,
        rng=None):
    """
    Rotates ``d_k`` about the plane normal by ``+phi1`` and ``-phi2``. The
    provisional direction closer to ``d_g`` is replaced by the bisector of
    itself and ``d_g``; the other one is kept.
    """
    d_k = _normalize(np.asarray(parent_orientation, dtype=float))
    d_g = _normalize(np.asarray(growth_dir, dtype=float))
    if d_g is None:
        d_g = d_k
    normal, degenerate = bifurcation_normal(d_k, d_g, rng)
    first = Rotation.from_rotvec(phi1 * normal).apply(d_k)
    second = Rotation.from_rotvec(-phi2 * normal).apply(d_k)
    provisional = [first, second]
    distances = [np.linalg.norm(d - d_g) for d in provisional]
    relaxed = 0 if distances[0] <= distances[1] else 1
    bisector = _normalize(provisional[relaxed] + d_g)
    if bisector is not None:
        provisional[relaxed] = bisector
    return BifurcationDirections(provisional[0], provisional[1], normal,
        1 - relaxed, degenerate)


def small_radius(parent_radius, rng, params=None):
    """
    Redraw for radii below the small radius switch::

        R ~ Normal(2.75 um, 0.25 um), clamped to [2.0 um, R_p]

    Returns ``(radius, raw_draw)``.
    """
    params = params or GrowthParameters()
    raw = float(rng.normal(params.small_radius_mu, params.small_radius_sigma))
    return min(max(raw, params.min_radius), parent_radius), raw


# Control volumes

def _overlap_matrix(edges_a, edges_b):
    lo = np.maximum(edges_a[:-1, None], edges_b[None, :-1])
    hi = np.minimum(edges_a[1:, None], edges_b[None, 1:])
    return np.clip(hi - lo, 0.0, None)


@dataclass
class ControlVolumeField:
    region: object
    counts: tuple
    averages: np.ndarray
    volumes: np.ndarray
    po2_roi: float

    def index_of(self, position):
        """Control volume containing ``position``; outside points clamp."""
        relative = (np.asarray(position) - self.region.lo) / self.region.extent
        ijk = np.clip(np.floor(relative * np.array(self.counts)).astype(int),
            0, np.array(self.counts) - 1)
        return tuple(int(i) for i in ijk)

    def value_at(self, position):
        return float(self.averages[self.index_of(position)])


def region_average(grid, values, region, counts=(1, 1, 1)):
    """
    Overlap weighted averages of a per-cell field over ``counts`` equal sub
    boxes of ``region``. Returns ``(averages, covered_volumes)``.
    """
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    overlaps = []
    for axis in range(3):
        cell_edges = grid.box.lower[axis] \
            + np.arange(grid.shape[axis] + 1) * grid.spacing[axis]
        region_edges = np.linspace(region.lower[axis], region.upper[axis],
            counts[axis] + 1)
        overlaps.append(_overlap_matrix(region_edges, cell_edges))
    x, y, z = overlaps
    weighted = np.einsum('Ii,Jj,Kk,ijk->IJK', x, y, z, values)
    volumes = np.einsum('Ii,Jj,Kk->IJK', x.sum(axis=1)[:, None],
        y.sum(axis=1)[:, None], z.sum(axis=1)[:, None])
    with np.errstate(invalid='ignore', divide='ignore'):
        averages = np.where(volumes > 0.0, weighted / volumes, 0.0)
    return averages, volumes


def control_volume_averages(grid, po2_t, roi, cv_per_axis=4):
    """
    Volume weighted PO2 averages over a ``cv_per_axis^3`` decomposition of
    ``roi`` and over ``roi`` itself. Cells partially inside a control volume
    count with their overlap volume.
    """
    counts = (cv_per_axis,) * 3
    averages, volumes = region_average(grid, po2_t, roi, counts)
    total, _ = region_average(grid, po2_t, roi)
    return ControlVolumeField(roi, counts, averages, volumes,
        float(total[0, 0, 0]))


# The generator

@dataclass
class TraceRow:
    phase: int
    iteration: int
    po2_roi: float
    segments: int
    new_vessels: int
    links: int
    terminals: int
    removed: int = 0


@dataclass
class BifurcationRecord:
    tip: int
    parent_orientation: np.ndarray
    normal: np.ndarray
    d_b1: np.ndarray
    d_b2: np.ndarray
    kept: int
    phi1: float
    phi2: float
    degenerate: bool
    parent_radius: float = 0.0
    r1: float = 0.0
    r2: float = 0.0


@dataclass
class GrowthDiagnostics:
    bifurcations: list = field(default_factory=list)
    small_radii: list = field(default_factory=list)
    rejected_collisions: int = 0
    rejected_boundary: int = 0
    clamped_angles: int = 0


@dataclass
class GrowthResult:
    network: object
    pruned_network: object
    solution: object
    iterations: dict
    trace: list
    diagnostics: GrowthDiagnostics

    @property
    def total_iterations(self):
        return int(sum(self.iterations.values()))


@dataclass
class PhaseProgress:
    """
    Where a phase loop stands after a completed iteration. ``previous`` is the
    PO2_roi the next stopping test compares against; phase 3 also carries the
    link pressures it accumulates.
    """
    phase: int
    iteration: int = 0
    previous: float = 0.0
    finished: bool = False
    pressures: dict = None


def _float_keys(mapping):
    return dict((str(k), float(v)) for k, v in sorted(mapping.items()))


def _int_keys(mapping):
    return dict((int(k), float(v)) for k, v in mapping.items())


@dataclass
class GrowthSnapshot:
    """
    Everything a ``NetworkGenerator`` needs to continue after a completed
    iteration. ``network`` is the generator's live network, not a copy.
    """
    progress: PhaseProgress
    network: object
    rng_state: dict
    trace: list
    iterations: dict
    pressures: dict
    diagnostics: GrowthDiagnostics
    oxygen: object = None

    @property
    def row(self):
        return self.trace[-1]

    def as_dict(self):
        """
        JSON form of the snapshot. The oxygen warm start values are left
        out; ``warm_start()`` returns them as one array.
        """
        progress = self.progress
        diagnostics = self.diagnostics
        return {
            'phase': progress.phase,
            'iteration': progress.iteration,
            'previous': progress.previous,
            'finished': progress.finished,
            'phase_pressures': None if progress.pressures is None
                else _float_keys(progress.pressures),
            'rng_state': self.rng_state,
            'trace': [list(astuple(row)) for row in self.trace],
            'iterations': dict((str(k), v)
                for k, v in sorted(self.iterations.items())),
            'pressures': _float_keys(self.pressures),
            'diagnostics': {
                'bifurcations': [dict((k, v.tolist()
                    if isinstance(v, np.ndarray) else v)
                    for k, v in asdict(record).items())
                    for record in diagnostics.bifurcations],
                'small_radii': [list(item) for item in diagnostics.small_radii],
                'rejected_collisions': diagnostics.rejected_collisions,
                'rejected_boundary': diagnostics.rejected_boundary,
                'clamped_angles': diagnostics.clamped_angles,
            },
            'oxygen': None if self.oxygen is None else {
                'cells': len(self.oxygen.po2_t),
                'node_ids': [int(n) for n in self.oxygen.node_ids],
            },
            'network': self.network.to_dict(),
        }

    def warm_start(self):
        if self.oxygen is None:
            return None
        return np.concatenate([self.oxygen.po2_t, self.oxygen.po2_v])

    @classmethod
    def from_dict(cls, data, warm_start=None):
        pressures = data.get('phase_pressures')
        progress = PhaseProgress(int(data['phase']), int(data['iteration']),
            float(data['previous']), bool(data['finished']),
            None if pressures is None else _int_keys(pressures))
        saved = data['diagnostics']
        diagnostics = GrowthDiagnostics(
            bifurcations=[BifurcationRecord(**dict((k, np.asarray(v)
                if isinstance(v, list) else v) for k, v in record.items()))
                for record in saved['bifurcations']],
            small_radii=[tuple(item) for item in saved['small_radii']],
            rejected_collisions=int(saved['rejected_collisions']),
            rejected_boundary=int(saved['rejected_boundary']),
            clamped_angles=int(saved['clamped_angles']))
        oxygen = None
        saved = data.get('oxygen')
        if saved is not None and warm_start is not None:
            values = np.asarray(warm_start, dtype=float)
            cells = int(saved['cells'])
            oxygen = OxygenState(values[:cells].copy(), values[cells:].copy(),
                [int(n) for n in saved['node_ids']], 0, 0.0)
        return cls(progress, VascularNetwork.from_dict(data['network']),
            data['rng_state'], [TraceRow(*row) for row in data['trace']],
            dict((int(k), int(v)) for k, v in data['iterations'].items()),
            _int_keys(data['pressures']), diagnostics, oxygen)


class NetworkGenerator(object):
    """
    Runs the growth phases on a private copy of ``net``.

    ``checkpoint`` is an optional callable receiving a ``GrowthSnapshot``
    after every iteration.
    """

    def __init__(self, net, model, params=None, rng=None, seed=None,
            checkpoint=None):
        self.net = net.copy()
        self.model = model
        self.params = params or GrowthParameters()
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.checkpoint = checkpoint
        self.octants = OctantIndex.from_network(self.net, model.domain)
        self.diagnostics = GrowthDiagnostics()
        self.trace = []
        self.iterations = dict((phase, 0) for phase in PHASES)
        self.solution = None
        self.pressures = {}
        self._oxygen = None

    @property
    def domain(self):
        return self.model.domain

    @property
    def roi(self):
        return self.model.roi

    def evaluate(self, phase, iteration):
        try:
            solution = self.model.evaluate(self.net, self._oxygen)
        except MicrovascError as error:
            raise GrowthError(str(error), phase, iteration, error)
        self.solution = solution
        self.pressures = solution.node_pressures()
        self._oxygen = solution.oxygen
        return solution

    def node_pressures(self):
        pressures = dict(self.pressures)
        for node_id, node in self.net.nodes.items():
            if node_id not in pressures and node.is_boundary:
                pressures[node_id] = node.boundary_pressure
        return pressures

    # Growth at tips

    def large_terminals(self):
        return [n for n in terminal_nodes(self.net, self.domain)
            if self._terminal_radius(n) > self.params.large_radius]

    def _terminal_radius(self, node_id):
        return self.net.segments[self.net.adjacency[node_id][0]].radius

    def _adjust_radius(self, radius, parent_radius, small):
        if small and radius < self.params.small_radius_switch:
            radius, raw = small_radius(parent_radius, self.rng, self.params)
            self.diagnostics.small_radii.append((radius, parent_radius, raw))
        return radius

    def grow_tip(self, tip, po2_t, small=False):
        """
        Extends one terminal node by a single vessel or a bifurcation and
        returns the number of inserted segments.
        """
        params = self.params
        net = self.net
        node = net.nodes[tip]
        parent_radius = self._terminal_radius(tip)
        d_k = tip_orientation(net, tip)
        gradient = po2_gradient(self.model.grid, po2_t, node.position)
        d_g = growth_direction(gradient, d_k, params.lambda_g)
        ratio = sample_length_ratio(self.rng, params)

        if bifurcation_decision(ratio, params):
            r1, r2 = murray_branch_radii(parent_radius, params.gamma, self.rng,
                params.radius_sigma_divisor)
            r1 = self._adjust_radius(r1, parent_radius, small)
            r2 = self._adjust_radius(r2, parent_radius, small)
            angles = bifurcation_angles(parent_radius, r1, r2)
            directions = build_bifurcation_directions(d_k, d_g, angles.phi1,
                angles.phi2, self.rng)
            if angles.clamped:
                self.diagnostics.clamped_angles += 1
            self.diagnostics.bifurcations.append(BifurcationRecord(tip, d_k,
                directions.normal, directions.d_b1, directions.d_b2,
                directions.kept, angles.phi1, angles.phi2,
                directions.degenerate, parent_radius, r1, r2))
            lengths = [r1 * sample_length_ratio(self.rng, params),
                r2 * sample_length_ratio(self.rng, params)]
            children = [(directions.d_b1, r1, lengths[0]),
                (directions.d_b2, r2, lengths[1])]
            logger.debug("Tip %d bifurcates: radii %.3g/%.3g m, angles "
                "%.3f/%.3f rad.", tip, r1, r2, angles.phi1, angles.phi2)
        else:
            radius = self._adjust_radius(parent_radius, parent_radius, small)
            children = [(d_g, radius, parent_radius * ratio)]
            logger.debug("Tip %d extends by %.3g m.", tip, children[0][2])

        inserted = 0
        for direction, radius, length in children:
            end = node.position + length * direction
            if not self.domain.contains(end):
                self.diagnostics.rejected_boundary += 1
                continue
            segment = check_and_insert(net, self.octants, tip, end, radius,
                node.boundary_pressure, node.boundary_po2)
            if segment is None:
                self.diagnostics.rejected_collisions += 1
                continue
            inserted += 1
        if inserted:
            node.make_inner()
        return inserted

    # Linking

    def link_terminals(self, pressures=None):
        """
        Tries to connect every interior terminal to a node inside the cone
        around its outward orientation and closer than a drawn ``d_x``.
        Candidates are ranked by ``dp / dp_max - dist / d_x``, ties by lower
        node id; the first candidate passing the collision test is linked.
        """
        pressures = self.node_pressures() if pressures is None else pressures
        params = self.params
        net = self.net
        half_angle = 0.5 * params.cone_angle
        links = 0
        for tip in terminal_nodes(net, self.domain):
            if tip not in net.nodes or net.degree(tip) != 1:
                continue
            reach = float(self.rng.normal(params.link_mu, params.link_sigma))
            if not reach > 0.0:
                continue
            axis = tip_orientation(net, tip)
            origin = net.nodes[tip].position
            excluded = set(net.neighbours(tip)) | {tip}
            ids = [n for n in net.node_ids() if n not in excluded]
            if not ids:
                continue
            offsets = np.array([net.nodes[n].position for n in ids]) - origin
            distances = np.linalg.norm(offsets, axis=1)
            with np.errstate(invalid='ignore', divide='ignore'):
                cosines = offsets @ axis / distances
            inside = (distances <= reach) & (distances > 0.0) \
                & (cosines >= math.cos(half_angle) - 1e-12)
            if not np.any(inside):
                continue
            candidates = [ids[i] for i in np.flatnonzero(inside)]
            distance = distances[inside]
            own = pressures.get(tip)
            if own is None:
                difference = np.zeros(len(candidates))
            else:
                difference = np.array([abs(pressures[n] - own)
                    if pressures.get(n) is not None else 0.0
                    for n in candidates])
            largest = float(np.max(difference))
            score = (difference / largest if largest > 0.0 else 0.0) \
                - distance / reach
            order = sorted(range(len(candidates)),
                key=lambda i: (-score[i], candidates[i]))
            terminal_radius = self._terminal_radius(tip)
            for i in order:
                partner = candidates[i]
                partner_radius = net.segments[net.incident(partner)[0]].radius
                radius = 0.5 * (terminal_radius + partner_radius)
                segment = check_and_insert(net, self.octants, tip, partner,
                    radius)
                if segment is None:
                    continue
                net.nodes[tip].make_inner()
                partner_node = net.nodes[partner]
                if partner_node.is_boundary and net.degree(partner) == 2 \
                        and self.domain.contains(partner_node.position,
                            strict=True):
                    partner_node.make_inner()
                links += 1
                logger.debug("Linked terminal %d to node %d (%.3g m).", tip,
                    partner, distance[i])
                break
        return links

    # Pruning

    def prune_terminals(self):
        """
        Removes every terminal segment whose tip lies in the region of
        interest. An exposed inner neighbour left with degree 1 takes over
        the boundary data of the removed tip.
        """
        net = self.net
        tips = [n for n in terminal_nodes(net, self.domain)
            if self.roi.contains(net.nodes[n].position)]
        removed = 0
        for tip in tips:
            if tip not in net.nodes or net.degree(tip) != 1:
                continue
            node = net.nodes[tip]
            (segment_id,) = net.adjacency[tip]
            neighbour = net.segments[segment_id].other(tip)
            self.octants.discard(segment_id)
            net.remove_segment(segment_id)
            removed += 1
            if neighbour in net.nodes and net.degree(neighbour) == 1:
                exposed = net.nodes[neighbour]
                if not exposed.is_boundary and node.is_boundary:
                    exposed.make_boundary(node.boundary_pressure,
                        node.boundary_po2)
        return removed

    # Phases

    def snapshot(self, progress):
        return GrowthSnapshot(progress, self.net, self.rng.bit_generator.state,
            list(self.trace), dict(self.iterations), dict(self.pressures),
            self.diagnostics, self._oxygen)

    @classmethod
    def from_snapshot(cls, snapshot, model, params=None, checkpoint=None):
        """
        A generator continuing after ``snapshot``. Pass the snapshot's
        ``progress`` to ``run`` as ``resume`` to finish the interrupted phase.
        """
        generator = cls(snapshot.network, model, params, checkpoint=checkpoint)
        generator.rng.bit_generator.state = snapshot.rng_state
        generator.trace = list(snapshot.trace)
        generator.iterations.update(snapshot.iterations)
        generator.pressures = dict(snapshot.pressures)
        generator.diagnostics = snapshot.diagnostics
        generator._oxygen = snapshot.oxygen
        return generator

    def _record(self, progress, po2_roi, new_vessels, links, removed=0):
        row = TraceRow(progress.phase, progress.iteration, float(po2_roi),
            self.net.number_of_segments, new_vessels, links,
            len(terminal_nodes(self.net, self.domain)), removed)
        self.trace.append(row)
        logger.info("Phase %d, iteration %d: PO2_roi %.3f mmHg, %d segments, "
            "%d new, %d links.", row.phase, row.iteration, po2_roi,
            row.segments, new_vessels, links)
        if self.checkpoint is not None:
            self.checkpoint(self.snapshot(progress))
        return row

    def phase1(self, progress=None):
        params = self.params
        progress = progress or PhaseProgress(1)
        while not progress.finished and progress.iteration < params.max_iter_p1:
            iteration = progress.iteration + 1
            self.iterations[1] = iteration
            solution = self.evaluate(1, iteration)
            po2_roi = control_volume_averages(self.model.grid,
                solution.oxygen.po2_t, self.roi, params.cv_per_axis).po2_roi
            new_vessels = 0
            for tip in self.large_terminals():
                new_vessels += self.grow_tip(tip, solution.oxygen.po2_t)
            remaining = len(self.large_terminals())
            change = abs(po2_roi - progress.previous) / po2_roi \
                if po2_roi > 0.0 else math.inf
            progress = PhaseProgress(1, iteration, po2_roi,
                change < params.rel_change_p1 or remaining == 0)
            self._record(progress, po2_roi, new_vessels, 0)
        return self.net

    def phase2(self, progress=None):
        params = self.params
        progress = progress or PhaseProgress(2)
        while not progress.finished and progress.iteration < params.max_iter_p2:
            iteration = progress.iteration + 1
            self.iterations[2] = iteration
            solution = self.evaluate(2, iteration)
            volumes = control_volume_averages(self.model.grid,
                solution.oxygen.po2_t, self.roi, params.cv_per_axis)
            new_vessels = 0
            for tip in terminal_nodes(self.net, self.domain):
                if volumes.value_at(self.net.nodes[tip].position) \
                        > params.po2_stop:
                    continue
                new_vessels += self.grow_tip(tip, solution.oxygen.po2_t,
                    small=True)
            links = self.link_terminals()
            po2_roi = volumes.po2_roi
            progress = PhaseProgress(2, iteration, po2_roi,
                abs(po2_roi - progress.previous) < params.change_p2
                or po2_roi > params.po2_stop)
            self._record(progress, po2_roi, new_vessels, links)
        return self.net

    def interior_terminals(self):
        return [n for n in terminal_nodes(self.net, self.domain)
            if self.roi.contains(self.net.nodes[n].position)]

    def phase3(self, progress=None):
        params = self.params
        if progress is None:
            progress = PhaseProgress(3, pressures=self.node_pressures())
        pressures = dict(progress.pressures)
        po2_roi = self.trace[-1].po2_roi if self.trace else math.nan
        while not progress.finished and progress.iteration < params.max_iter_p3:
            iteration = progress.iteration + 1
            self.iterations[3] = iteration
            removed = self.prune_terminals()
            for node_id, node in self.net.nodes.items():
                if node.is_boundary:
                    pressures.setdefault(node_id, node.boundary_pressure)
            links = self.link_terminals(pressures)
            progress = PhaseProgress(3, iteration, po2_roi,
                len(self.interior_terminals()) < params.p3_terminal_stop,
                dict(pressures))
            self._record(progress, po2_roi, 0, links, removed)
        return self.net

    def run(self, phases=PHASES, resume=None):
        """
        Runs the requested phases, solves once more on the pruned network and
        returns the network clipped to the region of interest. With
        ``resume``, the progress of a restored snapshot, earlier phases are
        skipped and the interrupted one continues where it stopped.
        """
        for phase in phases:
            progress = None
            if resume is not None:
                if phase < resume.phase:
                    continue
                if phase == resume.phase:
                    progress = resume
            if progress is None:
                logger.info("Starting growth phase %d.", phase)
            else:
                logger.info("Resuming growth phase %d after iteration %d.",
                    phase, progress.iteration)
            getattr(self, 'phase%d' % phase)(progress)
        if self.diagnostics.clamped_angles:
            logger.info("%d bifurcations had clamped branching angles.",
                self.diagnostics.clamped_angles)
        solution = self.evaluate(max(phases) if phases else 0, 0)
        clipped = clip_to_region(self.net, self.roi,
            solution.node_pressures(), solution.node_po2())
        return GrowthResult(clipped, self.net, solution, dict(self.iterations),
            list(self.trace), self.diagnostics)


def run_phase1(net, model, params=None, rng=None):
    generator = NetworkGenerator(net, model, params, rng=rng)
    return generator.phase1()


def run_phase2(net, model, params=None, rng=None):
    generator = NetworkGenerator(net, model, params, rng=rng)
    return generator.phase2()


def run_phase3(net, model, params=None, rng=None, pressures=None):
    """
    Prunes and links without solving, then clips to the region of interest.
    ``pressures`` (node id -> Pa) ranks link candidates; boundary pressures
    are used where it is silent.
    """
    generator = NetworkGenerator(net, model, params, rng=rng)
    generator.pressures = dict(pressures or {})
    generator.phase3()
    return clip_to_region(generator.net, model.roi, pressures)

