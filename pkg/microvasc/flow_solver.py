"""
Stationary coupled flow: Darcy flow in the tissue cells, Hagen-Poiseuille
flow on the vessel graph and Starling filtration through the vessel walls.

Both blocks are assembled into one sparse system over the unknowns
``[p_t (cells), p_v (nodes)]`` and solved at once.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ImproperlyConfigured, SingularSystemError
from .linalg import DEFAULT_TOLERANCE, solve_sparse
from .rheology import RheologyParameters, segment_viscosity, vessel_conductance
from .tissue_grid import interpolation_weights
from .units import MICROGRAM_PER_KILOGRAM

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowParameters:
    tissue_permeability: float = 1.0e-18
    interstitial_viscosity: float = 1.3e-3
    wall_conductivity: float = 1.0e-12
    reflection_coefficient: float = 0.1
    oncotic_plasma: float = 3733.0
    oncotic_interstitial: float = 666.0
    water_density: float = 1000.0

    def __post_init__(self):
        for name in ('tissue_permeability', 'interstitial_viscosity',
                'oncotic_plasma', 'oncotic_interstitial', 'water_density'):
            if not getattr(self, name) > 0.0:
                raise ImproperlyConfigured(
                    "Flow parameter %s must be positive, got %r."
                    % (name, getattr(self, name))
                )
        if self.wall_conductivity < 0.0:
            raise ImproperlyConfigured(
                "Flow parameter wall_conductivity must be non-negative.")
        if not 0.0 <= self.reflection_coefficient <= 1.0:
            raise ImproperlyConfigured(
                "The reflection coefficient must lie in [0, 1], got %r."
                % self.reflection_coefficient
            )

    @property
    def mobility(self):
        return self.tissue_permeability / self.interstitial_viscosity

    @property
    def oncotic_offset(self):
        """``sigma (pi_v - pi_t)`` in Pa."""
        return self.reflection_coefficient * (
            self.oncotic_plasma - self.oncotic_interstitial)


def starling_flux(p_v_wall, p_t_wall, params):
    """Filtration velocity through the wall, positive into the tissue."""
    return params.wall_conductivity * (
        (np.asarray(p_v_wall) - np.asarray(p_t_wall)) - params.oncotic_offset
    )


def check_dirichlet_components(net):
    """
    Raises ``SingularSystemError`` for a connected component of the graph that
    carries no boundary node.
    """
    for component in net.components():
        if not any(net.nodes[n].is_boundary for n in component):
            raise SingularSystemError(
                "A component of %d node(s) has no boundary pressure."
                % len(component), component,
            )


@dataclass
class FlowSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: object
    coupling: object
    params: FlowParameters
    node_ids: list
    segment_ids: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    radius: np.ndarray
    length: np.ndarray
    viscosity: np.ndarray
    conductance: np.ndarray
    sample_a: np.ndarray
    sample_b: np.ndarray
    dirichlet: np.ndarray
    pinned: bool = False

    @property
    def number_of_cells(self):
        return self.grid.number_of_cells


def _tissue_laplacian(grid, mobility):
    rows, cols, vals = [], [], []
    areas = grid.face_areas()
    for axis in range(3):
        left, right = grid.neighbour_pairs(axis)
        t = mobility * areas[axis] / grid.spacing[axis]
        rows += [left, right, left, right]
        cols += [left, right, right, left]
        vals += [np.full(len(left), t)] * 2 + [np.full(len(left), -t)] * 2
    return rows, cols, vals


def assemble_flow_system(net, grid, coupling, rheology=None, params=None):
    """
    Two-point flux Laplacian with mobility ``K_t / mu_t`` and zero-flux outer
    faces for the tissue, a conductance weighted graph Laplacian for the
    vessels and the Starling exchange over the shared surface samples. The
    exchange enters the cell rows as a source and the node rows, weighted with
    the projection weights of each sample, as a sink, so both sides see the
    same total filtration.
    """
    rheology = rheology or RheologyParameters()
    params = params or FlowParameters()
    check_dirichlet_components(net)
    n_cells = grid.number_of_cells
    node_ids = net.node_ids()
    n_nodes = len(node_ids)
    segment_ids, seg_a, seg_b, radius, length = net.segment_arrays()
    viscosity = np.atleast_1d(segment_viscosity(radius, rheology)) \
        if len(radius) else np.zeros(0)
    conductance = np.atleast_1d(vessel_conductance(radius, length, viscosity)) \
        if len(radius) else np.zeros(0)

    rows, cols, vals = _tissue_laplacian(grid, params.mobility)
    rhs = np.zeros(n_cells + n_nodes)

    # Graph Laplacian on node rows, offset by the cell count.
    na, nb = seg_a + n_cells, seg_b + n_cells
    rows += [na, nb, na, nb]
    cols += [na, nb, nb, na]
    vals += [conductance, conductance, -conductance, -conductance]

    position = dict((s, i) for i, s in enumerate(segment_ids.tolist()))
    sample_segment = np.array([position[s] for s in coupling.segment.tolist()],
        dtype=int)
    sample_a = seg_a[sample_segment] if len(sample_segment) else np.zeros(0, int)
    sample_b = seg_b[sample_segment] if len(sample_segment) else np.zeros(0, int)
    w_a, w_b = interpolation_weights(coupling)
    k = params.wall_conductivity * coupling.area
    cell = coupling.cell
    offset = params.oncotic_offset

    # Cell rows: + k p_t - k (w_a p_a + w_b p_b) = - k sigma dpi
    rows += [cell, cell, cell]
    cols += [cell, sample_a + n_cells, sample_b + n_cells]
    vals += [k, -k * w_a, -k * w_b]
    np.add.at(rhs, cell, -k * offset)

    # Node rows: w_n k (w_a p_a + w_b p_b - p_t) = w_n k sigma dpi
    for node, weight in ((sample_a, w_a), (sample_b, w_b)):
        row = node + n_cells
        rows += [row, row, row]
        cols += [sample_a + n_cells, sample_b + n_cells, cell]
        vals += [weight * k * w_a, weight * k * w_b, -weight * k]
        np.add.at(rhs, row, weight * k * offset)

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cells + n_nodes, n_cells + n_nodes),
    ).tocsr()

    dirichlet = np.array([net.nodes[n].is_boundary for n in node_ids],
        dtype=bool)
    values = np.array([net.nodes[n].boundary_pressure or 0.0 for n in node_ids])
    fixed = np.flatnonzero(dirichlet) + n_cells
    fixed_values = values[dirichlet]
    pinned = params.wall_conductivity == 0.0 or coupling.number_of_samples == 0
    if pinned:
        fixed = np.concatenate([[0], fixed])
        fixed_values = np.concatenate([[0.0], fixed_values])
    matrix = _replace_rows(matrix, fixed)
    rhs[fixed] = fixed_values
    logger.debug("Assembled flow system: %d cells, %d nodes (%d Dirichlet), "
        "%d surface samples%s.", n_cells, n_nodes, int(dirichlet.sum()),
        coupling.number_of_samples, ", tissue pinned" if pinned else "")
    return FlowSystem(matrix, rhs, grid, coupling, params, node_ids,
        segment_ids, seg_a, seg_b, radius, length, viscosity, conductance,
        sample_a, sample_b, dirichlet, pinned)


def _replace_rows(matrix, rows):
    """Turns ``rows`` into identity rows."""
    keep = np.ones(matrix.shape[0])
    keep[rows] = 0.0
    identity = np.zeros(matrix.shape[0])
    identity[rows] = 1.0
    return (sp.diags(keep) @ matrix + sp.diags(identity)).tocsr()


@dataclass
class FlowState:
    p_t: np.ndarray
    p_v: np.ndarray
    node_ids: list
    segment_ids: np.ndarray
    u_v: np.ndarray
    u_t: np.ndarray
    face_velocities: tuple
    j_p: np.ndarray
    F_tv: float
    filtration_tissue_side: np.ndarray
    filtration_vessel_side: np.ndarray
    boundary_flux: dict
    residual_history: list = field(default_factory=list)

    def node_pressures(self):
        return dict(zip(self.node_ids, self.p_v.tolist()))

    def segment_velocities(self):
        return dict(zip(self.segment_ids.tolist(), self.u_v.tolist()))

    def segment_speeds(self):
        return dict(zip(self.segment_ids.tolist(), np.abs(self.u_v).tolist()))

    @property
    def net_filtration(self):
        return float(np.sum(self.filtration_tissue_side))


def _face_velocities(grid, p_t, mobility):
    pressure = p_t.reshape(grid.shape)
    faces = []
    for axis in range(3):
        shape = list(grid.shape)
        shape[axis] += 1
        velocity = np.zeros(shape)
        inner = [slice(None)] * 3
        inner[axis] = slice(1, -1)
        velocity[tuple(inner)] = -mobility * np.diff(pressure, axis=axis) \
            / grid.spacing[axis]
        faces.append(velocity)
    return tuple(faces)


def _cell_velocities(grid, faces):
    components = []
    for axis, velocity in enumerate(faces):
        lower = [slice(None)] * 3
        upper = [slice(None)] * 3
        lower[axis] = slice(0, -1)
        upper[axis] = slice(1, None)
        components.append(0.5 * (velocity[tuple(lower)]
            + velocity[tuple(upper)]).ravel())
    return np.stack(components, axis=1)


def solve_flow(system, method='direct', tol=DEFAULT_TOLERANCE):
    """
    Solves the assembled system and derives velocities and fluxes. Vessel
    velocities are positive in the ``node_a -> node_b`` direction.
    """
    solution, history = solve_sparse(system.matrix, system.rhs, method, tol)
    n_cells = system.number_of_cells
    p_t, p_v = solution[:n_cells], solution[n_cells:]
    params = system.params
    coupling = system.coupling

    if len(system.segment_ids):
        u_v = -system.radius ** 2 / (8.0 * system.viscosity) \
            * (p_v[system.seg_b] - p_v[system.seg_a]) / system.length
    else:
        u_v = np.zeros(0)
    faces = _face_velocities(system.grid, p_t, params.mobility)
    u_t = _cell_velocities(system.grid, faces)

    w_a, w_b = interpolation_weights(coupling)
    wall = w_a * p_v[system.sample_a] + w_b * p_v[system.sample_b] \
        if coupling.number_of_samples else np.zeros(0)
    j_p = starling_flux(wall, p_t[coupling.cell], params)
    flux = j_p * coupling.area
    tissue_side = np.bincount(coupling.cell, weights=flux, minlength=n_cells)
    vessel_side = np.bincount(system.sample_a, weights=w_a * flux,
        minlength=len(p_v)) + np.bincount(system.sample_b, weights=w_b * flux,
        minlength=len(p_v))
    F_tv = float(np.sum(flux[flux > 0.0])) * params.water_density \
        * MICROGRAM_PER_KILOGRAM

    inflow = np.zeros(len(p_v))
    np.add.at(inflow, system.seg_a, system.conductance
        * (p_v[system.seg_a] - p_v[system.seg_b]))
    np.add.at(inflow, system.seg_b, system.conductance
        * (p_v[system.seg_b] - p_v[system.seg_a]))
    inflow += vessel_side
    boundary_flux = dict((system.node_ids[i], float(inflow[i]))
        for i in np.flatnonzero(system.dirichlet))

    state = FlowState(p_t, p_v, system.node_ids, system.segment_ids, u_v, u_t,
        faces, j_p, F_tv, tissue_side, vessel_side, boundary_flux, history)
    logger.info("Flow solved: p_v in [%.1f, %.1f] Pa, F_tv = %.4g ug/s.",
        float(p_v.min()) if len(p_v) else 0.0,
        float(p_v.max()) if len(p_v) else 0.0, F_tv)
    return state
