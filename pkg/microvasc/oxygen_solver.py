"""
Stationary oxygen transport in the tissue and the vessels, coupled through
the Kedem-Katchalsky wall flux, with Michaelis-Menten consumption in the
tissue.

Partial pressures stay in mmHg throughout; all geometric factors are SI.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConvergenceError, DomainError, ImproperlyConfigured, \
    StateError
from .flow_solver import starling_flux
from .linalg import DEFAULT_TOLERANCE, FactorizedSolver, solve_sparse
from .tissue_grid import interpolation_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OxygenParameters:
    vascular_diffusivity: float = 5.0e-5
    tissue_diffusivity: float = 1.35e-7
    wall_permeability: float = 3.5e-5
    max_consumption: float = 3.0
    half_consumption_po2: float = 1.0
    arterial_po2: float = 75.0
    venous_po2: float = 38.0
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        for name in ('vascular_diffusivity', 'tissue_diffusivity',
                'half_consumption_po2', 'arterial_po2', 'venous_po2', 'tol'):
            if not getattr(self, name) > 0.0:
                raise ImproperlyConfigured(
                    "Oxygen parameter %s must be positive, got %r."
                    % (name, getattr(self, name))
                )
        for name in ('wall_permeability', 'max_consumption'):
            if getattr(self, name) < 0.0:
                raise ImproperlyConfigured(
                    "Oxygen parameter %s must be non-negative." % name)
        if not 0.0 < self.damping <= 1.0:
            raise ImproperlyConfigured(
                "MICROVASC_DAMPING must lie in (0, 1], got %r." % self.damping)
        if self.max_iter < 1:
            raise ImproperlyConfigured("MICROVASC_FIXED_POINT_MAX_ITER must be "
                "at least 1.")


def michaelis_menten(po2, params):
    """Consumption rate ``m0 P / (P + P_half)`` in mmHg/s."""
    po2 = np.asarray(po2, dtype=float)
    if np.any(po2 < 0.0):
        raise DomainError("Consumption is undefined for negative PO2.")
    rate = params.max_consumption * po2 / (po2 + params.half_consumption_po2)
    if rate.ndim == 0:
        return float(rate)
    return rate


def kedem_katchalsky_flux(p_v_wall, p_t_wall, po2_v_wall, po2_t_wall,
        flow_params, oxygen_params):
    """
    Oxygen flux through the wall in mmHg m/s, positive into the tissue. The
    advective part carries the arithmetic mean of both partial pressures.
    """
    j_p = starling_flux(p_v_wall, p_t_wall, flow_params)
    return _wall_flux(j_p, po2_v_wall, po2_t_wall,
        flow_params.reflection_coefficient, oxygen_params.wall_permeability)


def _wall_flux(j_p, po2_v_wall, po2_t_wall, reflection, permeability):
    po2_v_wall = np.asarray(po2_v_wall, dtype=float)
    po2_t_wall = np.asarray(po2_t_wall, dtype=float)
    return (1.0 - reflection) * j_p * 0.5 * (po2_v_wall + po2_t_wall) \
        + permeability * (po2_v_wall - po2_t_wall)


@dataclass
class TransportOperator:
    """
    The affine part of the discrete transport problem. The consumption sink is
    added per fixed point iteration as ``diag(k V)`` on the cell rows.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    number_of_cells: int
    cell_volume: float
    node_ids: list
    dirichlet: np.ndarray
    boundary_values: np.ndarray

    def with_sink(self, coefficients):
        diagonal = np.zeros(self.matrix.shape[0])
        diagonal[:self.number_of_cells] = coefficients * self.cell_volume
        return self.matrix + sp.diags(diagonal)


def _upwind_pairs(left, right, flux, conductance):
    """
    Entries for ``flux`` through faces or segments ``left -> right`` with
    upwinding plus a symmetric diffusive ``conductance``.
    """
    out = np.maximum(flux, 0.0)
    back = np.maximum(-flux, 0.0)
    rows = [left, left, right, right]
    cols = [left, right, left, right]
    vals = [out + conductance, -back - conductance,
        -out - conductance, back + conductance]
    return rows, cols, vals


def assemble_transport_operator(net, grid, coupling, flow, flow_params,
        params=None):
    """
    Upwinded convection plus diffusion in both blocks. Tissue faces carry the
    Darcy face velocities, vessels the volumetric flow ``pi R^2 u_v`` and the
    diffusive conductance ``D_v pi R^2 / l``; outer tissue faces carry no
    flux. Boundary nodes are Dirichlet nodes with their assigned
    ``boundary_po2``.
    """
    params = params or OxygenParameters()
    if flow is None:
        raise StateError("Oxygen transport needs a flow solution.")
    n_cells = grid.number_of_cells
    node_ids = net.node_ids()
    n_nodes = len(node_ids)
    rows, cols, vals = [], [], []

    areas = grid.face_areas()
    for axis in range(3):
        left, right = grid.neighbour_pairs(axis)
        inner = [slice(None)] * 3
        inner[axis] = slice(1, -1)
        face_flux = flow.face_velocities[axis][tuple(inner)].ravel() * areas[axis]
        diffusion = params.tissue_diffusivity * areas[axis] / grid.spacing[axis]
        r, c, v = _upwind_pairs(left, right, face_flux,
            np.full(len(left), diffusion))
        rows += r
        cols += c
        vals += v

    segment_ids, seg_a, seg_b, radius, length = net.segment_arrays()
    if len(segment_ids) != len(flow.segment_ids) \
            or np.any(segment_ids != flow.segment_ids):
        raise StateError("The flow solution belongs to a different network.")
    cross_section = np.pi * radius ** 2
    r, c, v = _upwind_pairs(seg_a + n_cells, seg_b + n_cells,
        cross_section * flow.u_v,
        params.vascular_diffusivity * cross_section / length)
    rows += r
    cols += c
    vals += v

    position = dict((s, i) for i, s in enumerate(segment_ids.tolist()))
    sample_segment = np.array([position[s] for s in coupling.segment.tolist()],
        dtype=int)
    sample_a = seg_a[sample_segment] + n_cells
    sample_b = seg_b[sample_segment] + n_cells
    cell = coupling.cell
    w_a, w_b = interpolation_weights(coupling)
    half_advection = 0.5 * (1.0 - flow_params.reflection_coefficient) \
        * flow.j_p * coupling.area
    diffusion = params.wall_permeability * coupling.area
    vessel_coefficient = half_advection + diffusion
    tissue_coefficient = half_advection - diffusion

    # Cell rows: - a J_ox
    rows += [cell, cell, cell]
    cols += [cell, sample_a, sample_b]
    vals += [-tissue_coefficient, -vessel_coefficient * w_a,
        -vessel_coefficient * w_b]
    # Node rows: + w_n a J_ox
    for node, weight in ((sample_a, w_a), (sample_b, w_b)):
        rows += [node, node, node]
        cols += [cell, sample_a, sample_b]
        vals += [weight * tissue_coefficient,
            weight * vessel_coefficient * w_a,
            weight * vessel_coefficient * w_b]

    size = n_cells + n_nodes
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsr()

    dirichlet = np.array([net.nodes[n].is_boundary for n in node_ids],
        dtype=bool)
    missing = [n for n in node_ids if net.nodes[n].is_boundary
        and net.nodes[n].boundary_po2 is None]
    if missing:
        raise StateError(
            "Boundary nodes %s have no PO2; classify the network first."
            % missing[:10]
        )
    values = np.array([net.nodes[n].boundary_po2 or 0.0 for n in node_ids])
    fixed = np.flatnonzero(dirichlet) + n_cells
    keep = np.ones(size)
    keep[fixed] = 0.0
    identity = np.zeros(size)
    identity[fixed] = 1.0
    matrix = (sp.diags(keep) @ matrix + sp.diags(identity)).tocsr()
    rhs = np.zeros(size)
    rhs[fixed] = values[dirichlet]
    return TransportOperator(matrix, rhs, n_cells, grid.cell_volume, node_ids,
        dirichlet, values[dirichlet])


@dataclass
class OxygenState:
    po2_t: np.ndarray
    po2_v: np.ndarray
    node_ids: list
    iterations: int
    update_norm: float
    history: list = field(default_factory=list)

    def node_po2(self):
        return dict(zip(self.node_ids, self.po2_v.tolist()))

    @property
    def solution(self):
        return np.concatenate([self.po2_t, self.po2_v])


def _initial_guess(operator, initial_guess):
    guess = _starting_values(operator, initial_guess)
    fixed = operator.number_of_cells + np.flatnonzero(operator.dirichlet)
    guess[fixed] = operator.boundary_values
    return guess


def _starting_values(operator, initial_guess):
    size = operator.matrix.shape[0]
    if initial_guess is not None:
        if isinstance(initial_guess, OxygenState):
            if initial_guess.po2_t.shape[0] == operator.number_of_cells:
                # Node fields change with the network; only the tissue part
                # is reused.
                guess = np.full(size, float(np.mean(initial_guess.po2_v))
                    if len(initial_guess.po2_v) else 0.0)
                guess[:operator.number_of_cells] = initial_guess.po2_t
                return guess
        else:
            guess = np.asarray(initial_guess, dtype=float)
            if guess.shape == (size,):
                return guess.copy()
    level = float(np.mean(operator.boundary_values)) \
        if len(operator.boundary_values) else 0.0
    return np.full(size, level)


def solve_oxygen(operator, params=None, initial_guess=None, damping=None,
        tol=None, max_iter=None, method='direct', linear_tol=DEFAULT_TOLERANCE):
    """
    Damped Picard iteration on the consumption term::

        x_{n+1} = (1 - theta) x_n + theta solve(A + diag(m0 V / (x_n + P_half)))

    until the relative update falls below ``tol``. Without consumption the
    problem is linear and one undamped solve is returned. Raises
    ``ConvergenceError`` after ``max_iter`` iterations.
    """
    params = params or OxygenParameters()
    damping = params.damping if damping is None else damping
    tol = params.tol if tol is None else tol
    max_iter = params.max_iter if max_iter is None else max_iter
    if not 0.0 < damping <= 1.0:
        raise DomainError("Damping must lie in (0, 1], got %r." % damping)
    if not tol > 0.0:
        raise DomainError("Fixed point tolerance must be positive.")
    n_cells = operator.number_of_cells

    if params.max_consumption == 0.0:
        solution, _ = solve_sparse(operator.matrix, operator.rhs, method,
            linear_tol)
        state = OxygenState(solution[:n_cells], solution[n_cells:],
            operator.node_ids, 1, 0.0, [0.0])
        check_bounds(state, operator)
        return state

    current = _initial_guess(operator, initial_guess)
    solver = FactorizedSolver(method, linear_tol)
    candidate = None
    history = []
    for iteration in range(1, max_iter + 1):
        tissue = np.maximum(current[:n_cells], 0.0)
        sink = params.max_consumption / (tissue + params.half_consumption_po2)
        candidate, _ = solver.solve(operator.with_sink(sink), operator.rhs,
            x0=candidate)
        updated = (1.0 - damping) * current + damping * candidate
        norm = np.linalg.norm(updated)
        change = np.linalg.norm(updated - current) / (norm if norm else 1.0)
        history.append(float(change))
        current = updated
        logger.debug("Oxygen fixed point iteration %d: relative update %.3e.",
            iteration, change)
        if change <= tol:
            state = OxygenState(current[:n_cells], current[n_cells:],
                operator.node_ids, iteration, float(change), history)
            check_bounds(state, operator)
            logger.info("Oxygen converged after %d iterations with %d "
                "factorizations.", iteration, solver.factorizations)
            return state
    raise ConvergenceError(
        "Oxygen fixed point did not converge within %d iterations "
        "(last relative update %.3e)." % (max_iter, history[-1]), history,
    )


def check_bounds(state, operator, slack=1e-6):
    """
    Raises ``DomainError`` unless every PO2 of ``state`` lies in
    ``[0, max boundary PO2]`` up to ``slack`` times ``max(1, upper)``.
    """
    upper = float(np.max(operator.boundary_values)) \
        if len(operator.boundary_values) else 0.0
    values = state.solution
    if not len(values):
        return
    lowest, highest = float(np.min(values)), float(np.max(values))
    margin = slack * max(1.0, upper)
    if lowest < -margin or highest > upper + margin:
        raise DomainError("PO2 left the admissible range: [%.6g, %.6g] mmHg "
            "against [0, %.6g] mmHg." % (lowest, highest, upper))
