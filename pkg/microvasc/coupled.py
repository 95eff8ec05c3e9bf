"""
One evaluation of the coupled model on a network: surface coupling, flow,
arterial/venous classification and oxygen transport.
"""
import logging
from dataclasses import dataclass

from .flow_solver import FlowParameters, assemble_flow_system, solve_flow
from .linalg import DEFAULT_TOLERANCE
from .network import check_inside, classify_arterial_venous
from .oxygen_solver import OxygenParameters, assemble_transport_operator, \
    solve_oxygen
from .rheology import RheologyParameters
from .tissue_grid import DEFAULT_ANGULAR_SAMPLES, build_surface_coupling

logger = logging.getLogger(__name__)


@dataclass
class CoupledSolution:
    flow: object
    oxygen: object
    coupling: object
    labels: dict

    def node_pressures(self):
        return self.flow.node_pressures()

    def node_po2(self):
        return self.oxygen.node_po2()


class CoupledModel(object):
    """
    Holds everything that stays fixed while a network changes: the tissue
    grid, the region of interest and the parameter groups.
    """

    def __init__(self, grid, roi, rheology=None, flow_params=None,
            oxygen_params=None, n_angular=DEFAULT_ANGULAR_SAMPLES,
            n_axial=None, linear_solver='direct',
            linear_tol=DEFAULT_TOLERANCE):
        self.grid = grid
        self.roi = roi
        self.rheology = rheology or RheologyParameters()
        self.flow_params = flow_params or FlowParameters()
        self.oxygen_params = oxygen_params or OxygenParameters()
        self.n_angular = n_angular
        self.n_axial = n_axial
        self.linear_solver = linear_solver
        self.linear_tol = linear_tol

    @property
    def domain(self):
        return self.grid.box

    def solve_flow(self, net, coupling=None):
        coupling = coupling or build_surface_coupling(self.grid, net,
            self.n_axial, self.n_angular)
        system = assemble_flow_system(net, self.grid, coupling, self.rheology,
            self.flow_params)
        return solve_flow(system, self.linear_solver, self.linear_tol), coupling

    def evaluate(self, net, previous_oxygen=None, reclassify=False):
        """
        Solves flow and oxygen on ``net``. Boundary nodes are classified
        from the flow solution if any of them lacks a boundary PO2, or always
        with ``reclassify``; classification writes ``boundary_po2`` into
        ``net``.
        """
        check_inside(net, self.domain)
        flow, coupling = self.solve_flow(net)
        labels = {}
        unlabelled = [n for n in net.boundary_nodes()
            if net.nodes[n].boundary_po2 is None]
        if reclassify or unlabelled:
            labels = classify_arterial_venous(net, flow,
                self.oxygen_params.arterial_po2, self.oxygen_params.venous_po2)
        operator = assemble_transport_operator(net, self.grid, coupling, flow,
            self.flow_params, self.oxygen_params)
        oxygen = solve_oxygen(operator, self.oxygen_params,
            initial_guess=previous_oxygen, method=self.linear_solver,
            linear_tol=self.linear_tol)
        return CoupledSolution(flow, oxygen, coupling, labels)
