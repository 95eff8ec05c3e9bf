"""
Uniform cell-centered hexahedral grid over the tissue box and the discrete
vessel-surface measure that couples the grid to the 1D network.

Cells are numbered in C order, ``index = (i * ny + j) * nz + k``.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import TopologyError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_ANGULAR_SAMPLES = 8
MINIMUM_CELLS = 2


class TissueGrid(object):

    def __init__(self, box, shape):
        shape = tuple(int(n) for n in shape)
        if len(shape) != 3 or any(n < MINIMUM_CELLS for n in shape):
            raise ValidationError(
                "A tissue grid needs at least %d cells per axis, got %r."
                % (MINIMUM_CELLS, shape)
            )
        self.box = box
        self.shape = shape

    def __repr__(self):
        return "<TissueGrid: %dx%dx%d cells>" % self.shape

    @property
    def number_of_cells(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return self.box.extent / np.array(self.shape, dtype=float)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def face_areas(self):
        """Area of a face normal to each axis."""
        h = self.spacing
        return np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])

    def axis_centers(self, axis):
        h = self.spacing[axis]
        return self.box.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    def centers(self):
        x, y, z = np.meshgrid(*(self.axis_centers(a) for a in range(3)),
            indexing='ij')
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    def flat_index(self, i, j, k):
        ny, nz = self.shape[1], self.shape[2]
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def unravel(self, index):
        return np.unravel_index(index, self.shape)

    def locate(self, points):
        """
        Returns ``(cells, clamped)`` for an ``(n, 3)`` array of points.
        Points outside the box are assigned to the nearest boundary cell and
        flagged in ``clamped``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        raw = np.floor((points - self.box.lo) / self.spacing).astype(int)
        upper = np.array(self.shape) - 1
        # Points exactly on the upper face belong to the last cell.
        on_upper = np.isclose(points, self.box.hi, rtol=0.0,
            atol=1e-12 * float(np.max(self.box.extent)))
        raw = np.where(on_upper & (raw == upper + 1), upper, raw)
        ijk = np.clip(raw, 0, upper)
        clamped = np.any(ijk != raw, axis=1)
        return self.flat_index(ijk[:, 0], ijk[:, 1], ijk[:, 2]), clamped

    def neighbour_pairs(self, axis):
        """
        Flat indices ``(left, right)`` of every pair of cells sharing a face
        normal to ``axis``.
        """
        index = np.arange(self.number_of_cells).reshape(self.shape)
        lower = [slice(None)] * 3
        upper = [slice(None)] * 3
        lower[axis] = slice(0, -1)
        upper[axis] = slice(1, None)
        return index[tuple(lower)].ravel(), index[tuple(upper)].ravel()


def build_grid(box, cells_per_axis):
    grid = TissueGrid(box, cells_per_axis)
    logger.debug("Built %r with spacing %s m.", grid, grid.spacing)
    return grid


@dataclass
class SurfaceCoupling:
    """
    Equal-area point samples on the lateral surface of every vessel.

    Sample arrays are aligned: sample ``n`` lies on segment ``segment[n]`` at
    arc length ``s[n]`` (``fraction[n] = s / l``), angular ring ``ring[n]``,
    in cell ``cell[n]`` and carries surface ``area[n]``.
    """
    segment: np.ndarray
    cell: np.ndarray
    s: np.ndarray
    fraction: np.ndarray
    area: np.ndarray
    ring: np.ndarray
    n_axial: dict = field(default_factory=dict)
    lengths: dict = field(default_factory=dict)
    n_angular: int = DEFAULT_ANGULAR_SAMPLES
    clamped_samples: int = 0

    @property
    def number_of_samples(self):
        return len(self.area)

    def samples_of(self, segment_id):
        return np.flatnonzero(self.segment == segment_id)

    def area_per_segment(self):
        ids = sorted(self.n_axial)
        totals = dict((s, 0.0) for s in ids)
        for segment_id, area in zip(self.segment.tolist(), self.area.tolist()):
            totals[segment_id] += area
        return totals

    def area_per_cell(self, number_of_cells):
        return np.bincount(self.cell, weights=self.area,
            minlength=number_of_cells)


def default_axial_samples(length, grid):
    h = float(np.min(grid.spacing))
    return max(4, int(math.ceil(length / h)) * 2)


def perpendicular_basis(orientation):
    """
    Two unit vectors completing ``orientation`` to a right handed basis. The
    helper axis is the coordinate axis least aligned with the vessel.
    """
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(orientation)))] = 1.0
    first = np.cross(orientation, helper)
    first /= np.linalg.norm(first)
    second = np.cross(orientation, first)
    return first, second


def build_surface_coupling(grid, net, n_axial=None,
        n_angular=DEFAULT_ANGULAR_SAMPLES):
    """
    Samples each cylinder on a midpoint lattice in (s, theta)::

        s_i = (i + 1/2) l / n_axial,  theta_j = (j + 1/2) 2 pi / n_angular

    Every sample carries the area ``2 pi R l / (n_axial n_angular)`` and is
    assigned to the cell containing it, so the per-segment areas add up to the
    lateral surface exactly. ``n_axial=None`` picks ``max(4, 2 ceil(l/h))``
    with ``h`` the smallest cell spacing.
    """
    if n_angular < 2 or (n_axial is not None and n_axial < 2):
        raise ValidationError("Surface sampling needs at least 2 samples per "
            "direction.")
    theta = (np.arange(n_angular) + 0.5) * 2.0 * np.pi / n_angular
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    segment_parts, s_parts, fraction_parts, area_parts = [], [], [], []
    ring_parts, point_parts = [], []
    axial_counts = {}
    lengths = {}
    for segment_id in net.segment_ids():
        segment = net.segments[segment_id]
        start, _ = net.endpoints(segment_id)
        length, orientation = net.segment_geometry(segment_id)
        na = n_axial or default_axial_samples(length, grid)
        axial_counts[segment_id] = na
        lengths[segment_id] = length
        first, second = perpendicular_basis(orientation)
        fractions = (np.arange(na) + 0.5) / na
        centers = start + np.outer(fractions * length, orientation)
        offsets = segment.radius * (np.outer(cos_t, first)
            + np.outer(sin_t, second))
        points = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
        count = na * n_angular
        point_parts.append(points)
        segment_parts.append(np.full(count, segment_id, dtype=int))
        fraction_parts.append(np.repeat(fractions, n_angular))
        s_parts.append(np.repeat(fractions * length, n_angular))
        ring_parts.append(np.repeat(np.arange(na), n_angular))
        area_parts.append(np.full(count,
            2.0 * np.pi * segment.radius * length / count))
    if not point_parts:
        empty = np.zeros(0)
        return SurfaceCoupling(empty.astype(int), empty.astype(int), empty,
            empty, empty, empty.astype(int), {}, {}, n_angular, 0)
    cells, clamped = grid.locate(np.concatenate(point_parts))
    clamped_count = int(np.count_nonzero(clamped))
    if clamped_count:
        logger.warning("%d surface samples lie outside the tissue grid and "
            "were assigned to the nearest boundary cell.", clamped_count)
    coupling = SurfaceCoupling(
        segment=np.concatenate(segment_parts),
        cell=cells,
        s=np.concatenate(s_parts),
        fraction=np.concatenate(fraction_parts),
        area=np.concatenate(area_parts),
        ring=np.concatenate(ring_parts),
        n_axial=axial_counts,
        lengths=lengths,
        n_angular=n_angular,
        clamped_samples=clamped_count,
    )
    logger.debug("Coupled %d segments through %d surface samples.",
        len(axial_counts), coupling.number_of_samples)
    return coupling


def _ring_samples(coupling, segment_id, fraction):
    if segment_id not in coupling.n_axial:
        raise TopologyError("Segment %d is not part of the coupling." % segment_id)
    na = coupling.n_axial[segment_id]
    ring = min(max(int(math.floor(fraction * na)), 0), na - 1)
    samples = coupling.samples_of(segment_id)
    return samples[coupling.ring[samples] == ring]


def circumferential_average(values, coupling, segment_id, s):
    """
    Area weighted mean of the per-cell ``values`` over the angular samples of
    the ring nearest to arc length ``s``.
    """
    length = coupling.lengths[segment_id]
    if not 0.0 <= s <= length:
        raise ValidationError("Arc length %r lies outside [0, %r]." % (s, length))
    samples = _ring_samples(coupling, segment_id, s / length)
    weights = coupling.area[samples]
    return float(np.dot(np.asarray(values)[coupling.cell[samples]], weights)
        / np.sum(weights))


def project_1d_to_surface(node_values, net, segment_id, s):
    """
    Linear interpolation of the nodal 1D field along a segment. ``node_values``
    maps node ids to values.
    """
    segment = net.segments[segment_id]
    length, _ = net.segment_geometry(segment_id)
    if not -1e-12 * length <= s <= length * (1.0 + 1e-12):
        raise ValidationError("Arc length %r lies outside [0, %r]." % (s, length))
    t = min(max(s / length, 0.0), 1.0)
    return (1.0 - t) * node_values[segment.node_a] \
        + t * node_values[segment.node_b]


def interpolation_weights(coupling):
    """Per sample weights ``(w_a, w_b)`` of the projection onto the wall."""
    return 1.0 - coupling.fraction, coupling.fraction

