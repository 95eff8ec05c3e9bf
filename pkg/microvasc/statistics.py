"""
Quantities of interest of a generated network, histograms and running means
over repeated seeded runs.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ValidationError
from .growth import region_average
from .units import MICROMETER, pa_to_mmhg

QUANTITIES = ('L', 'A', 'V', 'N_seg', 'PO2_roi', 'p_t_roi', 'F_tv', 'N_it')

RADIUS_BIN_WIDTH = 0.25 * MICROMETER
LENGTH_BIN_WIDTH = 5.0 * MICROMETER


@dataclass(frozen=True)
class RunStatistics:
    L: float
    A: float
    V: float
    N_seg: int
    PO2_roi: float
    p_t_roi: float
    F_tv: float
    N_it: int

    def as_dict(self):
        return asdict(self)

    def as_row(self):
        return [getattr(self, name) for name in QUANTITIES]

    @classmethod
    def from_dict(cls, data):
        return cls(**dict((name, data[name]) for name in QUANTITIES))


def network_characteristics(net):
    """Total length, lateral surface, volume and segment count."""
    _, _, _, radius, length = net.segment_arrays()
    return (float(np.sum(length)),
        float(np.sum(2.0 * np.pi * radius * length)),
        float(np.sum(np.pi * radius ** 2 * length)),
        net.number_of_segments)


@dataclass
class Histogram:
    bin_width: float
    bins: OrderedDict
    mean: float
    std: float

    @property
    def count(self):
        return int(sum(self.bins.values()))

    def rows(self):
        return [(left, left + self.bin_width, count)
            for left, count in self.bins.items()]


def histogram(values, bin_width):
    """
    Counts per bin of width ``bin_width`` aligned to zero, keyed by the left
    bin edge. Only occupied bins are listed. ``std`` is the sample standard
    deviation and 0 for a single value.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("Cannot build a histogram of no values.")
    if not bin_width > 0.0:
        raise ValidationError("Histogram bin width must be positive.")
    indices = np.floor(values / bin_width).astype(np.int64)
    edges, counts = np.unique(indices, return_counts=True)
    bins = OrderedDict((float(edge) * bin_width, int(count))
        for edge, count in zip(edges, counts))
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return Histogram(bin_width, bins, float(np.mean(values)), std)


def radius_histogram(net, bin_width=RADIUS_BIN_WIDTH):
    _, _, _, radius, _ = net.segment_arrays()
    return histogram(radius, bin_width)


def length_histogram(net, bin_width=LENGTH_BIN_WIDTH):
    _, _, _, _, length = net.segment_arrays()
    return histogram(length, bin_width)


def tissue_averages(grid, flow, oxygen, roi):
    """
    Returns ``(PO2_roi [mmHg], p_t_roi [mmHg], F_tv [ug/s])`` with volume
    weighted averages over ``roi``.
    """
    po2, _ = region_average(grid, oxygen.po2_t, roi)
    pressure, _ = region_average(grid, flow.p_t, roi)
    return float(po2[0, 0, 0]), float(pa_to_mmhg(pressure[0, 0, 0])), \
        float(flow.F_tv)


def run_statistics(result, grid, roi):
    """Statistics row of one growth run."""
    length, area, volume, count = network_characteristics(result.network)
    po2_roi, p_t_roi, f_tv = tissue_averages(grid, result.solution.flow,
        result.solution.oxygen, roi)
    return RunStatistics(length, area, volume, count, po2_roi, p_t_roi, f_tv,
        result.total_iterations)


def prefix_means(values):
    """``q_m_i = (1 / i) sum_{n <= i} q_n`` for every prefix."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("Running means need at least one sample.")
    return np.cumsum(values) / np.arange(1, values.size + 1)


@dataclass
class RunningMeans:
    means: OrderedDict

    def __len__(self):
        return len(next(iter(self.means.values())))

    def rows(self):
        return [[float(self.means[name][i]) for name in QUANTITIES]
            for i in range(len(self))]


def running_means(samples):
    """Prefix means per quantity over a sequence of ``RunStatistics``."""
    samples = list(samples)
    if not samples:
        raise ValidationError("Running means need at least one sample.")
    return RunningMeans(OrderedDict((name,
        prefix_means([getattr(s, name) for s in samples]))
        for name in QUANTITIES))


def summarize(samples):
    """Mean and sample standard deviation per quantity."""
    samples = list(samples)
    if not samples:
        raise ValidationError("Cannot summarize an empty set of runs.")
    summary = OrderedDict()
    for name in QUANTITIES:
        values = np.array([getattr(s, name) for s in samples], dtype=float)
        std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        summary[name] = (float(np.mean(values)), std)
    return summary
