import math
import unittest

import numpy as np

from microvasc.exceptions import ValidationError
from microvasc.network import VascularNetwork
from microvasc.statistics import QUANTITIES, RunStatistics, histogram, \
    length_histogram, network_characteristics, prefix_means, \
    radius_histogram, running_means, summarize, tissue_averages
from microvasc.tests.factories import UNIT_BOX, vessel_chain
from microvasc.tissue_grid import build_grid
from microvasc.units import MICROMETER


class FakeField(object):

    def __init__(self, **fields):
        self.__dict__.update(fields)


def sample_run(value, iterations=10):
    return RunStatistics(L=value, A=2 * value, V=3 * value, N_seg=int(value),
        PO2_roi=value, p_t_roi=-value, F_tv=0.5 * value, N_it=iterations)


class StatisticsTest(unittest.TestCase):

    def test_single_segment(self):
        net = VascularNetwork()
        net.add_node((0.0, 0.0, 0.0), boundary_pressure=1.0)
        net.add_node((1e-4, 0.0, 0.0), boundary_pressure=2.0)
        net.add_segment(0, 1, 5e-6)
        length, area, volume, count = network_characteristics(net)
        self.assertAlmostEqual(length, 1e-4)
        self.assertAlmostEqual(area / (2 * math.pi * 5e-6 * 1e-4), 1.0,
            places=12)
        self.assertAlmostEqual(volume / (math.pi * 25e-12 * 1e-4), 1.0,
            places=12)
        self.assertEqual(count, 1)

    def test_empty_network(self):
        self.assertEqual(network_characteristics(VascularNetwork()),
            (0.0, 0.0, 0.0, 0))
        with self.assertRaises(ValidationError):
            radius_histogram(VascularNetwork())

    def test_histogram(self):
        hist = histogram([1.0, 1.0, 3.0], 1.0)
        self.assertEqual(list(hist.bins.items()), [(1.0, 2), (3.0, 1)])
        self.assertEqual(hist.count, 3)
        self.assertAlmostEqual(hist.mean, 5.0 / 3.0)
        self.assertAlmostEqual(hist.std, math.sqrt(4.0 / 3.0))
        self.assertEqual(hist.rows(), [(1.0, 2.0, 2), (3.0, 4.0, 1)])
        self.assertEqual(histogram([2.5], 1.0).std, 0.0)
        for values, width in (([], 1.0), ([1.0], 0.0)):
            with self.assertRaises(ValidationError):
                histogram(values, width)

    def test_network_histograms(self):
        net = vessel_chain(segments=4, length=100 * MICROMETER)
        radii = radius_histogram(net)
        self.assertEqual(radii.count, 4)
        self.assertEqual(radii.bin_width, 0.25 * MICROMETER)
        self.assertAlmostEqual(radii.mean / MICROMETER, 5.0)
        lengths = length_histogram(net)
        self.assertEqual(lengths.count, 4)
        self.assertAlmostEqual(lengths.mean / MICROMETER, 25.0)

    def test_prefix_means(self):
        np.testing.assert_allclose(prefix_means([2.0, 4.0]), [2.0, 3.0])
        rng = np.random.default_rng(5)
        values = rng.uniform(size=50)
        means = prefix_means(values)
        # q_m_i = q_m_{i-1} + (q_i - q_m_{i-1}) / i
        for i in range(1, len(values)):
            self.assertAlmostEqual(means[i],
                means[i - 1] + (values[i] - means[i - 1]) / (i + 1))
        with self.assertRaises(ValidationError):
            prefix_means([])

    def test_running_means(self):
        means = running_means([sample_run(2.0), sample_run(4.0)])
        self.assertEqual(len(means), 2)
        self.assertEqual(list(means.means), list(QUANTITIES))
        self.assertEqual(means.rows()[1][:3], [3.0, 6.0, 9.0])
        np.testing.assert_allclose(means.means['p_t_roi'], [-2.0, -3.0])
        with self.assertRaises(ValidationError):
            running_means([])

    def test_summarize(self):
        summary = summarize([sample_run(1.0), sample_run(3.0)])
        self.assertEqual(summary['L'], (2.0, math.sqrt(2.0)))
        self.assertEqual(summary['N_it'], (10.0, 0.0))
        self.assertEqual(summarize([sample_run(1.0)])['F_tv'], (0.5, 0.0))

    def test_row_round_trip(self):
        run = sample_run(7.0)
        self.assertEqual(RunStatistics.from_dict(run.as_dict()), run)
        self.assertEqual(run.as_row()[0], 7.0)

    def test_tissue_averages(self):
        grid = build_grid(UNIT_BOX, (4, 4, 4))
        flow = FakeField(p_t=np.full(64, 133.322), F_tv=2.5)
        oxygen = FakeField(po2_t=np.full(64, 30.0))
        po2, pressure, f_tv = tissue_averages(grid, flow, oxygen, UNIT_BOX)
        self.assertAlmostEqual(po2, 30.0)
        self.assertAlmostEqual(pressure, 1.0)
        self.assertEqual(f_tv, 2.5)
