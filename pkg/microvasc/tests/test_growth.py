import json
import math
import time
import unittest

import numpy as np
from scipy import stats

from microvasc.exceptions import DomainError, ImproperlyConfigured
from microvasc.growth import GrowthParameters, GrowthSnapshot, \
    NetworkGenerator, OctantIndex, bifurcation_angles, bifurcation_decision, \
    bifurcation_probability, build_bifurcation_directions, check_and_insert, \
    collides, collides_brute_force, control_volume_averages, find_collisions, \
    growth_direction, murray_branch_radii, murray_radius, po2_gradient, \
    run_phase1, run_phase2, run_phase3, sample_length, sample_length_ratio, \
    segment_distance, small_radius
from microvasc.network import DomainBox, VascularNetwork, check_inside, \
    terminal_nodes
from microvasc.tests.factories import DESK_BOX, DESK_ROI, INLET_PRESSURE, \
    OUTLET_PRESSURE, SLOW_TESTS, UNIT_BOX, desk_model, random_network, \
    starter_network, um
from microvasc.tissue_grid import build_grid
from microvasc.units import MICROMETER

# Small caps keep a full three phase run at unit test speed.
QUICK_PARAMETERS = GrowthParameters(max_iter_p1=2, max_iter_p2=2,
    max_iter_p3=2)


def angle_between(a, b):
    return math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b)))


def check_growth_records(test, result, params):
    """Bifurcation angles follow the final radii and small radii stay bounded."""
    for record in result.diagnostics.bifurcations:
        angles = bifurcation_angles(record.parent_radius, record.r1, record.r2)
        test.assertAlmostEqual(angles.phi1, record.phi1, delta=1e-9)
        test.assertAlmostEqual(angles.phi2, record.phi2, delta=1e-9)
        kept = (record.d_b1, record.d_b2)[record.kept]
        phi = (record.phi1, record.phi2)[record.kept]
        test.assertAlmostEqual(angle_between(record.parent_orientation, kept),
            phi, delta=1e-9)
    for radius, parent, _ in result.diagnostics.small_radii:
        test.assertGreaterEqual(radius, min(params.min_radius, parent))
        test.assertLessEqual(radius, parent)


def check_phase3_stop(test, result, params):
    grown = result.pruned_network
    if result.iterations[3] < params.max_iter_p3:
        interior = [n for n in terminal_nodes(grown, DESK_BOX)
            if DESK_ROI.contains(grown.nodes[n].position)]
        test.assertLess(len(interior), params.p3_terminal_stop)


class SegmentDistanceTest(unittest.TestCase):

    def test_parallel(self):
        self.assertAlmostEqual(segment_distance((0, 0, 0), (1, 0, 0),
            (0, 1, 0), (1, 1, 0)), 1.0)
        self.assertAlmostEqual(segment_distance((0, 0, 0), (1, 0, 0),
            (2, 1, 0), (3, 1, 0)), math.sqrt(2.0))

    def test_skew(self):
        self.assertAlmostEqual(segment_distance((0, 0, 0), (1, 0, 0),
            (0.5, -1, 1), (0.5, 1, 1)), 1.0)

    def test_crossing(self):
        self.assertAlmostEqual(segment_distance((0, 0, 0), (1, 1, 0),
            (1, 0, 0), (0, 1, 0)), 0.0)

    def test_degenerate(self):
        self.assertAlmostEqual(segment_distance((0, 0, 0), (0, 0, 0),
            (3, 4, 0), (3, 4, 0)), 5.0)
        self.assertAlmostEqual(segment_distance((0, 0, 2), (0, 0, 2),
            (-1, 0, 0), (1, 0, 0)), 2.0)

    def test_against_sampling(self):
        rng = np.random.default_rng(21)
        t = np.linspace(0.0, 1.0, 401)
        for _ in range(20):
            p1, q1, p2, q2 = rng.uniform(-1.0, 1.0, (4, 3))
            first = p1 + np.outer(t, q1 - p1)
            second = p2 + np.outer(t, q2 - p2)
            sampled = np.min(np.linalg.norm(first[:, None] - second[None],
                axis=2))
            exact = segment_distance(p1, q1, p2, q2)
            self.assertLessEqual(exact, sampled + 1e-12)
            self.assertLess(sampled - exact, 1e-2)


class CollisionIndexTest(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.net = random_network(self.rng, segments=500)
        self.index = OctantIndex.from_network(self.net, UNIT_BOX)

    def _candidates(self, count):
        for _ in range(count):
            start = self.rng.uniform(0.0, 1.0, 3)
            end = start + self.rng.uniform(-0.15, 0.15, 3)
            yield start, end, float(self.rng.uniform(0.002, 0.01))

    def test_index_matches_brute_force(self):
        hits = 0
        for start, end, radius in self._candidates(1000):
            found = collides(self.net, self.index, start, end, radius)
            self.assertEqual(found, collides_brute_force(self.net, start, end,
                radius))
            hits += found is not None
        # Both outcomes are exercised.
        self.assertGreater(hits, 0)
        self.assertLess(hits, 1000)

    def test_index_after_removal(self):
        for segment_id in self.net.segment_ids()[::3]:
            self.index.discard(segment_id)
            self.net.remove_segment(segment_id)
        self.assertEqual(len(self.index), self.net.number_of_segments)
        for start, end, radius in self._candidates(300):
            self.assertEqual(collides(self.net, self.index, start, end, radius),
                collides_brute_force(self.net, start, end, radius))

    def test_segments_leaving_the_domain_are_indexed(self):
        net = VascularNetwork()
        a = net.add_node((0.9, 0.9, 0.9)).id
        b = net.add_node((1.2, 1.2, 1.2)).id
        net.add_segment(a, b, 0.01)
        index = OctantIndex.from_network(net, UNIT_BOX)
        self.assertEqual(collides(net, index, (1.1, 1.2, 1.1),
            (1.2, 1.1, 1.2), 0.05), 0)

    def test_check_and_insert(self):
        net = VascularNetwork()
        a = net.add_node((0.1, 0.5, 0.5)).id
        b = net.add_node((0.9, 0.5, 0.5)).id
        net.add_segment(a, b, 0.01)
        tip = net.add_node((0.5, 0.1, 0.5)).id
        index = OctantIndex.from_network(net, UNIT_BOX)
        self.assertIsNone(check_and_insert(net, index, tip, (0.5, 0.9, 0.5),
            0.01))
        self.assertEqual(net.number_of_segments, 1)
        self.assertEqual(len(net.nodes), 3)
        segment = check_and_insert(net, index, tip, (0.5, 0.3, 0.5), 0.01,
            boundary_pressure=100.0, boundary_po2=40.0)
        self.assertIsNotNone(segment)
        new_node = net.nodes[segment.node_b]
        self.assertEqual(new_node.boundary_pressure, 100.0)
        self.assertEqual(new_node.boundary_po2, 40.0)
        self.assertEqual(len(index), 2)
        # Links to existing nodes skip segments at the partner.
        link = check_and_insert(net, index, segment.node_b, a, 0.01)
        self.assertIsNotNone(link)
        self.assertEqual(find_collisions(net), [])


class BifurcationTest(unittest.TestCase):

    def test_symmetric_angles(self):
        radius = murray_radius(1.0, 3.0)
        self.assertAlmostEqual(radius, 2.0 ** (-1.0 / 3.0))
        angles = bifurcation_angles(1.0, radius, radius)
        self.assertAlmostEqual(angles.phi1, angles.phi2)
        self.assertAlmostEqual(math.cos(angles.phi1), 2.0 ** (-1.0 / 3.0))
        self.assertFalse(angles.clamped)

    def test_clamped_angles(self):
        angles = bifurcation_angles(1.0, 2.0, 1.0)
        self.assertTrue(angles.clamped)
        self.assertEqual(angles.phi1, 0.0)

    def test_directions(self):
        d_k = np.array([1.0, 0.0, 0.0])
        d_g = np.array([0.0, 1.0, 0.0])
        directions = build_bifurcation_directions(d_k, d_g, 0.6, 0.8)
        np.testing.assert_allclose(directions.normal, (0.0, 0.0, 1.0))
        self.assertEqual(directions.kept, 1)
        np.testing.assert_allclose(directions.d_b2,
            (math.cos(0.8), -math.sin(0.8), 0.0), atol=1e-12)
        self.assertAlmostEqual(angle_between(d_k, directions.d_b2), 0.8,
            delta=1e-9)
        expected = np.array([math.cos(0.6), math.sin(0.6) + 1.0, 0.0])
        np.testing.assert_allclose(directions.d_b1,
            expected / np.linalg.norm(expected), atol=1e-12)
        for vector in directions[:2]:
            self.assertAlmostEqual(np.linalg.norm(vector), 1.0)
        self.assertFalse(directions.degenerate)

    def test_degenerate_plane(self):
        d_k = np.array([0.0, 0.0, 1.0])
        directions = build_bifurcation_directions(d_k, d_k, 0.5, 0.5,
            np.random.default_rng(4))
        self.assertTrue(directions.degenerate)
        self.assertAlmostEqual(float(np.dot(directions.normal, d_k)), 0.0)
        self.assertAlmostEqual(angle_between(d_k,
            (directions.d_b1, directions.d_b2)[directions.kept]), 0.5,
            delta=1e-9)

    def test_growth_direction(self):
        parent = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(growth_direction(np.zeros(3), parent),
            parent)
        np.testing.assert_allclose(growth_direction((-2.0, 0.0, 0.0), parent),
            parent)
        np.testing.assert_allclose(growth_direction((0.0, 5.0, 0.0), parent),
            np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0))
        np.testing.assert_allclose(growth_direction((0.0, 5.0, 0.0), parent,
            lambda_g=0.0), (0.0, 1.0, 0.0))


class SamplingTest(unittest.TestCase):

    def test_length_ratio_distribution(self):
        rng = np.random.default_rng(11)
        params = GrowthParameters()
        ratios = [sample_length_ratio(rng, params) for _ in range(10000)]
        result = stats.kstest(ratios,
            stats.lognorm(s=0.3, scale=math.exp(2.4)).cdf)
        self.assertGreater(result.pvalue, 0.01)
        self.assertGreater(sample_length(3e-6, rng), 0.0)
        with self.assertRaises(DomainError):
            sample_length(0.0, rng)

    def test_small_radius_distribution(self):
        rng = np.random.default_rng(12)
        draws = [small_radius(10 * MICROMETER, rng) for _ in range(10000)]
        raw = [d[1] for d in draws]
        result = stats.kstest(raw, stats.norm(2.75e-6, 0.25e-6).cdf)
        self.assertGreater(result.pvalue, 0.01)
        for radius, _ in draws:
            self.assertGreaterEqual(radius, 2.0 * MICROMETER)
        radius, _ = small_radius(2.2 * MICROMETER, rng)
        self.assertLessEqual(radius, 2.2 * MICROMETER)

    def test_branch_radii(self):
        rng = np.random.default_rng(13)
        parent = 6.0 * MICROMETER
        center = murray_radius(parent, 3.0)
        radii = np.array([murray_branch_radii(parent, 3.0, rng)
            for _ in range(1000)]).ravel()
        self.assertTrue(np.all((radii > 0.0) & (radii <= parent)))
        self.assertLess(abs(np.mean(radii) - center),
            4 * center / 32.0 / math.sqrt(radii.size))

    def test_bifurcation_probability(self):
        params = GrowthParameters()
        self.assertAlmostEqual(bifurcation_probability(math.exp(2.4), params),
            0.5)
        self.assertFalse(bifurcation_decision(math.exp(2.4)))
        self.assertTrue(bifurcation_decision(math.exp(2.4 + 3 * 0.3)))
        with self.assertRaises(DomainError):
            bifurcation_probability(0.0, params)

    def test_parameters(self):
        for kwargs in ({'gamma': 5.0}, {'p_th': 1.0}, {'sigma_r': 0.0},
                {'min_radius': 4e-6}, {'cone_angle': 7.0}):
            with self.assertRaises(ImproperlyConfigured):
                GrowthParameters(**kwargs)
        self.assertEqual(GrowthParameters().cv_count, 64)


class FieldTest(unittest.TestCase):

    def setUp(self):
        self.grid = build_grid(UNIT_BOX, (4, 4, 4))
        self.linear = self.grid.centers()[:, 0] * 8.0

    def test_gradient(self):
        for position in ((0.1, 0.5, 0.5), (0.6, 0.2, 0.9), (0.99, 0.5, 0.5)):
            np.testing.assert_allclose(po2_gradient(self.grid, self.linear,
                np.array(position)), (8.0, 0.0, 0.0), atol=1e-12)

    def test_control_volumes(self):
        field = control_volume_averages(self.grid, self.linear, UNIT_BOX,
            cv_per_axis=2)
        self.assertAlmostEqual(field.po2_roi, 4.0)
        np.testing.assert_allclose(field.averages[0], 2.0)
        np.testing.assert_allclose(field.averages[1], 6.0)
        self.assertAlmostEqual(float(np.sum(field.volumes)), 1.0)
        self.assertEqual(field.index_of((0.9, 0.1, 0.6)), (1, 0, 1))
        self.assertEqual(field.index_of((-1.0, 2.0, 0.5)), (0, 1, 1))

    def test_partial_overlap(self):
        roi = DomainBox((0.1, 0.1, 0.1), (0.9, 0.9, 0.9))
        field = control_volume_averages(self.grid, self.linear, roi)
        self.assertAlmostEqual(field.po2_roi, 4.0)
        self.assertAlmostEqual(float(np.sum(field.volumes)), roi.volume)
        self.assertEqual(field.averages.shape, (4, 4, 4))


class GeneratorStepTest(unittest.TestCase):

    def setUp(self):
        self.model = desk_model(cells=(4, 4, 4))

    def test_link_terminals(self):
        net = VascularNetwork()
        inlet = net.add_node(um(0, 200, 250), boundary_pressure=INLET_PRESSURE)
        tip_a = net.add_node(um(200, 200, 250))
        outlet = net.add_node(um(500, 230, 250),
            boundary_pressure=OUTLET_PRESSURE)
        tip_b = net.add_node(um(260, 230, 250))
        net.add_segment(inlet.id, tip_a.id, 5 * MICROMETER)
        net.add_segment(outlet.id, tip_b.id, 5 * MICROMETER)
        params = GrowthParameters(link_mu=100 * MICROMETER, link_sigma=1e-12)
        generator = NetworkGenerator(net, self.model, params, seed=1)
        self.assertEqual(generator.link_terminals(), 1)
        linked = generator.net
        self.assertEqual(linked.number_of_segments, 3)
        self.assertEqual(linked.neighbours(tip_a.id), [inlet.id, tip_b.id])
        self.assertEqual(terminal_nodes(linked, DESK_BOX), [])
        # The input network is never modified.
        self.assertEqual(net.number_of_segments, 2)

    def test_link_needs_a_partner_in_the_cone(self):
        net = VascularNetwork()
        inlet = net.add_node(um(0, 200, 250), boundary_pressure=INLET_PRESSURE)
        tip = net.add_node(um(200, 200, 250))
        behind = net.add_node(um(0, 350, 250), boundary_pressure=OUTLET_PRESSURE)
        net.add_segment(inlet.id, tip.id, 5 * MICROMETER)
        net.add_segment(behind.id, net.add_node(um(100, 350, 250)).id,
            5 * MICROMETER)
        params = GrowthParameters(link_mu=150 * MICROMETER, link_sigma=1e-12)
        generator = NetworkGenerator(net, self.model, params, seed=1)
        self.assertEqual(generator.link_terminals(), 0)

    def test_prune_terminals(self):
        net = VascularNetwork()
        ids = [net.add_node(um(x, 250, 250),
            boundary_pressure=INLET_PRESSURE if x == 0 else None).id
            for x in (0, 100, 200)]
        net.add_segment(ids[0], ids[1], 5 * MICROMETER)
        net.add_segment(ids[1], ids[2], 5 * MICROMETER)
        generator = NetworkGenerator(net, self.model, seed=1)
        self.assertEqual(generator.prune_terminals(), 1)
        self.assertNotIn(ids[2], generator.net.nodes)
        self.assertEqual(len(generator.octants), 1)
        self.assertEqual(generator.prune_terminals(), 1)
        self.assertEqual(generator.net.number_of_segments, 0)

    def test_pruning_moves_boundary_data(self):
        net = VascularNetwork()
        face = net.add_node(um(0, 250, 250), boundary_pressure=INLET_PRESSURE)
        middle = net.add_node(um(100, 250, 250))
        tip = net.add_node(um(200, 250, 250), boundary_pressure=5000.0,
            boundary_po2=50.0)
        net.add_segment(face.id, middle.id, 5 * MICROMETER)
        net.add_segment(middle.id, tip.id, 5 * MICROMETER)
        generator = NetworkGenerator(net, self.model, seed=1)
        generator.prune_terminals()
        exposed = generator.net.nodes[middle.id]
        self.assertEqual(exposed.boundary_pressure, 5000.0)
        self.assertEqual(exposed.boundary_po2, 50.0)

    def test_small_bifurcation_uses_final_radii(self):
        net = VascularNetwork()
        inlet = net.add_node(um(0, 250, 250), boundary_pressure=INLET_PRESSURE)
        tip = net.add_node(um(150, 250, 250))
        parent = net.add_segment(inlet.id, tip.id, 3.2 * MICROMETER)
        generator = NetworkGenerator(net, self.model,
            GrowthParameters(p_th=1e-9), seed=3)
        po2_t = np.full(self.model.grid.number_of_cells, 30.0)
        self.assertEqual(generator.grow_tip(tip.id, po2_t, small=True), 2)

        (record,) = generator.diagnostics.bifurcations
        redrawn = [radius for radius, _, _ in generator.diagnostics.small_radii]
        self.assertEqual(redrawn, [record.r1, record.r2])
        self.assertEqual(record.parent_radius, 3.2 * MICROMETER)
        angles = bifurcation_angles(record.parent_radius, record.r1, record.r2)
        self.assertEqual((angles.phi1, angles.phi2), (record.phi1, record.phi2))
        children = sorted(generator.net.segments[s].radius
            for s in generator.net.incident(tip.id) if s != parent.id)
        self.assertEqual(children, sorted([record.r1, record.r2]))
        for radius in children:
            self.assertGreaterEqual(radius, 2.0 * MICROMETER)
            self.assertLessEqual(radius, 3.2 * MICROMETER)

    def test_run_phase3_clips(self):
        clipped = run_phase3(starter_network(), self.model, QUICK_PARAMETERS,
            rng=np.random.default_rng(0))
        check_inside(clipped, DESK_ROI)

    def test_run_phase1(self):
        net = starter_network()
        grown = run_phase1(net, self.model, QUICK_PARAMETERS,
            rng=np.random.default_rng(3))
        self.assertEqual(net.number_of_segments, 8)
        self.assertGreaterEqual(grown.number_of_segments, 8)
        self.assertEqual(find_collisions(grown), [])
        grown.check_adjacency()
        check_inside(grown, DESK_BOX)

    def test_run_phase2(self):
        grown = run_phase2(starter_network(), self.model, QUICK_PARAMETERS,
            rng=np.random.default_rng(4))
        self.assertEqual(find_collisions(grown), [])
        check_inside(grown, DESK_BOX)
        for segment in grown.segments.values():
            self.assertGreater(segment.radius, 0.0)
            self.assertLessEqual(segment.radius, 8 * MICROMETER)


class NetworkGeneratorTest(unittest.TestCase):

    def _generate(self, seed):
        model = desk_model(cells=(6, 6, 6))
        generator = NetworkGenerator(starter_network(), model, QUICK_PARAMETERS,
            seed=seed)
        return generator.run()

    def test_run_invariants(self):
        result = self._generate(seed=5)
        params = QUICK_PARAMETERS
        grown = result.pruned_network
        self.assertGreater(sum(row.new_vessels for row in result.trace), 0)
        self.assertEqual(find_collisions(grown), [])
        grown.check_adjacency()
        check_inside(result.network, DESK_ROI)
        check_growth_records(self, result, params)

        self.assertLessEqual(result.iterations[1], params.max_iter_p1)
        self.assertLessEqual(result.iterations[2], params.max_iter_p2)
        self.assertLessEqual(result.iterations[3], params.max_iter_p3)
        self.assertEqual(len(result.trace), result.total_iterations)
        self.assertEqual([row.phase for row in result.trace],
            sorted(row.phase for row in result.trace))
        check_phase3_stop(self, result, params)
        self.assertGreaterEqual(float(np.min(result.solution.oxygen.po2_t)),
            -1e-6)

    def test_same_seed_same_network(self):
        first = self._generate(seed=9)
        second = self._generate(seed=9)
        self.assertEqual(first.network.to_dict(), second.network.to_dict())
        self.assertEqual([r.po2_roi for r in first.trace],
            [r.po2_roi for r in second.trace])

    def test_checkpoints(self):
        snapshots = []
        model = desk_model(cells=(6, 6, 6))
        generator = NetworkGenerator(starter_network(), model, QUICK_PARAMETERS,
            seed=2, checkpoint=lambda snapshot: snapshots.append(
                (snapshot.progress, snapshot.network.number_of_segments,
                snapshot.row.segments)))
        result = generator.run(phases=(1,))
        self.assertEqual(len(snapshots), result.iterations[1])
        for progress, segments, recorded in snapshots:
            self.assertEqual(progress.phase, 1)
            self.assertEqual(segments, recorded)
        self.assertEqual([p.iteration for p, _, _ in snapshots],
            list(range(1, len(snapshots) + 1)))
        self.assertEqual(result.iterations[2], 0)

    def test_resume_matches_uninterrupted_run(self):
        model = desk_model(cells=(6, 6, 6))
        saved = []

        def keep(snapshot):
            payload = json.loads(json.dumps(snapshot.as_dict()))
            saved.append((payload, snapshot.warm_start()))

        full = NetworkGenerator(starter_network(), model, QUICK_PARAMETERS,
            seed=7, checkpoint=keep).run()
        phase_1 = [item for item in saved if item[0]['phase'] == 1]
        phase_2 = [item for item in saved if item[0]['phase'] == 2]
        for payload, warm_start in (phase_1[-1], phase_2[0]):
            snapshot = GrowthSnapshot.from_dict(payload, warm_start)
            resumed = NetworkGenerator.from_snapshot(snapshot, model,
                QUICK_PARAMETERS).run(resume=snapshot.progress)
            self.assertEqual(resumed.network.to_dict(), full.network.to_dict())
            self.assertEqual(resumed.pruned_network.to_dict(),
                full.pruned_network.to_dict())
            self.assertEqual(resumed.trace, full.trace)
            self.assertEqual(resumed.iterations, full.iterations)
            np.testing.assert_array_equal(resumed.solution.oxygen.po2_t,
                full.solution.oxygen.po2_t)

    def test_resume_after_last_iteration(self):
        model = desk_model(cells=(6, 6, 6))
        saved = []
        full = NetworkGenerator(starter_network(), model, QUICK_PARAMETERS,
            seed=8, checkpoint=lambda snapshot: saved.append(
                GrowthSnapshot.from_dict(snapshot.as_dict(),
                snapshot.warm_start()))).run(phases=(1,))
        last = saved[-1]
        resumed = NetworkGenerator.from_snapshot(last, model,
            QUICK_PARAMETERS).run(phases=(1,), resume=last.progress)
        self.assertEqual(resumed.trace, full.trace)
        self.assertEqual(resumed.network.to_dict(), full.network.to_dict())


@unittest.skipUnless(SLOW_TESTS, "set MICROVASC_SLOW_TESTS=1 to run")
class FullGrowthTest(unittest.TestCase):
    """A complete run with the default iteration caps on the 20^3 grid."""

    def test_full_run(self):
        params = GrowthParameters()
        model = desk_model(cells=(20, 20, 20))
        start = model.evaluate(starter_network())
        start_po2 = control_volume_averages(model.grid, start.oxygen.po2_t,
            DESK_ROI).po2_roi

        started = time.perf_counter()
        result = NetworkGenerator(starter_network(), model, params=params,
            seed=0).run()
        self.assertLess(time.perf_counter() - started, 600.0)

        self.assertEqual(find_collisions(result.pruned_network), [])
        check_growth_records(self, result, params)
        check_phase3_stop(self, result, params)
        self.assertLessEqual(result.total_iterations,
            params.max_iter_p1 + params.max_iter_p2 + params.max_iter_p3)
        final_po2 = control_volume_averages(model.grid,
            result.solution.oxygen.po2_t, DESK_ROI).po2_roi
        self.assertGreater(final_po2, start_po2)
