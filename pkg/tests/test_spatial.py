import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from placeopt import (DomainError, FieldModel, GenerationError, Location,
                      ParseError, Polygon, ProblemInstance, SensorReading,
                      generate_instance, idw_estimate, mae, point_in_polygon,
                      read_instance, read_polygon, read_seed_readings,
                      score_network, write_instance, write_polygon,
                      write_seed_readings)
from helpers import make_instance, ref_score


def reading(x, y, z):
    return SensorReading(Location(x, y), z)


class TestIdwEstimate:
    def test_equidistant_symmetry(self):
        sensors = [reading(0, 0, 10.0), reading(2, 0, 20.0)]
        assert idw_estimate(sensors, Location(1, 0)) == pytest.approx(15.0, abs=1e-12)

    def test_hand_weights(self):
        # w = (1, 0.5) -> (10 + 10) / 1.5
        sensors = [reading(0, 0, 10.0), reading(3, 0, 20.0)]
        assert idw_estimate(sensors, Location(1, 0)) == pytest.approx(40.0 / 3.0, abs=1e-12)

    def test_single_sensor(self):
        assert idw_estimate([reading(5, 5, 7.3)], Location(-3, 12)) == 7.3

    def test_coincident_query_short_circuit(self):
        sensors = [reading(0, 0, 1.0), reading(1, 1, 9.0)]
        assert idw_estimate(sensors, Location(1, 1)) == 9.0
        assert idw_estimate(sensors, Location(1 + 1e-12, 1)) == 9.0

    def test_empty_sensor_list(self):
        with pytest.raises(DomainError):
            idw_estimate([], Location(0, 0))

    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50),
                              st.floats(-40, 40)), min_size=1, max_size=8),
           st.floats(-60, 60), st.floats(-60, 60))
    @settings(max_examples=60, deadline=None)
    def test_convex_combination_bounds(self, triples, qx, qy):
        sensors = [reading(x, y, z) for x, y, z in triples]
        est = idw_estimate(sensors, Location(qx, qy))
        values = [z for _, _, z in triples]
        assert min(values) - 1e-9 <= est <= max(values) + 1e-9


class TestMae:
    def test_exact_prediction(self):
        assert mae([1, 2, 3], [1, 2, 3]) == 0.0

    def test_hand_case(self):
        assert mae([1, 2], [2, 4]) == pytest.approx(1.5, abs=1e-15)

    def test_single_term(self):
        assert mae([5.0], [3.0]) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            mae([1, 2], [1, 2, 3])

    def test_empty(self):
        with pytest.raises(DomainError):
            mae([], [])

    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
                    min_size=1, max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_nonnegative_and_zero_iff_equal(self, pairs):
        t = [a for a, _ in pairs]
        p = [b for _, b in pairs]
        value = mae(t, p)
        assert value >= 0.0
        assert (value == 0.0) == all(a == b for a, b in pairs)


class TestScoreNetwork:
    def test_constant_field_scores_zero(self):
        locs = tuple(Location(float(i), 0.0) for i in range(4))
        evals = (reading(0.5, 2.0, 5.0), reading(3.0, -1.0, 5.0))
        inst = ProblemInstance(locs, np.full(4, 5.0), evals, 2, 2)
        assert score_network(inst, [0, 3]) == 0.0
        assert score_network(inst, [1, 2]) == 0.0

    def test_matches_bruteforce_over_all_placements(self):
        rng = np.random.default_rng(11)
        inst = make_instance(rng, 3, 1, 4)
        for combo in itertools.combinations(range(4), 3):
            assert score_network(inst, list(combo)) == pytest.approx(
                ref_score(inst, combo), abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        inst = make_instance(rng, 3, 2, 3)
        assert score_network(inst, [4, 0, 2]) == score_network(inst, [2, 4, 0])

    def test_bad_indices(self):
        rng = np.random.default_rng(4)
        inst = make_instance(rng, 2, 2, 2)
        with pytest.raises(DomainError):
            score_network(inst, [0, 0])
        with pytest.raises(DomainError):
            score_network(inst, [0, 4])
        with pytest.raises(DomainError):
            score_network(inst, [0])


def unit_square():
    return Polygon((Location(0, 0), Location(1, 0), Location(1, 1), Location(0, 1)))


class TestPointInPolygon:
    def test_interior(self):
        assert point_in_polygon(unit_square(), Location(0.5, 0.5))

    def test_exterior(self):
        assert not point_in_polygon(unit_square(), Location(2, 2))

    def test_boundary_counts_as_inside(self):
        assert point_in_polygon(unit_square(), Location(1.0, 0.5))
        assert point_in_polygon(unit_square(), Location(0.0, 0.0))

    def test_concave_polygon(self):
        # L-shape: the notch at (0.75, 0.75) lies outside.
        poly = Polygon((Location(0, 0), Location(1, 0), Location(1, 0.5),
                        Location(0.5, 0.5), Location(0.5, 1), Location(0, 1)))
        assert point_in_polygon(poly, Location(0.25, 0.75))
        assert not point_in_polygon(poly, Location(0.75, 0.75))

    def test_degenerate_polygons_rejected(self):
        with pytest.raises(DomainError):
            Polygon((Location(0, 0), Location(1, 1)))
        with pytest.raises(DomainError):  # collinear, zero area
            Polygon((Location(0, 0), Location(1, 1), Location(2, 2)))
        with pytest.raises(DomainError):  # bowtie self-intersection
            Polygon((Location(0, 0), Location(1, 1), Location(1, 0), Location(0, 1)))


class TestGenerateInstance:
    def test_deterministic(self, field_model, region_polygon):
        a = generate_instance(field_model, region_polygon, 3, 4, 2, rng_seed=42)
        b = generate_instance(field_model, region_polygon, 3, 4, 2, rng_seed=42)
        assert np.array_equal(a.coords, b.coords)
        assert np.array_equal(a.truth, b.truth)
        assert np.array_equal(a.eval_xy, b.eval_xy)
        c = generate_instance(field_model, region_polygon, 3, 4, 2, rng_seed=43)
        assert not np.array_equal(a.coords, c.coords)

    def test_all_points_inside(self, field_model, region_polygon):
        inst = generate_instance(field_model, region_polygon, 5, 6, 4, rng_seed=7)
        for loc in inst.all_locations:
            assert point_in_polygon(region_polygon, loc)
        for r in inst.eval_points:
            assert point_in_polygon(region_polygon, r.location)

    def test_truth_within_field_range(self, field_model, region_polygon):
        lo = field_model.values.min()
        hi = field_model.values.max()
        for seed in range(10):
            inst = generate_instance(field_model, region_polygon, 4, 4, 3, rng_seed=seed)
            assert inst.truth.min() >= lo - 1e-9
            assert inst.truth.max() <= hi + 1e-9
            for r in inst.eval_points:
                assert lo - 1e-9 <= r.value <= hi + 1e-9

    def test_retry_cap(self, field_model):
        sliver = Polygon((Location(0, 0), Location(1, 1), Location(1, 1 - 1e-7)))
        with pytest.raises(GenerationError):
            generate_instance(field_model, sliver, 1, 1, 1, rng_seed=0)


class TestInstanceInvariants:
    def test_duplicate_locations_rejected(self):
        locs = (Location(0, 0), Location(0, 0), Location(1, 1))
        with pytest.raises(DomainError):
            ProblemInstance(locs, np.zeros(3), (reading(5, 5, 1.0),), 2, 1)

    def test_eval_overlap_rejected(self):
        locs = (Location(0, 0), Location(1, 0), Location(2, 0))
        with pytest.raises(DomainError):
            ProblemInstance(locs, np.zeros(3), (reading(1, 0, 1.0),), 2, 1)

    def test_counts_must_match(self):
        locs = (Location(0, 0), Location(1, 0))
        with pytest.raises(DomainError):
            ProblemInstance(locs, np.zeros(2), (reading(5, 5, 1.0),), 2, 1)


class TestFileIO:
    def test_instance_roundtrip(self, tmp_path, field_model, region_polygon):
        inst = generate_instance(field_model, region_polygon, 3, 4, 2, rng_seed=5)
        path = tmp_path / "inst.txt"
        write_instance(inst, path)
        back = read_instance(path)
        assert back.n == inst.n and back.m == inst.m and back.q == inst.q
        assert np.array_equal(back.coords, inst.coords)
        assert np.array_equal(back.truth, inst.truth)
        assert np.array_equal(back.eval_values, inst.eval_values)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2,1,1\n0.0,0.0,1.0\n1.0,oops,2.0\n2.0,0.0,1.5\n9.0,9.0,1.2\n")
        with pytest.raises(ParseError) as err:
            read_instance(path)
        assert err.value.line == 3

    def test_header_error(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2,1\n")
        with pytest.raises(ParseError) as err:
            read_instance(path)
        assert err.value.line == 1

    def test_seed_readings_roundtrip(self, tmp_path, field_model):
        path = tmp_path / "readings.txt"
        write_seed_readings(field_model.seed_readings, path)
        back = read_seed_readings(path)
        assert np.array_equal(back.xy, field_model.xy)
        assert np.array_equal(back.values, field_model.values)

    def test_polygon_roundtrip(self, tmp_path, region_polygon):
        path = tmp_path / "poly.txt"
        write_polygon(region_polygon, path)
        back = read_polygon(path)
        assert np.array_equal(back.vx, region_polygon.vx)
        assert np.array_equal(back.vy, region_polygon.vy)


class TestFieldModel:
    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            FieldModel(())

    def test_duplicate_coordinates_rejected(self):
        with pytest.raises(DomainError):
            FieldModel((reading(0, 0, 1.0), reading(0, 0, 2.0)))

    def test_estimate_interpolates_seeds(self, field_model):
        r = field_model.seed_readings[0]
        assert field_model.estimate(r.location.x, r.location.y) == r.value
