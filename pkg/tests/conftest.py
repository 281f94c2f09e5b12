import math

import pytest

from placeopt import FieldModel, Location, Polygon, SensorReading, point_in_polygon

REGION_VERTICES = [(0, 2), (3, 0), (8, 1), (10, 5), (7, 9), (2, 10), (0, 6)]


def synthetic_field_value(x, y):
    return 12.0 + 6.0 * math.sin(0.7 * x) + 4.0 * math.cos(0.9 * y)


def build_region_polygon():
    return Polygon(tuple(Location(float(x), float(y)) for x, y in REGION_VERTICES))


def build_field_model(poly):
    readings = []
    for x in range(1, 10, 2):
        for y in range(1, 10, 2):
            if point_in_polygon(poly, Location(float(x), float(y))):
                readings.append(SensorReading(Location(float(x), float(y)),
                                              synthetic_field_value(x, y)))
    return FieldModel(tuple(readings))


@pytest.fixture(scope="session")
def region_polygon():
    return build_region_polygon()


@pytest.fixture(scope="session")
def field_model(region_polygon):
    return build_field_model(region_polygon)
