import numpy as np
import pytest

from varidyn.fields import SymTensorField
from varidyn.systems import GeodesicSelector, NewtonianSystem, StationaryMetric


def flat_metric(n=1, c=1.0):
    return StationaryMetric(n, SymTensorField.diagonal(n, [1.0] + [-1.0] * n), c=c)


def metric(n, upper, **kw):
    """Stationary metric from ``{(a, b): expression}`` with ``a <= b`` over ``n`` coordinates."""
    return StationaryMetric(n, SymTensorField.from_upper(n, upper, n + 1), **kw)


def free_system(n=2):
    return NewtonianSystem.build(n)


def kepler_system(k=1.0):
    return NewtonianSystem.build(2, V=f"-{k!r}/sqrt(q1^2 + q2^2)")


UNIT = GeodesicSelector(m=1.0, epsilon=1, c=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
