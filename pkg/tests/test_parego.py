import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenshift.hpo.parego import (
    ScalarizationWeights,
    draw_weights,
    normalize_objectives,
    parego_scalarize,
    weight_grid,
)

unit = st.floats(0.0, 2.0, allow_nan=False)


def test_tchebycheff_example():
    assert parego_scalarize((0.4, 0.9), ScalarizationWeights((1.0, 0.0), 0.05)) == pytest.approx(0.42, abs=1e-15)


@pytest.mark.parametrize("w", weight_grid())
def test_zero_objective(w):
    assert parego_scalarize((0.0, 0.0), w) == 0.0


@given(unit, unit, unit, unit, st.integers(0, 10))
def test_dominance_monotone(a1, a2, d1, d2, i):
    a = (a1, a2)
    b = (a1 + d1, a2 + d2)
    w = weight_grid()[i]
    assert parego_scalarize(a, w) <= parego_scalarize(b, w)


def test_simplex_validation():
    with pytest.raises(ValueError):
        ScalarizationWeights((0.5, 0.6))
    with pytest.raises(ValueError):
        ScalarizationWeights((1.2, -0.2))


def test_grid():
    grid = weight_grid()
    assert len(grid) == 11
    assert all(sum(w.w) == 1.0 and w.rho == 0.05 for w in grid)


def test_draw_coverage_and_determinism():
    draws = [draw_weights(7, i) for i in range(1000)]
    assert {w.w for w in draws} == {w.w for w in weight_grid()}
    assert all(w.w[0] + w.w[1] == 1.0 for w in draws)
    assert [draw_weights(7, i) for i in range(50)] == draws[:50]
    assert [draw_weights(8, i) for i in range(50)] != draws[:50]


def test_normalize_examples():
    norm = normalize_objectives([(2.0, 1.0), (4.0, 1.0)])
    assert norm((3.0, 1.0)) == (0.5, 0.0)
    assert not norm.degenerate
    assert norm((math.inf, 1.0))[0] == 2.0


def test_normalize_ignores_sentinels():
    norm = normalize_objectives([(1.0, 0.0), (math.inf, 5.0), (3.0, 10.0)])
    assert norm((3.0, 10.0)) == (1.0, 1.0)
    assert norm((1.0, 0.0)) == (0.0, 0.0)


def test_normalize_too_few_finite():
    norm = normalize_objectives([(1.0, 2.0), (math.inf, 3.0)])
    assert norm.degenerate
    assert norm((0.25, 3.0))[0] == 0.25


def test_sentinel_dominated_after_normalization():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, size=(30, 2))
    norm = normalize_objectives(pts)
    for p in pts:
        for w in weight_grid():
            assert parego_scalarize(norm(p), w) <= parego_scalarize(norm((math.inf, p[1])), w)
