import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenshift.energy import EnergyModel, EnergyReport, compare_report, estimate_energy
from greenshift.network import OpCounts, build_network, convert_to_shift, desk_cnn
from greenshift.quant import FixedPointFormat

counts = st.builds(OpCounts, *(st.integers(0, 10**12) for _ in range(4)))


def test_zero():
    r = estimate_energy(OpCounts(), 0)
    assert r.total_joules == 0 and r.emissions_g == 0


def test_kwh_identity():
    model = EnergyModel(joules_per_add=1.0, overhead_joules_per_sample=0.0, carbon_intensity=400.0)
    r = estimate_energy(OpCounts(adds=3_600_000), 0, model)
    assert r.total_joules == 3.6e6
    assert r.emissions_g == 400.0


@given(counts, st.integers(0, 10**6))
def test_linear(ops, samples):
    single = estimate_energy(ops, samples)
    double = estimate_energy(ops.scaled(2), 2 * samples)
    assert double.total_joules == pytest.approx(2 * single.total_joules, rel=1e-12)
    assert single.emissions_g == single.total_joules / 3.6e6 * 400.0


@given(counts, st.sampled_from(["multiplies", "shifts", "adds", "sign_flips"]))
def test_monotone_in_each_count(ops, field):
    more = OpCounts(**{**ops.__dict__, field: getattr(ops, field) + 1000})
    assert estimate_energy(more, 1).total_joules >= estimate_energy(ops, 1).total_joules


def test_invariants():
    with pytest.raises(ValueError):
        EnergyModel(joules_per_shift=1.0, joules_per_multiply=0.5)
    with pytest.raises(ValueError):
        EnergyModel(joules_per_add=-1.0)
    with pytest.raises(ValueError, match="bogus"):
        EnergyModel.from_dict({"bogus": 1})
    assert EnergyModel.from_dict({"carbon_intensity": 50}).carbon_intensity == 50.0


def test_shift_benefit():
    model = EnergyModel()
    assert model.joules_per_shift + model.joules_per_sign_flip < model.joules_per_multiply
    net = build_network(desk_cnn((1, 12, 12), 10), (1, 12, 12), 0)
    x = np.random.default_rng(0).normal(size=(8, 1, 12, 12))
    float_joules = estimate_energy(net.forward(x)[1], 8).total_joules
    previous = float_joules
    for depth in range(1, net.eligible_count + 1):
        shifted = convert_to_shift(net, depth, "Q", 5, FixedPointFormat(8, 8))
        joules = estimate_energy(shifted.forward(x)[1], 8).total_joules
        assert joules < previous
        previous = joules


def report(emissions, joules):
    return EnergyReport(total_joules=joules, emissions_g=emissions)


def test_compare_report():
    a = report(1.0, 5.0)
    assert compare_report(a, report(1.0, 5.0)) == 0
    assert compare_report(report(2.0, 10.0), a) > 0
    assert compare_report(report(1.0, 4.0), a) < 0


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=3, max_size=3))
def test_compare_transitive(triple):
    reports = [report(e, j) for e, j in triple]
    ordered = sorted(reports, key=functools.cmp_to_key(compare_report))
    for i in range(3):
        for j in range(i + 1, 3):
            assert compare_report(ordered[i], ordered[j]) <= 0
