import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenshift.hpo.hyperband import build_schedule, promote, top_k


def shape(schedule):
    return [[(r.num_configs, r.fidelity) for r in b.rounds] for b in schedule.brackets]


def test_reference_small():
    s = build_schedule(1, 16, 4)
    assert [b.s for b in s.brackets] == [2, 1, 0]
    assert shape(s) == [[(16, 1), (4, 4), (1, 16)], [(6, 4), (1, 16)], [(3, 16)]]


def test_reference_canonical_table():
    # the widely reproduced R = 81, eta = 3 table
    assert shape(build_schedule(1, 81, 3)) == [
        [(81, 1), (27, 3), (9, 9), (3, 27), (1, 81)],
        [(34, 3), (11, 9), (3, 27), (1, 81)],
        [(15, 9), (5, 27), (1, 81)],
        [(8, 27), (2, 81)],
        [(5, 81)],
    ]


def test_search_schedule():
    s = build_schedule(1, 5, 2)
    assert shape(s) == [[(4, 1), (2, 2), (1, 5)], [(3, 2), (1, 5)], [(3, 5)]]
    assert s.evaluations_per_iteration == 14


@pytest.mark.parametrize("args", [(1, 16, 4), (1, 5, 2), (1, 8, 2), (1, 27, 3)])
def test_budget_balance(args):
    eta, max_f = args[2], args[1]
    budgets = [b.budget for b in build_schedule(*args).brackets]
    assert max(budgets) <= (1 + eta / max_f) * min(budgets)


def test_degenerate():
    s = build_schedule(3, 3, 2)
    assert shape(s) == [[(1, 3)]]


@pytest.mark.parametrize("args", [(0, 4, 2), (5, 4, 2), (1, 4, 1)])
def test_invalid(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


@given(st.integers(1, 6), st.integers(0, 60), st.integers(2, 5))
def test_schedule_sanity(min_f, extra, eta):
    max_f = min_f + extra
    s = build_schedule(min_f, max_f, eta)
    for b in s.brackets:
        fids = [r.fidelity for r in b.rounds]
        sizes = [r.num_configs for r in b.rounds]
        assert all(x < y for x, y in zip(fids, fids[1:]))
        assert all(x > y for x, y in zip(sizes, sizes[1:]))
        assert fids[-1] == max_f and fids[0] >= min_f and sizes[-1] >= 1


def test_promote():
    assert promote([float(v) for v in range(9, 0, -1)], 3) == [6, 7, 8]
    assert promote([5.0], 2) == []
    assert promote([5.0], 2, final_round=True) == [0]
    # tie at the cut: the earlier entry survives
    assert promote([1.0, 3.0, 2.0, 2.0], 2) == [0, 2]
    assert top_k([2.0, 2.0, 2.0], 1) == [0]
    with pytest.raises(ValueError):
        promote([], 2)
