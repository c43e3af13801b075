import pytest

from fedot.study import TOY_EPSILONS, epsilon_study


@pytest.fixture(scope="module")
def rows():
    return epsilon_study(TOY_EPSILONS)


def test_imin_close_to_published(rows):
    for row, want in zip(rows, (300, 1300, 13000)):
        assert row.verdict == "converged"
        assert abs(row.i_min - want) <= 0.25 * want


def test_imin_inversely_proportional(rows):
    for a, b in zip(rows, rows[1:]):
        ratio = (b.i_min / a.i_min) / (a.epsilon / b.epsilon)
        assert 0.7 <= ratio <= 1.3


def test_objective_tends_to_limit(rows):
    assert rows[-1].objective == pytest.approx(0.3, abs=0.02)


def test_float64_mode_flags_underflow():
    (row,) = epsilon_study([1e-3], precision="float64", max_iterations=3000)
    assert "floor" in row.note or row.verdict == "diverged"
