import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpwhitebox.uncertainty import (
    ScorerError,
    count_clamped,
    gi_to_unit,
    normalize_scores,
    run_uncertainty,
    standard_uncertainty,
    total_uncertainty,
    uncertainty_from_scores,
)


def test_normalize_clamps():
    np.testing.assert_allclose(normalize_scores([-1, 0, 5, 10, 11], 0, 10), [0, 0, 0.5, 1, 1])
    assert count_clamped([-1, 0, 5, 10, 11], 0, 10) == 2
    with pytest.raises(ValueError):
        normalize_scores([1], 1, 1)


def test_gi_to_unit():
    assert (gi_to_unit(-3), gi_to_unit(-1), gi_to_unit(1)) == (0.0, 0.5, 1.0)


def test_standard_uncertainty_hand_values():
    mu, u = standard_uncertainty([0.0, 1.0])
    assert (mu, u) == (0.5, 0.5)  # divide-by-N, not N-1
    assert standard_uncertainty([0.3]) == (0.3, 0.0)
    assert total_uncertainty([0.3, 0.4]) == pytest.approx(math.sqrt((0.09 + 0.16) / 2))
    with pytest.raises(ValueError):
        standard_uncertainty([])
    with pytest.raises(ValueError):
        total_uncertainty([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=10), min_size=1, max_size=6))
def test_u_total_bounds(raw):
    rep = uncertainty_from_scores(raw, (0, 1))
    assert 0.0 <= rep.u_total <= 0.5 + 1e-12
    assert min(rep.u) - 1e-12 <= rep.u_total <= max(rep.u) + 1e-12


def test_constant_scores_give_zero():
    rep = uncertainty_from_scores([[0.7] * 5, [0.2] * 3], (0, 1), labels=["a", "b"])
    assert rep.u_total == 0.0 and rep.mu == [0.7, 0.2]
    d = rep.to_dict()
    assert d["labels"] == ["a", "b"] and d["n_references"] == 2 and d["n_perturbations"] == [5, 3]


def test_clamped_count_and_range():
    rep = uncertainty_from_scores([[0, 50, 120]], (0, 100))
    assert rep.clamped == 1
    assert rep.mu[0] == pytest.approx(0.5)


def test_run_uncertainty_scorer_and_errors():
    refs = [1.0, 2.0]
    perts = [[1.0, 1.5], [2.0]]
    rep = run_uncertainty(refs, perts, lambda r, p: 1.0 - abs(r - p))
    assert rep.u == [0.25, 0.0]

    def bad(r, p):
        if p == 2.0:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(ScorerError) as exc:
        run_uncertainty(refs, perts, bad)
    assert (exc.value.k, exc.value.n) == (1, 0)
    with pytest.raises(ValueError):
        run_uncertainty(refs, [[1.0]], bad)
    with pytest.raises(ValueError):
        uncertainty_from_scores([[1.0], []], (0, 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=12), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_permutation_invariance_and_bound(raw, rnd):
    rep = uncertainty_from_scores(raw, (0, 1))
    assert all(u <= 0.5 + 1e-12 for u in rep.u)
    shuffled_rows = [rnd.sample(row, len(row)) for row in raw]
    rep2 = uncertainty_from_scores(shuffled_rows, (0, 1))
    np.testing.assert_allclose(rep2.mu, rep.mu, atol=1e-12)
    np.testing.assert_allclose(rep2.u, rep.u, atol=1e-12)
    order = rnd.sample(range(len(raw)), len(raw))
    rep3 = uncertainty_from_scores([raw[i] for i in order], (0, 1))
    assert rep3.u_total == pytest.approx(rep.u_total, abs=1e-12)
