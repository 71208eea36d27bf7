import itertools

import numpy as np
import pytest

from nfsrank import generate_synthetic
from nfsrank.metrics import (
    ConstantInputWarning,
    average_precision,
    kendall_tau,
    mean_ndcg_at_k,
    ndcg_at_k,
    spearman,
)


def brute_force_tau_b(x, y):
    """All-pairs tau-b, the independent oracle for the fast implementation."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i, j in itertools.combinations(range(n), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            ties_x += 1
        elif dy == 0:
            ties_y += 1
        elif dx * dy > 0:
            concordant += 1
        else:
            discordant += 1
    n0 = n * (n - 1) / 2
    tie_x_total = n0 - concordant - discordant - ties_y
    tie_y_total = n0 - concordant - discordant - ties_x
    return (concordant - discordant) / np.sqrt(tie_x_total * tie_y_total)


def brute_force_spearman(x, y):
    """Pearson correlation of mean ranks, computed from first principles."""

    def mean_ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        ranks = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return ranks

    rx, ry = mean_ranks(x), mean_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


class TestNdcg:
    def test_ideal_order_scores_one(self):
        assert ndcg_at_k([3, 2, 0], [3.0, 2.0, 1.0], 3) == 1.0

    def test_hand_evaluated_value(self):
        assert ndcg_at_k([0, 1], [2.0, 1.0], 2) == pytest.approx(1 / np.log2(3), abs=1e-6)

    def test_all_zero_labels(self):
        assert ndcg_at_k([0, 0, 0], [5.0, 1.0, 3.0], 3) == 0.0

    def test_tie_break_by_original_index(self):
        # equal scores: first doc ranks first
        assert ndcg_at_k([0, 1], [1.0, 1.0], 1) == 0.0
        assert ndcg_at_k([1, 0], [1.0, 1.0], 1) == 1.0

    def test_invariant_to_monotone_score_transform(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            labels = rng.integers(0, 4, size=8)
            scores = rng.normal(size=8)
            a = ndcg_at_k(labels, scores, 3)
            b = ndcg_at_k(labels, 10 * np.tanh(scores) + 2, 3)
            assert a == pytest.approx(b, abs=1e-12)

    def test_ideal_scores_reach_one_when_any_relevant(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            labels = rng.integers(0, 4, size=10)
            if not labels.any():
                labels[0] = 1
            assert ndcg_at_k(labels, labels.astype(float), 5) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ndcg_at_k([1, 0], [1.0], 2)


class TestMeanNdcg:
    def test_plain_mean(self):
        qs, _ = generate_synthetic(1, 2, 5, 1, 0, 0)
        per_query = [ndcg_at_k(q.labels, q.features[:, 0], 3) for q in qs.queries]
        got = mean_ndcg_at_k(qs, [q.features[:, 0] for q in qs.queries], 3)
        assert got == pytest.approx(np.mean(per_query))

    def test_all_zero_query_excluded(self):
        from nfsrank.data import Query, QuerySet

        relevant = Query("a", np.array([[1.0], [0.0]]), np.array([1, 0]))
        unjudged = Query("b", np.array([[9.0], [8.0]]), np.array([0, 0]))
        qs = QuerySet((relevant, unjudged), 1)
        got = mean_ndcg_at_k(qs, [np.array([1.0, 0.0]), np.array([1.0, 0.0])], 2)
        assert got == pytest.approx(1.0)

    def test_synthetic_ranked_by_own_labels_is_one(self):
        qs, _ = generate_synthetic(7, 10, 8, 2, 1, 1)
        scores = [q.labels.astype(float) for q in qs.queries]
        assert mean_ndcg_at_k(qs, scores, 3) == pytest.approx(1.0)

    def test_missing_scores(self):
        qs, _ = generate_synthetic(1, 2, 5, 1, 0, 0)
        with pytest.raises(ValueError):
            mean_ndcg_at_k(qs, [np.zeros(5)], 3)


class TestAveragePrecision:
    def test_relevant_first(self):
        assert average_precision([1, 0], [2.0, 1.0]) == 1.0

    def test_relevant_second(self):
        assert average_precision([0, 1], [2.0, 1.0]) == 0.5

    def test_no_relevant(self):
        assert average_precision([0, 0], [1.0, 2.0]) == 0.0

    def test_binary_relevance_uses_label_gt_zero(self):
        assert average_precision([3, 0], [2.0, 1.0]) == 1.0


class TestKendallTau:
    def test_identity(self):
        assert kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_reversal(self):
        assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_one_discordant_pair(self):
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-9)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            x = rng.integers(0, 5, size=12).astype(float)
            y = rng.integers(0, 5, size=12).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            assert kendall_tau(x, y) == pytest.approx(brute_force_tau_b(x, y), abs=1e-12)

    def test_constant_input_flags_and_returns_zero(self):
        with pytest.warns(ConstantInputWarning):
            assert kendall_tau([1, 1, 1], [1, 2, 3]) == 0.0

    def test_symmetry_and_monotone_invariance(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=20), rng.normal(size=20)
        assert kendall_tau(x, y) == pytest.approx(kendall_tau(y, x))
        assert kendall_tau(np.exp(x), y) == pytest.approx(kendall_tau(x, y), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            kendall_tau([1.0], [2.0])


class TestSpearman:
    def test_identity_and_reversal(self):
        assert spearman([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_classic_d_squared_value(self):
        assert spearman([1, 2, 3, 4, 5], [1, 2, 3, 5, 4]) == pytest.approx(0.9, abs=1e-9)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            x = rng.integers(0, 4, size=10).astype(float)
            y = rng.integers(0, 4, size=10).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            assert spearman(x, y) == pytest.approx(brute_force_spearman(x, y), abs=1e-12)

    def test_constant_input_flags_and_returns_zero(self):
        with pytest.warns(ConstantInputWarning):
            assert spearman([2, 2], [1, 3]) == 0.0

    def test_symmetry_and_monotone_invariance(self):
        rng = np.random.default_rng(8)
        x, y = rng.normal(size=15), rng.normal(size=15)
        assert spearman(x, y) == pytest.approx(spearman(y, x))
        assert spearman(x**3, y) == pytest.approx(spearman(x, y), abs=1e-12)
