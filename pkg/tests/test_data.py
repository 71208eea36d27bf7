import numpy as np
import pytest

from nfsrank import data, metrics
from nfsrank.data import (
    DataError,
    LetorParseError,
    Query,
    QuerySet,
    equal_querysets,
    generate_synthetic,
    parse_candidates,
    parse_letor,
    restrict_topk,
    serialize_letor,
)


class TestParseLetor:
    def test_two_docs_one_query(self):
        qs = parse_letor("2 qid:1 1:0.5 2:1.0\n0 qid:1 1:0.1 2:0.0")
        assert qs.feature_count == 2
        assert qs.n_queries == 1
        q = qs.queries[0]
        assert q.qid == "1"
        assert list(q.labels) == [2, 0]
        np.testing.assert_array_equal(q.features, [[0.5, 1.0], [0.1, 0.0]])

    def test_missing_feature_fill(self):
        qs = parse_letor("1 qid:7 3:2.5")
        assert qs.feature_count == 3
        np.testing.assert_array_equal(qs.queries[0].features, [[0.0, 0.0, 2.5]])

    def test_comment_becomes_doc_id(self):
        qs = parse_letor("1 qid:a 1:1.0 # doc-42\n0 qid:a 1:0.0")
        assert qs.queries[0].doc_ids == ("doc-42", None)

    def test_groups_by_qid_preserving_order(self):
        text = "0 qid:b 1:1\n1 qid:a 1:2\n2 qid:b 1:3\n"
        qs = parse_letor(text)
        assert [q.qid for q in qs.queries] == ["b", "a"]
        assert list(qs.query("b").labels) == [0, 2]

    def test_malformed_line_reports_lineno(self):
        with pytest.raises(LetorParseError, match="line 2"):
            parse_letor("0 qid:1 1:1.0\n1 qid:1 1:oops")

    def test_non_numeric_label(self):
        with pytest.raises(LetorParseError, match="label"):
            parse_letor("x qid:1 1:1.0")

    def test_negative_label(self):
        with pytest.raises(LetorParseError):
            parse_letor("-1 qid:1 1:1.0")

    def test_empty_input(self):
        with pytest.raises(LetorParseError, match="empty"):
            parse_letor("")

    def test_label_capped_with_warning(self):
        with pytest.warns(UserWarning, match="capped"):
            qs = parse_letor("40 qid:1 1:1.0")
        assert qs.queries[0].labels[0] == data.MAX_LABEL

    def test_roundtrip_random_queryset(self):
        qs, _ = generate_synthetic(seed=5, n_queries=7, docs_per_query=6, informative=2,
                                   duplicates_per_informative=1, noise=3)
        assert equal_querysets(parse_letor(serialize_letor(qs)), qs)

    def test_roundtrip_preserves_doc_ids(self):
        text = "1 qid:q 1:0.25 2:-3.5 # d1\n0 qid:q 1:0.1 2:0.0 # d2"
        qs = parse_letor(text)
        assert equal_querysets(parse_letor(serialize_letor(qs)), qs)


class TestRestrictTopk:
    def _qs(self, n_docs=5):
        feats = np.arange(n_docs * 2, dtype=np.float64).reshape(n_docs, 2)
        labels = np.arange(n_docs, dtype=np.int64) % 3
        return QuerySet((Query("q", feats, labels),), 2)

    def test_truncation_in_candidate_order(self):
        qs = restrict_topk(self._qs(), {"q": [4, 2, 0]}, k=2)
        q = qs.queries[0]
        np.testing.assert_array_equal(q.features[:, 0], [8.0, 4.0])
        assert list(q.labels) == [1, 2]

    def test_k_larger_than_list(self):
        qs = restrict_topk(self._qs(), {"q": [4, 2, 0]}, k=10)
        assert qs.queries[0].n_docs == 3

    def test_queries_absent_from_map_kept_whole(self):
        qs = restrict_topk(self._qs(), {"other": [0]}, k=1)
        assert qs.queries[0].n_docs == 5

    def test_out_of_range_index(self):
        with pytest.raises(DataError, match="out of range"):
            restrict_topk(self._qs(), {"q": [5]}, k=1)

    def test_never_increases_and_never_reorders(self):
        rng = np.random.default_rng(0)
        qs, _ = generate_synthetic(seed=2, n_queries=5, docs_per_query=12, informative=2,
                                   duplicates_per_informative=0, noise=1)
        for trial in range(10):
            cand = {
                q.qid: list(rng.permutation(q.n_docs)[: rng.integers(1, q.n_docs + 1)])
                for q in qs.queries
            }
            k = int(rng.integers(1, 14))
            cut = restrict_topk(qs, cand, k)
            for q_orig, q_cut in zip(qs.queries, cut.queries):
                assert q_cut.n_docs <= q_orig.n_docs
                expected = cand[q_orig.qid][:k]
                np.testing.assert_array_equal(q_cut.features, q_orig.features[expected])

    def test_topk_128_on_300_doc_query(self):
        feats = np.arange(300, dtype=np.float64).reshape(300, 1)
        qs = QuerySet((Query("big", feats, np.zeros(300, dtype=np.int64)),), 1)
        perm = list(np.random.default_rng(3).permutation(300))
        cut = restrict_topk(qs, {"big": perm}, k=128)
        assert cut.queries[0].n_docs == 128
        np.testing.assert_array_equal(cut.queries[0].features[:, 0], np.array(perm[:128], dtype=np.float64))


class TestParseCandidates:
    def test_basic(self):
        assert parse_candidates("q1\t0,2,1\nq2\t3\n") == {"q1": [0, 2, 1], "q2": [3]}

    def test_bad_index(self):
        with pytest.raises(LetorParseError):
            parse_candidates("q1\t0,x\n")


class TestGenerateSynthetic:
    def test_feature_count_arithmetic(self):
        qs, roles = generate_synthetic(seed=1, n_queries=50, docs_per_query=20, informative=3,
                                       duplicates_per_informative=2, noise=4)
        assert qs.feature_count == 13
        assert len(roles) == 13
        kinds = [r.kind for r in roles]
        assert kinds.count("informative") == 3
        assert kinds.count("duplicate") == 6
        assert kinds.count("noise") == 4

    def test_deterministic_given_seed(self):
        a, _ = generate_synthetic(3, 10, 8, 2, 1, 2)
        b, _ = generate_synthetic(3, 10, 8, 2, 1, 2)
        assert equal_querysets(a, b)

    def test_prefix_stable_in_query_count(self):
        small, _ = generate_synthetic(3, 10, 8, 2, 1, 2)
        big, _ = generate_synthetic(3, 15, 8, 2, 1, 2)
        assert equal_querysets(small, QuerySet(big.queries[:10], big.feature_count))

    def test_informative_beats_noise_on_single_feature_ndcg(self):
        qs, roles = generate_synthetic(seed=1, n_queries=50, docs_per_query=20, informative=3,
                                       duplicates_per_informative=2, noise=4)

        def oriented_ndcg(j):
            fwd = metrics.mean_ndcg_at_k(qs, [q.features[:, j] for q in qs.queries], 3)
            rev = metrics.mean_ndcg_at_k(qs, [-q.features[:, j] for q in qs.queries], 3)
            return max(fwd, rev)

        informative = [oriented_ndcg(j) for j, r in enumerate(roles) if r.kind == "informative"]
        noise = [oriented_ndcg(j) for j, r in enumerate(roles) if r.kind == "noise"]
        assert min(informative) > max(noise)

    def test_duplicate_tracks_parent_ranks(self):
        qs, roles = generate_synthetic(seed=1, n_queries=50, docs_per_query=20, informative=3,
                                       duplicates_per_informative=2, noise=4)
        pooled = np.concatenate([q.features for q in qs.queries])
        for j, role in enumerate(roles):
            if role.kind == "duplicate":
                assert metrics.spearman(pooled[:, j], pooled[:, role.parent]) >= 0.99

    def test_labels_are_grades(self):
        qs, _ = generate_synthetic(4, 20, 20, 2, 0, 1)
        for q in qs.queries:
            assert set(np.unique(q.labels)) <= set(range(5))
            assert np.any(q.labels > 0)

    def test_bad_counts_rejected(self):
        with pytest.raises(DataError):
            generate_synthetic(1, 0, 5, 1, 0, 0)
        with pytest.raises(DataError):
            generate_synthetic(1, 5, 5, 1, -1, 0)


class TestQuerySetValidation:
    def test_duplicate_qids_rejected(self):
        q = Query("same", np.zeros((1, 2)), np.zeros(1, dtype=np.int64))
        with pytest.raises(DataError, match="duplicate qid"):
            QuerySet((q, q), 2)

    def test_feature_count_mismatch_rejected(self):
        q = Query("q", np.zeros((1, 2)), np.zeros(1, dtype=np.int64))
        with pytest.raises(DataError):
            QuerySet((q,), 3)
