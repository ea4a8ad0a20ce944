"""Alignment core tests.

Two independent references validate the dynamic program:

* a naive dict-based DP with the same greedy-normalized semantics,
  checked for exact (bitwise) equality of the winning (sum, length);
* an exhaustive DFS over every legal complete path, whose true optimum
  must upper-bound the DP score (the greedy DP may fall short of the
  global optimum, never exceed it).
"""

import logging

import numpy as np
import pytest

from qbestd.errors import ConfigError, DataError
from qbestd.frontend import FeatureMatrix
from qbestd.search import (
    DtwConfig,
    ScoreTable,
    dtw_subsequence,
    match,
    read_scores,
    search_all,
    similarity,
    write_scores,
)


# ---------------------------------------------------------------------------
# reference implementations
# ---------------------------------------------------------------------------


def naive_dtw(S, max_c=2):
    """Dict-based DP over (row, col, slope-state) with candidates
    compared after extension into the current cell, exactly as the
    production aligner defines them. Returns (score, sum, length).
    """
    m, n = S.shape
    levels = max_c + 1
    state = {}
    for j in range(n):
        state[(0, j, 0)] = (S[0, j], 1)
        for k in range(1, levels):
            p = state.get((0, j - 1, k - 1))
            if p is not None:
                state[(0, j, k)] = (p[0] + S[0, j], p[1] + 1)
    for i in range(1, m):
        for j in range(n):
            s = S[i, j]
            best = None
            for k in range(levels):
                p = state.get((i - 1, j - 1, k))
                if p is None:
                    continue
                cand = (p[0] + s, p[1] + 1)
                if best is None or cand[0] * best[1] > best[0] * cand[1]:
                    best = cand
            if best is not None:
                state[(i, j, 0)] = best
            for k in range(1, levels):
                v = state.get((i - 1, j, k - 1))
                h = state.get((i, j - 1, k - 1))
                cand = (v[0] + s, v[1] + 1) if v is not None else None
                if h is not None:
                    hc = (h[0] + s, h[1] + 1)
                    if cand is None or hc[0] * cand[1] > cand[0] * hc[1]:
                        cand = hc
                if cand is not None:
                    state[(i, j, k)] = cand
    best = None
    for j in range(n):
        for k in range(levels):
            p = state.get((m - 1, j, k))
            if p is None:
                continue
            if (
                best is None
                or p[0] * best[1] > best[0] * p[1]
                or (p[0] * best[1] == best[0] * p[1] and p[1] > best[1])
            ):
                best = p
    if best is None:
        return None
    return best[0] / best[1], best[0], best[1]


def enumerate_best(S, max_c=2):
    """True optimum over every legal complete path, by brute force.
    A path starts anywhere in row 0 and is complete at every visit to
    the last row (horizontal extensions within the last row included).
    """
    m, n = S.shape
    best = [-np.inf]

    def dfs(i, j, k, total, length):
        if i == m - 1:
            avg = total / length
            if avg > best[0]:
                best[0] = avg
        for di, dj, nk in ((1, 1, 0), (1, 0, k + 1), (0, 1, k + 1)):
            ni, nj = i + di, j + dj
            if ni >= m or nj >= n or nk > max_c:
                continue
            dfs(ni, nj, nk, total + S[ni, nj], length + 1)

    for j in range(n):
        dfs(0, j, 0, S[0, j], 1)
    return best[0]


def assert_legal_path(path, m, n, max_c, S, score):
    assert path[0][0] == 0 and path[-1][0] == m - 1
    run = 0
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        step = (i1 - i0, j1 - j0)
        assert step in {(1, 1), (1, 0), (0, 1)}
        run = 0 if step == (1, 1) else run + 1
        assert run <= max_c
    assert all(0 <= i < m and 0 <= j < n for i, j in path)
    total = sum(S[i, j] for i, j in path)
    assert abs(total / len(path) - score) <= 1e-9


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------


def fm(name, arr):
    return FeatureMatrix(name, np.asarray(arr, dtype=np.float32))


class TestSimilarity:
    def test_identical_orthogonal_opposite(self):
        q = fm("q", [[1.0, 0.0], [0.0, 2.0]])
        d = fm("d", [[3.0, 0.0], [0.0, -1.0]])
        sim = similarity(q, d)
        assert sim[0, 0] == pytest.approx(1.0)
        assert sim[1, 0] == pytest.approx(0.5)
        assert sim[0, 1] == pytest.approx(0.5)
        assert sim[1, 1] == pytest.approx(0.0)

    def test_range_and_shape(self, rng):
        q = fm("q", rng.normal(size=(7, 32)))
        d = fm("d", rng.normal(size=(11, 32)))
        sim = similarity(q, d)
        assert sim.shape == (7, 11)
        assert sim.min() >= 0.0 and sim.max() <= 1.0

    def test_zero_norm_frame_scores_half(self, caplog):
        q = fm("q", [[0.0, 0.0], [1.0, 0.0]])
        d = fm("d", [[1.0, 1.0]])
        with caplog.at_level(logging.WARNING):
            sim = similarity(q, d)
        assert sim[0, 0] == pytest.approx(0.5)
        assert any("zero-norm" in r.message for r in caplog.records)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            similarity(fm("q", [[1.0, 2.0]]), fm("d", [[1.0, 2.0, 3.0]]))


# ---------------------------------------------------------------------------
# aligner semantics
# ---------------------------------------------------------------------------


class TestDtwBasics:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            DtwConfig(max_consecutive_nondiagonal=0)

    def test_single_cell(self):
        res = dtw_subsequence(np.array([[0.7]]))
        assert res.score == pytest.approx(0.7)
        assert res.path == [(0, 0)]
        assert res.doc_start == 0 and res.doc_end == 0

    def test_single_row_prefers_best_average(self):
        S = np.array([[0.1, 0.9, 0.8, 0.2]])
        res = dtw_subsequence(S)
        # chains: 0.9 alone beats [0.9, 0.8] (0.85) and all longer runs
        assert res.score == pytest.approx(0.9)
        assert res.path == [(0, 1)]

    def test_single_column_within_slope_budget(self):
        S = np.full((3, 1), 0.5)
        res = dtw_subsequence(S, DtwConfig(max_consecutive_nondiagonal=2))
        assert res.score == pytest.approx(0.5)
        assert res.path == [(0, 0), (1, 0), (2, 0)]

    def test_single_column_exceeding_budget_is_unreachable(self):
        S = np.full((4, 1), 0.5)
        with pytest.raises(DataError):
            dtw_subsequence(S, DtwConfig(max_consecutive_nondiagonal=2))

    def test_clean_diagonal(self):
        S = np.full((3, 5), 0.1)
        for t in range(3):
            S[t, t + 1] = 1.0
        res = dtw_subsequence(S)
        assert res.score == pytest.approx(1.0)
        assert res.path == [(0, 1), (1, 2), (2, 3)]
        assert res.doc_start == 1 and res.doc_end == 3

    def test_constant_matrix_ties_match_reference(self):
        # constant matrix: every state averages 0.5 exactly, so every
        # choice is a tie; the survivor must match the reference DP
        # (internal ties keep the higher-priority move, the final pick
        # prefers the longer of the surviving states)
        S = np.full((2, 4), 0.5)
        res = dtw_subsequence(S)
        ref_score, ref_sum, ref_len = naive_dtw(S, 2)
        assert res.score == pytest.approx(0.5)
        assert res.score == ref_sum / ref_len
        assert len(res.path) == ref_len

    def test_rejects_bad_input(self):
        with pytest.raises(DataError):
            dtw_subsequence(np.zeros((0, 3)))
        with pytest.raises(DataError):
            dtw_subsequence(np.zeros(5))


class TestDtwAgainstReferences:
    def test_exact_match_with_naive_dp(self, rng):
        for trial in range(60):
            m = int(rng.integers(1, 7))
            n = int(rng.integers(1, 9))
            if rng.random() < 0.5:
                S = rng.random((m, n))
            else:
                # quantized values force frequent exact ties
                S = rng.integers(0, 4, size=(m, n)) / 3.0
            max_c = int(rng.integers(1, 4))
            ref = naive_dtw(S, max_c)
            cfg = DtwConfig(max_consecutive_nondiagonal=max_c)
            if ref is None:
                with pytest.raises(DataError):
                    dtw_subsequence(S, cfg)
                continue
            res = dtw_subsequence(S, cfg)
            ref_score, ref_sum, ref_len = ref
            assert res.score == ref_sum / ref_len
            assert len(res.path) == ref_len
            assert_legal_path(res.path, m, n, max_c, S, res.score)

    def test_never_exceeds_enumerated_optimum(self, rng):
        for trial in range(60):
            m = int(rng.integers(1, 5))
            n = int(rng.integers(1, 6))
            S = rng.random((m, n))
            bound = enumerate_best(S, 2)
            if bound == -np.inf:
                with pytest.raises(DataError):
                    dtw_subsequence(S, DtwConfig(max_consecutive_nondiagonal=2))
                continue
            res = dtw_subsequence(S, DtwConfig(max_consecutive_nondiagonal=2))
            assert res.score <= bound + 1e-9

    def test_duplicated_document_never_hurts(self, rng):
        for trial in range(20):
            m = int(rng.integers(1, 5))
            n = int(rng.integers(1, 7))
            S = rng.random((m, n))
            twice = np.hstack([S, S])
            a = dtw_subsequence(S).score
            b = dtw_subsequence(twice).score
            assert b >= a - 1e-12

    def test_deterministic(self, rng):
        S = rng.random((6, 20))
        first = dtw_subsequence(S)
        second = dtw_subsequence(S)
        assert first.score == second.score
        assert first.path == second.path


class TestPlantedCopy:
    def test_exact_copy_scores_near_one(self, rng):
        hits = 0
        for trial in range(20):
            doc = rng.normal(size=(30, 8)).astype(np.float32)
            start = int(rng.integers(0, 25))
            query = FeatureMatrix("q", doc[start:start + 5].copy())
            res = match(query, FeatureMatrix("d", doc))
            control = match(query, FeatureMatrix(
                "c", rng.normal(size=(30, 8)).astype(np.float32)))
            if res.score >= 0.999 and res.score >= control.score:
                hits += 1
        assert hits >= 18

    def test_copy_is_localized(self, rng):
        doc = rng.normal(size=(40, 16)).astype(np.float32)
        query = FeatureMatrix("q", doc[10:16].copy())
        res = match(query, FeatureMatrix("d", doc))
        assert res.score >= 0.999
        assert res.doc_start == 10
        assert res.doc_end == 15


# ---------------------------------------------------------------------------
# all-pairs driver and score files
# ---------------------------------------------------------------------------


def _toy_sets(rng):
    queries = {
        f"q{i}": FeatureMatrix(f"q{i}", rng.normal(size=(4, 6)).astype(np.float32))
        for i in range(2)
    }
    docs = {
        f"d{i}": FeatureMatrix(f"d{i}", rng.normal(size=(9, 6)).astype(np.float32))
        for i in range(3)
    }
    return queries, docs


class TestSearchAll:
    def test_full_cartesian_product(self, rng):
        queries, docs = _toy_sets(rng)
        table, timing = search_all(queries, docs)
        assert set(table.entries) == {
            (q, d) for q in queries for d in docs
        }
        assert timing.pairs == 6
        assert timing.threads == 1
        assert timing.wall_seconds > 0

    def test_deterministic_and_order_independent(self, rng):
        queries, docs = _toy_sets(rng)
        t1, _ = search_all(queries, docs)
        t2, _ = search_all(queries, docs)
        assert t1.entries == t2.entries

    def test_parallel_matches_serial(self, rng):
        queries, docs = _toy_sets(rng)
        serial, _ = search_all(queries, docs, threads=1)
        parallel, timing = search_all(queries, docs, threads=2)
        assert parallel.entries == serial.entries
        assert timing.threads == 2

    def test_empty_inputs_rejected(self, rng):
        _, docs = _toy_sets(rng)
        with pytest.raises(DataError):
            search_all({}, docs)
        with pytest.raises(DataError):
            search_all({"q": next(iter(docs.values()))}, {})

    def test_timing_logged(self, rng, caplog):
        queries, docs = _toy_sets(rng)
        with caplog.at_level(logging.INFO, logger="qbestd.search"):
            search_all(queries, docs)
        assert any("pairs" in r.message for r in caplog.records)


class TestScoreTable:
    def test_duplicate_pair_rejected(self):
        table = ScoreTable()
        table.set("q", "d", 0.5)
        with pytest.raises(DataError):
            table.set("q", "d", 0.6)

    def test_query_and_doc_listing(self):
        table = ScoreTable()
        table.set("q2", "d1", 0.1)
        table.set("q1", "d2", 0.2)
        table.set("q1", "d1", 0.3)
        assert table.queries() == ["q1", "q2"]
        assert table.docs_for("q1") == ["d1", "d2"]

    def test_roundtrip(self, tmp_path):
        table = ScoreTable()
        table.set("query one", "doc", 0.1234567)
        table.set("q2", "d2", -3.5)
        path = tmp_path / "scores.tsv"
        write_scores(table, path)
        back = read_scores(path)
        assert back.entries[("query one", "doc")] == pytest.approx(0.123457)
        assert back.entries[("q2", "d2")] == -3.5
        assert back.state == "raw"

    def test_file_bytes_are_lf_terminated_six_decimals(self, tmp_path):
        table = ScoreTable()
        table.set("q", "d", 0.5)
        path = tmp_path / "scores.tsv"
        write_scores(table, path)
        assert path.read_bytes() == b"q\td\t0.500000\n"

    def test_read_rejects_garbage(self, tmp_path):
        path = tmp_path / "scores.tsv"
        path.write_text("q\td\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_scores(path)
        path.write_text("q\td\tnope\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_scores(path)
        path.write_text("q\td\t0.1\nq\td\t0.2\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_scores(path)
