"""Detection core: cosine similarity and slope-constrained subsequence
alignment with per-step partial-path-length normalization.

The aligner maximizes mean per-cell similarity along a monotone path
that must cover every query frame but may start and end anywhere in
the document. Because the objective is an average, classic DP is not
globally optimal; the semantics here are the greedy-normalized dynamic
program over (cell, slope-state) with exact (sum, length) bookkeeping:
each state keeps the best average-so-far, candidates are compared
after extension into the current cell, and all comparisons use exact
cross-multiplication (a.sum * b.len vs b.sum * a.len) so results are
deterministic and reproducible bit for bit.

Slope state k counts consecutive non-diagonal moves; k may never
exceed the configured maximum (default 2). A diagonal move resets k to
0. Ties are broken by a fixed priority (diagonal, vertical, horizontal;
smallest donor k), and the final answer prefers larger accumulated
length, then the smaller document column, then the smaller slope state.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .frontend import FeatureMatrix

log = logging.getLogger(__name__)

# backpointer codes
_START, _DIAG, _VERT, _HORIZ = 1, 2, 3, 4


@dataclass
class DtwConfig:
    max_consecutive_nondiagonal: int = 2

    def __post_init__(self):
        if self.max_consecutive_nondiagonal < 1:
            raise ConfigError("max consecutive non-diagonal moves must be >= 1")


@dataclass
class MatchResult:
    score: float
    doc_start: int
    doc_end: int
    path: list


def similarity(query: FeatureMatrix, doc: FeatureMatrix) -> np.ndarray:
    """[query frames x doc frames] matrix of (1 + cosine) / 2 in [0, 1].

    Zero-norm frames cannot carry direction; they get cosine 0
    (similarity 0.5) against everything, with a warning.
    """
    if query.dims != doc.dims:
        raise DataError(
            f"dimension mismatch: query {query.dims} vs document {doc.dims}"
        )

    def normalize(feat):
        data = feat.data.astype(np.float64)
        norms = np.linalg.norm(data, axis=1)
        zero = norms == 0.0
        if zero.any():
            log.warning(
                "%d zero-norm frame(s) in %r treated as similarity 0.5",
                int(zero.sum()), feat.utterance_id,
            )
            norms[zero] = 1.0
        return data / norms[:, None]

    sim = 0.5 * (1.0 + normalize(query) @ normalize(doc).T)
    return np.clip(sim, 0.0, 1.0)


def _better(sum_a, len_a, sum_b, len_b):
    # strictly larger average, by exact cross-multiplication
    return sum_a * len_b > sum_b * len_a


def dtw_subsequence(sim: np.ndarray, cfg: DtwConfig | None = None) -> MatchResult:
    """Best average-similarity alignment of all query rows to a
    document span, under the slope constraint. See the module
    docstring for the exact state semantics.
    """
    cfg = cfg or DtwConfig()
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] < 1 or sim.shape[1] < 1:
        raise DataError(f"similarity matrix must be 2-D non-empty, got {sim.shape}")
    m, n = sim.shape
    levels = cfg.max_consecutive_nondiagonal + 1

    # per-row state: sums/lens[k][j]; len 0 marks an unreachable state
    sums = np.zeros((levels, n))
    lens = np.zeros((levels, n), dtype=np.int64)
    moves = np.zeros((m, levels, n), dtype=np.uint8)
    diag_from_k = np.zeros((m, n), dtype=np.uint8)

    # row 0: fresh start at every column, then horizontal chains
    sums[0] = sim[0]
    lens[0] = 1
    moves[0, 0] = _START
    for k in range(1, levels):
        ok = lens[k - 1, :-1] > 0
        sums[k, 1:][ok] = sums[k - 1, :-1][ok] + sim[0, 1:][ok]
        lens[k, 1:][ok] = lens[k - 1, :-1][ok] + 1
        moves[0, k, 1:][ok] = _HORIZ

    for i in range(1, m):
        prev_sums, prev_lens = sums, lens
        sums = np.zeros((levels, n))
        lens = np.zeros((levels, n), dtype=np.int64)

        # level 0: diagonal arrivals; the donor is the best state at
        # (i-1, j-1) over all k, compared after extension by this cell
        # (ties: smallest k)
        ext_sums = prev_sums[:, :-1] + sim[i, 1:]
        ext_lens = np.where(prev_lens[:, :-1] > 0, prev_lens[:, :-1] + 1, 0)
        best_s, best_l = ext_sums[0].copy(), ext_lens[0].copy()
        best_k = np.zeros(n - 1, dtype=np.uint8)
        for k in range(1, levels):
            cand_valid = ext_lens[k] > 0
            take = cand_valid & (
                (best_l == 0) | _better(ext_sums[k], ext_lens[k], best_s, best_l)
            )
            best_s[take] = ext_sums[k][take]
            best_l[take] = ext_lens[k][take]
            best_k[take] = k
        reached = best_l > 0
        sums[0, 1:][reached] = best_s[reached]
        lens[0, 1:][reached] = best_l[reached]
        moves[i, 0, 1:][reached] = _DIAG
        diag_from_k[i, 1:][reached] = best_k[reached]

        # levels 1..max: vertical from (i-1, j, k-1), horizontal from
        # (i, j-1, k-1); vertical wins exact ties
        for k in range(1, levels):
            v_s = prev_sums[k - 1] + sim[i]
            v_l = np.where(prev_lens[k - 1] > 0, prev_lens[k - 1] + 1, 0)
            h_s = np.zeros(n)
            h_l = np.zeros(n, dtype=np.int64)
            ok = lens[k - 1, :-1] > 0
            h_s[1:][ok] = sums[k - 1, :-1][ok] + sim[i, 1:][ok]
            h_l[1:][ok] = lens[k - 1, :-1][ok] + 1
            take_h = (h_l > 0) & ((v_l == 0) | _better(h_s, h_l, v_s, v_l))
            sums[k] = np.where(take_h, h_s, v_s)
            lens[k] = np.where(take_h, h_l, v_l)
            moves[i, k] = np.where(
                take_h, _HORIZ, np.where(v_l > 0, _VERT, 0)
            ).astype(np.uint8)

    # answer: best state in the last row; ties prefer longer paths,
    # then smaller document column, then smaller slope state
    best = None  # (sum, len, j, k)
    for j in range(n):
        for k in range(levels):
            if lens[k, j] == 0:
                continue
            cand = (sums[k, j], lens[k, j], j, k)
            if best is None or _better(cand[0], cand[1], best[0], best[1]) or (
                cand[0] * best[1] == best[0] * cand[1] and cand[1] > best[1]
            ):
                best = cand
    if best is None:
        raise DataError("no reachable alignment state; matrix degenerate")

    total, length, j, k = best
    i = m - 1
    path = []
    while True:
        path.append((i, j))
        move = moves[i, k, j]
        if move == _START:
            break
        if move == _DIAG:
            k2 = int(diag_from_k[i, j])
            i, j, k = i - 1, j - 1, k2
        elif move == _VERT:
            i, j, k = i - 1, j, k - 1
        else:
            i, j, k = i, j - 1, k - 1
    path.reverse()
    return MatchResult(
        score=float(total / length),
        doc_start=path[0][1],
        doc_end=path[-1][1],
        path=path,
    )


def match(query: FeatureMatrix, doc: FeatureMatrix,
          cfg: DtwConfig | None = None) -> MatchResult:
    return dtw_subsequence(similarity(query, doc), cfg)


# ---------------------------------------------------------------------------
# Score tables and the all-pairs driver
# ---------------------------------------------------------------------------


@dataclass
class ScoreTable:
    """(query_id, doc_id) -> score, with at most one entry per pair."""

    entries: dict = field(default_factory=dict)
    state: str = "raw"

    def set(self, query_id: str, doc_id: str, score: float) -> None:
        key = (query_id, doc_id)
        if key in self.entries:
            raise DataError(f"duplicate score for pair {key}")
        self.entries[key] = float(score)

    def queries(self) -> list:
        return sorted({q for q, _ in self.entries})

    def docs_for(self, query_id: str) -> list:
        return sorted(d for q, d in self.entries if q == query_id)


@dataclass
class SearchTiming:
    pairs: int
    threads: int
    wall_seconds: float

    @property
    def pairs_per_second(self) -> float:
        return self.pairs / self.wall_seconds if self.wall_seconds > 0 else float("inf")


_POOL_STATE: dict = {}


def _pool_init(queries, documents, cfg):
    _POOL_STATE["queries"] = queries
    _POOL_STATE["documents"] = documents
    _POOL_STATE["cfg"] = cfg


def _pool_worker(query_id):
    queries = _POOL_STATE["queries"]
    documents = _POOL_STATE["documents"]
    cfg = _POOL_STATE["cfg"]
    q = queries[query_id]
    return [
        (query_id, doc_id, match(q, documents[doc_id], cfg).score)
        for doc_id in sorted(documents)
    ]


def search_all(queries: dict, documents: dict, cfg: DtwConfig | None = None,
               threads: int = 1) -> tuple[ScoreTable, SearchTiming]:
    """Score every query against every document. Results are keyed, not
    appended, so any evaluation order (including the parallel one)
    assembles the identical table. The timing summary is also logged.
    """
    if not queries:
        raise DataError("empty query set")
    if not documents:
        raise DataError("empty document set")
    cfg = cfg or DtwConfig()
    qids = sorted(queries)
    start = time.perf_counter()
    table = ScoreTable()
    if threads <= 1:
        _pool_init(queries, documents, cfg)
        chunks = [_pool_worker(qid) for qid in qids]
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(threads, initializer=_pool_init,
                      initargs=(queries, documents, cfg)) as pool:
            chunks = pool.map(_pool_worker, qids)
    for chunk in chunks:
        for qid, did, score in chunk:
            table.set(qid, did, score)
    timing = SearchTiming(
        pairs=len(queries) * len(documents),
        threads=max(1, threads),
        wall_seconds=time.perf_counter() - start,
    )
    log.info(
        "searched %d pairs with %d thread(s) in %.3f s (%.1f pairs/s)",
        timing.pairs, timing.threads, timing.wall_seconds, timing.pairs_per_second,
    )
    return table, timing


# ---------------------------------------------------------------------------
# Score file format: one "query<TAB>doc<TAB>score" line per pair,
# scores at 6 decimal places, UTF-8, LF line endings.
# ---------------------------------------------------------------------------


def write_scores(table: ScoreTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did) in sorted(table.entries):
            fh.write(f"{qid}\t{did}\t{table.entries[(qid, did)]:.6f}\n")


def read_scores(path, state: str = "raw") -> ScoreTable:
    table = ScoreTable(state=state)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                score = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad score {parts[2]!r}")
            table.set(parts[0], parts[1], score)
    return table
