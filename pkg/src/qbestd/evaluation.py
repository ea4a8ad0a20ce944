"""Score normalization and detection metrics.

Covers per-query z-normalization, DET sweeps, maximum term weighted
value, minimum normalized cross entropy via monotone (pool-adjacent-
violators) calibration, and a one-tailed paired t-test for comparing
per-query metric vectors.

Conventions, which the report header also states:

* every query-document pair is one trial; false-alarm rates are
  trial-based, not time-based;
* the target prior defaults to the empirical target rate of the trial
  list unless configured;
* calibration for the cross-entropy minimum is the optimal monotone
  map found by pool-adjacent-violators, with Laplace smoothing
  0.5/(count+1) inside each pooled block; an affine-only mode is
  available for comparison.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, DataError, DegenerateError
from .search import ScoreTable

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class TrialLabels:
    """(query_id, doc_id) -> 1 for target, 0 for nontarget."""

    labels: dict = field(default_factory=dict)

    def set(self, query_id: str, doc_id: str, label: int) -> None:
        if label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {label!r}")
        key = (query_id, doc_id)
        if key in self.labels:
            raise DataError(f"duplicate label for pair {key}")
        self.labels[key] = int(label)


@dataclass
class EvalConfig:
    cost_false_alarm: float = 1.0
    cost_miss: float = 100.0
    target_prior: float | None = None

    def __post_init__(self):
        if self.cost_false_alarm <= 0 or self.cost_miss <= 0:
            raise ConfigError("detection costs must be positive")
        if self.target_prior is not None and not 0.0 < self.target_prior < 1.0:
            raise ConfigError("target prior must lie strictly inside (0, 1)")

    def resolve_prior(self, n_targets: int, n_nontargets: int) -> float:
        if self.target_prior is not None:
            return self.target_prior
        return n_targets / (n_targets + n_nontargets)

    def beta(self, prior: float) -> float:
        return (self.cost_false_alarm / self.cost_miss) * (1.0 / prior - 1.0)


@dataclass
class MetricReport:
    cnxe_min: float
    mtwv: float
    mtwv_threshold: float
    det_points: list
    per_query_cnxe: dict
    prior: float
    beta: float
    n_targets: int
    n_nontargets: int


# ---------------------------------------------------------------------------
# z-normalization
# ---------------------------------------------------------------------------


def znorm(table: ScoreTable) -> ScoreTable:
    """Per-query zero-mean, unit-variance normalization (sample std).

    A query with fewer than two documents, or zero variance, cannot be
    normalized; its scores become 0 and a warning is emitted.
    """
    if table.state == "znormed":
        log.warning("scores are already z-normalized; normalizing again")
    out = ScoreTable(state="znormed")
    by_query: dict = {}
    for (qid, did), score in table.entries.items():
        by_query.setdefault(qid, []).append((did, score))
    for qid in sorted(by_query):
        pairs = by_query[qid]
        values = np.array([s for _, s in pairs])
        if len(pairs) < 2 or values.std(ddof=1) == 0.0:
            log.warning(
                "query %r has %d doc(s) with std %s; scores set to 0",
                qid, len(pairs), values.std(ddof=1) if len(pairs) > 1 else "undefined",
            )
            for did, _ in pairs:
                out.set(qid, did, 0.0)
            continue
        mean = values.mean()
        std = values.std(ddof=1)
        for did, score in pairs:
            out.set(qid, did, (score - mean) / std)
    return out


# ---------------------------------------------------------------------------
# DET sweep, MTWV
# ---------------------------------------------------------------------------


def _split_trials(table: ScoreTable, labels: TrialLabels):
    """Scores and labels as aligned arrays, after checking coverage."""
    keys = sorted(table.entries)
    scores = np.empty(len(keys))
    is_target = np.empty(len(keys), dtype=bool)
    for idx, key in enumerate(keys):
        if key not in labels.labels:
            raise DataError(f"scored pair {key} has no trial label")
        scores[idx] = table.entries[key]
        is_target[idx] = labels.labels[key] == 1
    if not is_target.any():
        raise DataError("trial list contains no targets")
    if is_target.all():
        raise DataError("trial list contains no nontargets")
    return keys, scores, is_target


def _sweep(scores: np.ndarray, is_target: np.ndarray):
    """Error rates at every distinct score, threshold ascending, plus
    the always-reject operating point.

    At threshold t a trial is accepted when its score >= t, so
    P_miss(t) is the fraction of targets below t and P_fa(t) the
    fraction of nontargets at or above t.
    """
    targets = np.sort(scores[is_target])
    nontargets = np.sort(scores[~is_target])
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    p_miss = np.searchsorted(targets, thresholds, side="left") / len(targets)
    p_fa = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / len(nontargets)
    return thresholds, p_miss, p_fa


def det(table: ScoreTable, labels: TrialLabels) -> list:
    """DET operating points (P_fa, P_miss), threshold ascending, so
    P_fa is non-increasing and P_miss non-decreasing along the list.
    """
    _, scores, is_target = _split_trials(table, labels)
    _, p_miss, p_fa = _sweep(scores, is_target)
    return list(zip(p_fa.tolist(), p_miss.tolist()))


def mtwv(table: ScoreTable, labels: TrialLabels, cfg: EvalConfig | None = None,
         per_query: bool = False) -> tuple:
    """Maximum term weighted value and its threshold over the sweep,
    TWV(t) = 1 - P_miss(t) - beta * P_fa(t). Ties pick the smallest
    threshold. Pooled rates by default; per_query=True averages the
    per-query rates at each threshold instead (queries missing a class
    are skipped with a warning).
    """
    cfg = cfg or EvalConfig()
    keys, scores, is_target = _split_trials(table, labels)
    prior = cfg.resolve_prior(int(is_target.sum()), int((~is_target).sum()))
    beta = cfg.beta(prior)
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    if not per_query:
        _, p_miss, p_fa = _sweep(scores, is_target)
    else:
        qids = sorted({q for q, _ in keys})
        misses, fas = [], []
        for qid in qids:
            mask = np.array([q == qid for q, _ in keys])
            q_scores, q_target = scores[mask], is_target[mask]
            if not q_target.any() or q_target.all():
                log.warning("query %r lacks a trial class; skipped in "
                            "per-query averaging", qid)
                continue
            t_sorted = np.sort(q_scores[q_target])
            nt_sorted = np.sort(q_scores[~q_target])
            misses.append(
                np.searchsorted(t_sorted, thresholds, side="left") / len(t_sorted))
            fas.append(
                1.0 - np.searchsorted(nt_sorted, thresholds, side="left")
                / len(nt_sorted))
        if not misses:
            raise DataError("no query has both trial classes")
        p_miss = np.mean(misses, axis=0)
        p_fa = np.mean(fas, axis=0)
    twv = 1.0 - p_miss - beta * p_fa
    best = int(np.argmax(twv))
    return float(twv[best]), float(thresholds[best])


# ---------------------------------------------------------------------------
# normalized cross entropy with monotone calibration
# ---------------------------------------------------------------------------


def _pav_block_posteriors(scores: np.ndarray, is_target: np.ndarray):
    """Pool-adjacent-violators over distinct-score blocks (ascending).

    Returns the distinct scores and the calibrated posterior for each,
    smoothed inside each pooled block as (targets + 0.5) / (count + 1).
    Adjacent blocks merge while the left target rate >= the right one,
    compared by exact cross-multiplication.
    """
    order = np.argsort(scores, kind="stable")
    distinct, starts = np.unique(scores[order], return_index=True)
    target_counts = np.add.reduceat(is_target[order].astype(np.int64), starts)
    totals = np.diff(np.concatenate([starts, [len(scores)]]))

    merged: list = []  # [t, n, span]
    for t, n in zip(target_counts.tolist(), totals.tolist()):
        block = [t, n, 1]
        while merged and merged[-1][0] * block[1] >= block[0] * merged[-1][1]:
            prev = merged.pop()
            block = [prev[0] + block[0], prev[1] + block[1], prev[2] + block[2]]
        merged.append(block)

    posteriors = np.empty(len(distinct))
    pos = 0
    for t, n, span in merged:
        posteriors[pos:pos + span] = (t + 0.5) / (n + 1.0)
        pos += span
    return distinct, posteriors


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cross_entropy(posteriors, is_target, prior):
    eps = 1e-300
    miss_cost = -np.log2(np.maximum(posteriors[is_target], eps)).mean()
    fa_cost = -np.log2(np.maximum(1.0 - posteriors[~is_target], eps)).mean()
    return prior * miss_cost + (1.0 - prior) * fa_cost


def _prior_entropy(prior):
    return -prior * math.log2(prior) - (1.0 - prior) * math.log2(1.0 - prior)


def cnxe_min(table: ScoreTable, labels: TrialLabels,
             cfg: EvalConfig | None = None,
             calibration: str = "pav") -> tuple:
    """Minimum normalized cross entropy and the per-query breakdown.

    Scores map to posteriors through the optimal monotone calibration
    (or a fitted affine-plus-sigmoid map with calibration="affine");
    the pooled cross entropy is normalized by the prior entropy. The
    per-query values reuse the pooled calibration and prior, restricted
    to each query's trials; queries missing a trial class are skipped
    with a warning.
    """
    cfg = cfg or EvalConfig()
    keys, scores, is_target = _split_trials(table, labels)
    prior = cfg.resolve_prior(int(is_target.sum()), int((~is_target).sum()))

    if calibration == "pav":
        distinct, block_post = _pav_block_posteriors(scores, is_target)
        posteriors = block_post[np.searchsorted(distinct, scores)]
    elif calibration == "affine":
        y = is_target.astype(np.float64)

        def objective(ab):
            p = np.clip(_sigmoid(ab[0] * scores + ab[1]), 1e-12, 1.0 - 1e-12)
            return float(
                prior * -np.log2(p[is_target]).mean()
                + (1.0 - prior) * -np.log2(1.0 - p[~is_target]).mean()
            )

        start = np.array([1.0, float(special.logit(np.clip(y.mean(), 1e-6, 1 - 1e-6)))])
        result = optimize.minimize(objective, start, method="Nelder-Mead",
                                   options={"xatol": 1e-8, "fatol": 1e-12,
                                            "maxiter": 4000})
        posteriors = np.clip(_sigmoid(result.x[0] * scores + result.x[1]),
                             1e-12, 1.0 - 1e-12)
    else:
        raise ConfigError(f"unknown calibration mode {calibration!r}")

    entropy = _prior_entropy(prior)
    pooled = _cross_entropy(posteriors, is_target, prior) / entropy

    per_query: dict = {}
    qids = sorted({q for q, _ in keys})
    q_of = np.array([q for q, _ in keys])
    for qid in qids:
        mask = q_of == qid
        q_target = is_target[mask]
        if not q_target.any() or q_target.all():
            log.warning("query %r lacks a trial class; no per-query "
                        "cross entropy", qid)
            continue
        per_query[qid] = float(
            _cross_entropy(posteriors[mask], q_target, prior) / entropy)
    return float(pooled), per_query


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------


def paired_ttest_one_tailed(a, b) -> tuple:
    """One-tailed paired t-test that a exceeds b on average.

    Accepts two equal-length sequences (paired by position) or two
    mappings keyed by query id (paired by key). Returns (t, p) where p
    is the upper-tail Student-t probability with n-1 degrees of
    freedom, computed through the regularized incomplete beta function.
    """
    if isinstance(a, dict) != isinstance(b, dict):
        raise DataError("cannot pair a mapping with a sequence")
    if isinstance(a, dict):
        if sorted(a) != sorted(b):
            raise DataError("paired samples must share the same query ids")
        keys = sorted(a)
        a = np.array([a[k] for k in keys], dtype=np.float64)
        b = np.array([b[k] for k in keys], dtype=np.float64)
    else:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise DataError("paired samples must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise DegenerateError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateError("paired differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    dof = n - 1
    x = dof / (dof + t * t)
    tail = 0.5 * float(special.betainc(dof / 2.0, 0.5, x))
    p = tail if t >= 0 else 1.0 - tail
    return t, p


# ---------------------------------------------------------------------------
# files: DET points, trial labels, evaluation report
# ---------------------------------------------------------------------------


def emit_det_file(det_points, path) -> None:
    """TSV "p_fa<TAB>p_miss", sorted by p_fa ascending, 6 decimals."""
    if not det_points:
        raise DataError("no DET points to write")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p_fa, p_miss in sorted(det_points):
            fh.write(f"{p_fa:.6f}\t{p_miss:.6f}\n")


def read_det_file(path) -> list:
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            points.append((float(parts[0]), float(parts[1])))
    return points


def write_labels(labels: TrialLabels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did) in sorted(labels.labels):
            fh.write(f"{qid}\t{did}\t{labels.labels[(qid, did)]}\n")


def read_labels(path) -> TrialLabels:
    labels = TrialLabels()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            if parts[2] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1")
            labels.set(parts[0], parts[1], int(parts[2]))
    return labels


def compute_report(table: ScoreTable, labels: TrialLabels,
                   cfg: EvalConfig | None = None) -> MetricReport:
    cfg = cfg or EvalConfig()
    _, scores, is_target = _split_trials(table, labels)
    n_t, n_nt = int(is_target.sum()), int((~is_target).sum())
    prior = cfg.resolve_prior(n_t, n_nt)
    value, threshold = mtwv(table, labels, cfg)
    pooled_cnxe, per_query = cnxe_min(table, labels, cfg)
    return MetricReport(
        cnxe_min=pooled_cnxe,
        mtwv=value,
        mtwv_threshold=threshold,
        det_points=det(table, labels),
        per_query_cnxe=per_query,
        prior=prior,
        beta=cfg.beta(prior),
        n_targets=n_t,
        n_nontargets=n_nt,
    )


def write_report(report: MetricReport, path) -> None:
    """Plain-text metric report. The header states the calibration and
    prior conventions so numbers are interpretable on their own.
    """
    lines = [
        "# qbestd evaluation report",
        "# calibration: pool-adjacent-violators (optimal monotone),"
        " Laplace 0.5/(count+1) per block",
        "# prior: empirical target rate unless configured;"
        " false-alarm rate is trial-based (one trial per query-doc pair)",
        f"cnxe_min\t{report.cnxe_min:.6f}",
        f"mtwv\t{report.mtwv:.6f}",
        f"mtwv_threshold\t{report.mtwv_threshold:.6f}",
        f"targets\t{report.n_targets}",
        f"nontargets\t{report.n_nontargets}",
        f"prior\t{report.prior:.6f}",
        f"beta\t{report.beta:.6f}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
