"""Metric tests.

Independent references used here:

* a hand-worked pool-adjacent-violators example with the final value
  frozen from manual arithmetic;
* a brute-force MTWV oracle sweeping midpoints between consecutive
  sorted scores (plus beyond-extreme thresholds), which covers every
  distinct accept set;
* numerical integration of the Student-t density for tail
  probabilities, against the incomplete-beta implementation.
"""

import logging
import math

import numpy as np
import pytest
from scipy.integrate import quad

from qbestd.errors import ConfigError, DataError, DegenerateError
from qbestd.evaluation import (
    EvalConfig,
    TrialLabels,
    cnxe_min,
    compute_report,
    det,
    emit_det_file,
    mtwv,
    paired_ttest_one_tailed,
    read_det_file,
    read_labels,
    write_labels,
    write_report,
    znorm,
)
from qbestd.search import ScoreTable


def make_table(rows):
    table = ScoreTable()
    for qid, did, score in rows:
        table.set(qid, did, score)
    return table


def make_labels(rows):
    labels = TrialLabels()
    for qid, did, label in rows:
        labels.set(qid, did, label)
    return labels


def four_trial_case():
    """Two targets {0.9, 0.2}, two nontargets {0.5, 0.1}."""
    table = make_table([
        ("q", "d1", 0.9), ("q", "d2", 0.2), ("q", "d3", 0.5), ("q", "d4", 0.1),
    ])
    labels = make_labels([
        ("q", "d1", 1), ("q", "d2", 1), ("q", "d3", 0), ("q", "d4", 0),
    ])
    return table, labels


# ---------------------------------------------------------------------------
# znorm
# ---------------------------------------------------------------------------


class TestZnorm:
    def test_three_scores(self):
        table = make_table([("q", "a", 1.0), ("q", "b", 2.0), ("q", "c", 3.0)])
        out = znorm(table)
        assert out.entries[("q", "a")] == pytest.approx(-1.0)
        assert out.entries[("q", "b")] == pytest.approx(0.0)
        assert out.entries[("q", "c")] == pytest.approx(1.0)
        assert out.state == "znormed"

    def test_mean_zero_unit_sample_std(self, rng):
        rows = [(f"q{k}", f"d{i}", float(rng.normal()))
                for k in range(3) for i in range(11)]
        out = znorm(make_table(rows))
        for k in range(3):
            values = np.array([out.entries[(f"q{k}", f"d{i}")] for i in range(11)])
            assert abs(values.mean()) < 1e-9
            assert abs(values.std(ddof=1) - 1.0) < 1e-9

    def test_queries_normalized_independently(self, rng):
        rows_a = [("qa", f"d{i}", float(rng.normal())) for i in range(6)]
        rows_b = [("qb", f"d{i}", float(rng.normal())) for i in range(6)]
        base = znorm(make_table(rows_a + rows_b))
        shifted = znorm(make_table(
            rows_a + [(q, d, s * 7.0 + 3.0) for q, d, s in rows_b]))
        for key, value in base.entries.items():
            if key[0] == "qa":
                assert shifted.entries[key] == value

    def test_ranking_preserved(self, rng):
        rows = [("q", f"d{i}", float(rng.normal())) for i in range(20)]
        table = make_table(rows)
        out = znorm(table)
        before = sorted(table.entries, key=table.entries.get)
        after = sorted(out.entries, key=out.entries.get)
        assert before == after

    def test_degenerate_queries_zeroed(self, caplog):
        table = make_table([
            ("lonely", "d0", 4.2),
            ("flat", "d0", 1.0), ("flat", "d1", 1.0), ("flat", "d2", 1.0),
            ("ok", "d0", 0.0), ("ok", "d1", 2.0),
        ])
        with caplog.at_level(logging.WARNING):
            out = znorm(table)
        assert out.entries[("lonely", "d0")] == 0.0
        assert all(out.entries[("flat", f"d{i}")] == 0.0 for i in range(3))
        assert out.entries[("ok", "d1")] == pytest.approx(math.sqrt(0.5))
        assert sum("scores set to 0" in r.message for r in caplog.records) == 2


# ---------------------------------------------------------------------------
# DET
# ---------------------------------------------------------------------------


class TestDet:
    def test_perfect_separation_reaches_origin(self):
        table = make_table([("q", "t", 1.0), ("q", "n", 0.0)])
        labels = make_labels([("q", "t", 1), ("q", "n", 0)])
        assert (0.0, 0.0) in det(table, labels)

    def test_constant_scores_give_corners(self):
        table = make_table([("q", "t", 0.5), ("q", "n", 0.5)])
        labels = make_labels([("q", "t", 1), ("q", "n", 0)])
        assert det(table, labels) == [(1.0, 0.0), (0.0, 1.0)]

    def test_four_trial_sweep_by_hand(self):
        table, labels = four_trial_case()
        points = det(table, labels)
        assert points == [
            (1.0, 0.0),   # threshold 0.1
            (0.5, 0.0),   # threshold 0.2
            (0.5, 0.5),   # threshold 0.5
            (0.0, 0.5),   # threshold 0.9
            (0.0, 1.0),   # always reject
        ]

    def test_staircase_monotone(self, rng):
        rows = [("q", f"d{i}", float(rng.normal())) for i in range(40)]
        lab = [("q", f"d{i}", int(rng.integers(0, 2))) for i in range(40)]
        if not any(l for _, _, l in lab):
            lab[0] = ("q", "d0", 1)
        if all(l for _, _, l in lab):
            lab[0] = ("q", "d0", 0)
        points = det(make_table(rows), make_labels(lab))
        fas = [p for p, _ in points]
        misses = [m for _, m in points]
        assert all(a >= b for a, b in zip(fas, fas[1:]))
        assert all(a <= b for a, b in zip(misses, misses[1:]))

    def test_single_class_rejected(self):
        table = make_table([("q", "a", 0.1), ("q", "b", 0.2)])
        with pytest.raises(DataError):
            det(table, make_labels([("q", "a", 1), ("q", "b", 1)]))
        with pytest.raises(DataError):
            det(table, make_labels([("q", "a", 0), ("q", "b", 0)]))

    def test_missing_label_rejected(self):
        table = make_table([("q", "a", 0.1), ("q", "b", 0.2)])
        with pytest.raises(DataError):
            det(table, make_labels([("q", "a", 1)]))


# ---------------------------------------------------------------------------
# MTWV
# ---------------------------------------------------------------------------


def brute_force_mtwv(table, labels, cfg):
    scores = np.array([table.entries[k] for k in sorted(table.entries)])
    is_t = np.array([labels.labels[k] == 1 for k in sorted(table.entries)])
    prior = cfg.resolve_prior(int(is_t.sum()), int((~is_t).sum()))
    beta = cfg.beta(prior)
    svals = np.unique(scores)
    cands = np.concatenate([
        [svals[0] - 1.0], (svals[:-1] + svals[1:]) / 2.0, [svals[-1] + 1.0],
    ])
    best = -np.inf
    for theta in cands:
        p_miss = float((scores[is_t] < theta).mean())
        p_fa = float((scores[~is_t] >= theta).mean())
        best = max(best, 1.0 - p_miss - beta * p_fa)
    return best


class TestMtwv:
    def test_perfect_separation(self):
        table = make_table([("q", "t", 1.0), ("q", "n", 0.0)])
        labels = make_labels([("q", "t", 1), ("q", "n", 0)])
        value, threshold = mtwv(table, labels)
        assert value == pytest.approx(1.0)
        assert threshold == pytest.approx(1.0)

    def test_four_trial_full_sweep(self):
        # the full sweep: thresholds 0.1, 0.2, 0.5, 0.9, inf give TWV
        # 0.99, 0.995, 0.495, 0.5, 0.0 with beta = 0.01, so the true
        # maximum sits at threshold 0.2
        table, labels = four_trial_case()
        cfg = EvalConfig(target_prior=0.5)
        assert cfg.beta(0.5) == pytest.approx(0.01)
        value, threshold = mtwv(table, labels, cfg)
        assert value == pytest.approx(0.995)
        assert threshold == pytest.approx(0.2)
        assert value == pytest.approx(brute_force_mtwv(table, labels, cfg))

    def test_matches_midpoint_brute_force(self, rng):
        for trial in range(20):
            n = int(rng.integers(6, 40))
            rows = [("q", f"d{i}", float(rng.normal())) for i in range(n)]
            lab = [("q", f"d{i}", int(rng.integers(0, 2))) for i in range(n)]
            lab[0] = ("q", "d0", 1)
            lab[1] = ("q", "d1", 0)
            table, labels = make_table(rows), make_labels(lab)
            cfg = EvalConfig()
            value, _ = mtwv(table, labels, cfg)
            assert value == pytest.approx(
                brute_force_mtwv(table, labels, cfg), abs=1e-12)

    def test_always_reject_floor(self):
        # anti-informative scores with expensive false alarms: every
        # accepting threshold goes negative, so the always-reject
        # point keeps MTWV at 0
        rows = [("q", f"t{i}", 0.0) for i in range(5)]
        rows += [("q", f"n{i}", 1.0) for i in range(5)]
        lab = [("q", f"t{i}", 1) for i in range(5)]
        lab += [("q", f"n{i}", 0) for i in range(5)]
        cfg = EvalConfig(cost_false_alarm=100.0, cost_miss=1.0, target_prior=0.5)
        value, threshold = mtwv(make_table(rows), make_labels(lab), cfg)
        assert value == pytest.approx(0.0)
        assert threshold == np.inf

    def test_tie_picks_smallest_threshold(self):
        # constant scores with beta = 1: both operating points give
        # TWV = 0, the finite threshold must win
        table = make_table([("q", "t", 0.5), ("q", "n", 0.5)])
        labels = make_labels([("q", "t", 1), ("q", "n", 0)])
        cfg = EvalConfig(cost_false_alarm=1.0, cost_miss=1.0, target_prior=0.5)
        value, threshold = mtwv(table, labels, cfg)
        assert value == pytest.approx(0.0)
        assert threshold == pytest.approx(0.5)

    def test_per_query_averaging(self):
        # unequal trial counts make the averaged rates differ from the
        # pooled ones: at threshold 0.2 nothing is missed, q1 has zero
        # false alarms and q2 alarms on all three nontargets, so the
        # averaged P_fa is 1/2 while the pooled P_fa is 3/4
        rows = [("q1", "t", 1.0), ("q1", "n", 0.0),
                ("q2", "t", 0.2), ("q2", "n1", 0.8),
                ("q2", "n2", 0.85), ("q2", "n3", 0.9)]
        lab = [("q1", "t", 1), ("q1", "n", 0), ("q2", "t", 1),
               ("q2", "n1", 0), ("q2", "n2", 0), ("q2", "n3", 0)]
        table, labels = make_table(rows), make_labels(lab)
        cfg = EvalConfig(target_prior=0.5)
        pooled, pooled_theta = mtwv(table, labels, cfg)
        averaged, averaged_theta = mtwv(table, labels, cfg, per_query=True)
        assert averaged == pytest.approx(1.0 - 0.0 - 0.01 * 0.5)
        assert pooled == pytest.approx(1.0 - 0.0 - 0.01 * 0.75)
        assert pooled_theta == pytest.approx(0.2)
        assert averaged_theta == pytest.approx(0.2)

    def test_per_query_skips_single_class_queries(self, caplog):
        rows = [("good", "t", 1.0), ("good", "n", 0.0), ("onlyt", "t", 0.7)]
        lab = [("good", "t", 1), ("good", "n", 0), ("onlyt", "t", 1)]
        with caplog.at_level(logging.WARNING):
            value, _ = mtwv(make_table(rows), make_labels(lab),
                            EvalConfig(target_prior=0.5), per_query=True)
        assert any("lacks a trial class" in r.message for r in caplog.records)
        assert value == pytest.approx(1.0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            EvalConfig(cost_false_alarm=0.0)
        with pytest.raises(ConfigError):
            EvalConfig(target_prior=1.0)


# ---------------------------------------------------------------------------
# cnxe
# ---------------------------------------------------------------------------


class TestCnxeMin:
    def test_hand_worked_pav_example(self):
        # scores 0.1(nt) 0.2(t) 0.3(nt) 0.4(t): the middle two blocks
        # violate monotonicity and merge to rate 1/2; smoothed
        # posteriors are 0.25, 0.5, 0.5, 0.75, giving
        # Cxe = (1 + log2(4/3))/2 at prior 0.5
        table = make_table([
            ("q", "a", 0.1), ("q", "b", 0.2), ("q", "c", 0.3), ("q", "d", 0.4),
        ])
        labels = make_labels([
            ("q", "a", 0), ("q", "b", 1), ("q", "c", 0), ("q", "d", 1),
        ])
        value, per_query = cnxe_min(table, labels)
        expected = (1.0 + math.log2(4.0 / 3.0)) / 2.0
        assert value == pytest.approx(expected, abs=1e-12)
        assert per_query["q"] == pytest.approx(expected, abs=1e-12)

    def test_separated_scores_near_zero(self, rng):
        rows, lab = [], []
        for i in range(50):
            rows.append(("q", f"t{i}", float(rng.uniform(0.6, 1.0))))
            lab.append(("q", f"t{i}", 1))
            rows.append(("q", f"n{i}", float(rng.uniform(0.0, 0.4))))
            lab.append(("q", f"n{i}", 0))
        value, _ = cnxe_min(make_table(rows), make_labels(lab))
        assert value <= 0.05

    def test_constant_scores_near_one(self):
        rows = [("q", f"d{i}", 0.5) for i in range(100)]
        lab = [("q", f"d{i}", 1 if i < 30 else 0) for i in range(100)]
        value, _ = cnxe_min(make_table(rows), make_labels(lab))
        assert value == pytest.approx(1.0, abs=0.05)

    def test_invariant_under_monotone_transform(self, rng):
        rows = [("q", f"d{i}", float(rng.normal())) for i in range(60)]
        lab = [("q", f"d{i}", int(rng.integers(0, 2))) for i in range(60)]
        lab[0], lab[1] = ("q", "d0", 1), ("q", "d1", 0)
        labels = make_labels(lab)
        base, base_pq = cnxe_min(make_table(rows), labels)
        warped, warped_pq = cnxe_min(
            make_table([(q, d, math.exp(s)) for q, d, s in rows]), labels)
        assert abs(base - warped) <= 1e-12
        assert base_pq.keys() == warped_pq.keys()
        for qid in base_pq:
            assert abs(base_pq[qid] - warped_pq[qid]) <= 1e-12

    def test_beats_fixed_affine_calibrations(self, rng):
        rows, lab = [], []
        for i in range(100):
            rows.append(("q", f"t{i}", float(rng.normal(1.0, 1.0))))
            lab.append(("q", f"t{i}", 1))
            rows.append(("q", f"n{i}", float(rng.normal(-1.0, 1.0))))
            lab.append(("q", f"n{i}", 0))
        table, labels = make_table(rows), make_labels(lab)
        value, _ = cnxe_min(table, labels)
        scores = np.array([table.entries[k] for k in sorted(table.entries)])
        is_t = np.array([labels.labels[k] == 1 for k in sorted(table.entries)])
        for a, b in [(1.0, 0.0), (2.0, -1.0), (0.5, 0.3), (5.0, 0.0)]:
            p = np.clip(1.0 / (1.0 + np.exp(-(a * scores + b))), 1e-12, 1 - 1e-12)
            cxe = 0.5 * -np.log2(p[is_t]).mean() + 0.5 * -np.log2(1 - p[~is_t]).mean()
            assert value <= cxe / 1.0 + 1e-9

    def test_per_query_orders_good_before_bad(self, rng):
        rows, lab = [], []
        for i in range(20):
            rows.append(("sharp", f"t{i}", 1.0 + float(rng.uniform(0, 0.1))))
            lab.append(("sharp", f"t{i}", 1))
            rows.append(("sharp", f"n{i}", float(rng.uniform(0, 0.1))))
            lab.append(("sharp", f"n{i}", 0))
            rows.append(("fuzzy", f"t{i}", float(rng.normal(0.5, 0.5))))
            lab.append(("fuzzy", f"t{i}", 1))
            rows.append(("fuzzy", f"n{i}", float(rng.normal(0.5, 0.5))))
            lab.append(("fuzzy", f"n{i}", 0))
        _, per_query = cnxe_min(make_table(rows), make_labels(lab))
        assert per_query["sharp"] < per_query["fuzzy"]

    def test_per_query_skips_single_class(self, caplog):
        rows = [("q", "t", 1.0), ("q", "n", 0.0), ("solo", "t", 0.9)]
        lab = [("q", "t", 1), ("q", "n", 0), ("solo", "t", 1)]
        with caplog.at_level(logging.WARNING):
            _, per_query = cnxe_min(make_table(rows), make_labels(lab))
        assert "solo" not in per_query
        assert any("lacks a trial class" in r.message for r in caplog.records)

    def test_affine_mode_bounded_below_by_pav(self, rng):
        rows, lab = [], []
        for i in range(60):
            rows.append(("q", f"t{i}", float(rng.normal(0.8, 0.5))))
            lab.append(("q", f"t{i}", 1))
            rows.append(("q", f"n{i}", float(rng.normal(-0.8, 0.5))))
            lab.append(("q", f"n{i}", 0))
        table, labels = make_table(rows), make_labels(lab)
        pav_value, _ = cnxe_min(table, labels)
        affine_value, _ = cnxe_min(table, labels, calibration="affine")
        assert affine_value >= pav_value - 1e-9
        assert affine_value < 0.5

    def test_unknown_calibration_rejected(self):
        table, labels = four_trial_case()
        with pytest.raises(ConfigError):
            cnxe_min(table, labels, calibration="histogram")


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------


def t_tail_by_integration(t, dof):
    c = math.gamma((dof + 1) / 2.0) / (
        math.sqrt(dof * math.pi) * math.gamma(dof / 2.0))
    value, _ = quad(
        lambda x: c * (1.0 + x * x / dof) ** (-(dof + 1) / 2.0), t, np.inf)
    return value


class TestPairedTtest:
    def test_documented_example(self):
        t, p = paired_ttest_one_tailed([2.0, 3.0, 4.0], [1.0, 1.0, 1.0])
        assert t == pytest.approx(2.0 * math.sqrt(3.0), abs=1e-4)
        assert p == pytest.approx(0.0371, abs=5e-4)
        # closed form for 2 degrees of freedom
        assert p == pytest.approx(0.5 * (1.0 - t / math.sqrt(2.0 + t * t)),
                                  abs=1e-12)

    def test_matches_numerical_integration(self, rng):
        for n in (3, 5, 9):
            a = rng.normal(size=n) + 0.8
            b = rng.normal(size=n) * 0.5
            t, p = paired_ttest_one_tailed(a.tolist(), b.tolist())
            assert p == pytest.approx(t_tail_by_integration(t, n - 1), abs=1e-9)

    def test_negative_t_gives_large_p(self):
        t, p = paired_ttest_one_tailed([0.0, 0.1, 0.0], [1.0, 1.2, 1.1])
        assert t < 0
        assert p > 0.5

    def test_direction_symmetry(self, rng):
        a = rng.normal(size=6).tolist()
        b = rng.normal(size=6).tolist()
        t_ab, p_ab = paired_ttest_one_tailed(a, b)
        t_ba, p_ba = paired_ttest_one_tailed(b, a)
        assert t_ab == pytest.approx(-t_ba)
        assert p_ab + p_ba == pytest.approx(1.0)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateError):
            paired_ttest_one_tailed([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateError):
            paired_ttest_one_tailed([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0])
        with pytest.raises(DegenerateError):
            paired_ttest_one_tailed([1.0], [0.0])
        with pytest.raises(DataError):
            paired_ttest_one_tailed([1.0, 2.0], [1.0])

    def test_dict_pairing_by_query_id(self):
        a = {"q1": 2.0, "q2": 3.0, "q3": 4.0}
        b = {"q3": 1.0, "q1": 1.0, "q2": 1.0}
        t, p = paired_ttest_one_tailed(a, b)
        assert t == pytest.approx(2.0 * math.sqrt(3.0), abs=1e-4)
        with pytest.raises(DataError):
            paired_ttest_one_tailed(a, {"q1": 1.0, "q2": 1.0, "qX": 1.0})
        with pytest.raises(DataError):
            paired_ttest_one_tailed(a, [1.0, 1.0, 1.0])


# ---------------------------------------------------------------------------
# files and the assembled report
# ---------------------------------------------------------------------------


class TestFiles:
    def test_det_file_roundtrip(self, tmp_path):
        table, labels = four_trial_case()
        points = det(table, labels)
        path = tmp_path / "det.tsv"
        emit_det_file(points, path)
        back = read_det_file(path)
        assert len(back) == len(points)
        for (fa, miss), (rfa, rmiss) in zip(sorted(points), back):
            assert rfa == pytest.approx(fa, abs=1e-6)
            assert rmiss == pytest.approx(miss, abs=1e-6)
        fas = [fa for fa, _ in back]
        assert fas == sorted(fas)

    def test_det_file_perfect_contains_origin(self, tmp_path):
        table = make_table([("q", "t", 1.0), ("q", "n", 0.0)])
        labels = make_labels([("q", "t", 1), ("q", "n", 0)])
        path = tmp_path / "det.tsv"
        emit_det_file(det(table, labels), path)
        assert "0.000000\t0.000000" in path.read_text().splitlines()

    def test_det_point_count(self):
        table, labels = four_trial_case()
        # one point per distinct threshold plus the always-reject corner
        assert len(det(table, labels)) == 4 + 1

    def test_empty_det_rejected(self, tmp_path):
        with pytest.raises(DataError):
            emit_det_file([], tmp_path / "det.tsv")

    def test_labels_roundtrip(self, tmp_path):
        labels = make_labels([("q1", "d1", 1), ("q1", "d2", 0), ("q2", "d1", 0)])
        path = tmp_path / "labels.tsv"
        write_labels(labels, path)
        assert read_labels(path).labels == labels.labels

    def test_labels_validation(self, tmp_path):
        path = tmp_path / "labels.tsv"
        path.write_text("q\td\t2\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_labels(path)
        path.write_text("q\td\t1\nq\td\t0\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_labels(path)
        with pytest.raises(DataError):
            TrialLabels().set("q", "d", 2)

    def test_report_assembly_and_file(self, tmp_path):
        table, labels = four_trial_case()
        report = compute_report(table, labels, EvalConfig(target_prior=0.5))
        assert report.prior == pytest.approx(0.5)
        assert report.beta == pytest.approx(0.01)
        assert report.n_targets == 2 and report.n_nontargets == 2
        assert report.mtwv == pytest.approx(0.995)
        assert report.det_points == det(table, labels)
        assert "q" in report.per_query_cnxe
        path = tmp_path / "report.txt"
        write_report(report, path)
        text = path.read_text()
        assert "pool-adjacent-violators" in text
        assert "cnxe_min\t" in text
        assert "mtwv\t0.995000" in text
        assert "prior\t0.500000" in text
        assert "beta\t0.010000" in text
        assert "targets\t2" in text
