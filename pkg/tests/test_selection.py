import numpy as np
import pytest

from sgcdpl import (ClusterAssignment, EmbeddingSet, GuidanceUnavailableError, Sample,
                    SelectionSchedule, advance_schedule, assign_soft_labels,
                    estimate_threshold, select_reliable)
from sgcdpl.selection import soft_labels_from_distances


def one_d(points, split="unlabeled"):
    return EmbeddingSet([Sample(feature=np.array([float(p)]), split=split) for p in points])


class TestEstimateThreshold:
    def test_separable_lists_zero_error(self):
        t = estimate_threshold([0.2, 0.5, 1.0], [2.0, 2.5, 3.0], bin_count=50)
        assert 1.0 < t.tau_l <= 2.0
        assert t.error_rate == 0.0

    def test_identical_distributions_error_one(self):
        vals = [1.0, 2.0, 3.0]
        t = estimate_threshold(vals, vals, bin_count=10)
        assert t.error_rate == 1.0
        assert t.bin_edges[0] <= t.tau_l <= t.bin_edges[-1]

    def test_gaussian_intersection(self):
        rng = np.random.default_rng(0)
        t = estimate_threshold(rng.normal(2, 0.5, 10_000), rng.normal(6, 0.5, 10_000), 100)
        assert t.tau_l == pytest.approx(4.0, abs=0.2)

    def test_objective_is_global_grid_minimum(self):
        rng = np.random.default_rng(1)
        pos = rng.normal(2, 1.0, 500)
        neg = rng.normal(4, 1.0, 500)
        t = estimate_threshold(pos, neg, 40)
        for edge in t.bin_edges:
            other = np.mean(pos > edge) + np.mean(neg <= edge)
            assert t.error_rate <= other + 1e-12

    def test_empty_list_is_guidance_error(self):
        with pytest.raises(GuidanceUnavailableError):
            estimate_threshold([], [1.0], 10)

    def test_histogram_csv_shape(self):
        t = estimate_threshold([0.1, 0.2], [1.0, 2.0], bin_count=5)
        lines = t.histograms_csv().strip().splitlines()
        assert lines[0] == "bin_center,positive_density,negative_density"
        assert len(lines) == 6


def three_point_cluster():
    # exemplar at 0; members at squared distances 1 and 9
    es = one_d([0.0, 1.0, 3.0])
    assignment = ClusterAssignment(exemplars=[0], assignment=np.array([0, 0, 0]),
                                   converged=True, iterations_used=1)
    return es, assignment


class TestSelectReliable:
    def test_tau_zero_keeps_only_exemplars(self):
        es, assignment = three_point_cluster()
        assert select_reliable(es, assignment, 0.0) == [0]

    def test_tau_infinite_selects_all(self):
        es, assignment = three_point_cluster()
        assert select_reliable(es, assignment, np.inf) == [0, 1, 2]

    def test_strict_inequality_on_members(self):
        es, assignment = three_point_cluster()
        assert select_reliable(es, assignment, 4.0) == [0, 1]
        assert select_reliable(es, assignment, 1.0) == [0]  # 1 < 1 is false

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(12)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            es = EmbeddingSet([Sample(feature=f) for f in rng.normal(size=(20, 3))])
            assignment = ClusterAssignment(
                exemplars=[0], assignment=np.zeros(20, dtype=int),
                converged=True, iterations_used=1)
            previous = set()
            for tau in np.linspace(0.0, 40.0, 10):
                current = set(select_reliable(es, assignment, tau))
                assert previous <= current
                previous = current


class TestSoftLabels:
    def test_equidistant_exemplars_split_evenly(self):
        es = one_d([0.0, 4.0, 2.0])
        assignment = ClusterAssignment(exemplars=[0, 1], assignment=np.array([0, 1, 0]),
                                       converged=True, iterations_used=1)
        pseudo = assign_soft_labels(es, assignment, [2])
        assert pseudo.soft_labels[0] == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_log3_gap_closed_form(self):
        labels = soft_labels_from_distances(np.array([[0.0, np.log(3.0)]]))
        assert labels[0] == pytest.approx([0.75, 0.25], rel=1e-12)

    def test_single_exemplar_gives_certainty(self):
        es = one_d([0.0, 1.0, 2.0])
        assignment = ClusterAssignment(exemplars=[0], assignment=np.array([0, 0, 0]),
                                       converged=True, iterations_used=1)
        pseudo = assign_soft_labels(es, assignment, [0, 1, 2])
        assert np.all(pseudo.soft_labels == 1.0)

    def test_rows_sum_to_one_and_argmax_is_nearest(self):
        rng = np.random.default_rng(7)
        es = EmbeddingSet([Sample(feature=f) for f in rng.normal(size=(15, 4))])
        assignment_targets = np.zeros(15, dtype=int)
        assignment_targets[5:10] = 5
        assignment_targets[10:] = 10
        assignment = ClusterAssignment(exemplars=[0, 5, 10], assignment=assignment_targets,
                                       converged=True, iterations_used=1)
        pseudo = assign_soft_labels(es, assignment, list(range(15)))
        assert np.allclose(pseudo.soft_labels.sum(axis=1), 1.0, atol=1e-9)
        ex_feats = es.features[[0, 5, 10]]
        for row, i in enumerate(pseudo.selected_indices):
            d = np.sum((ex_feats - es.features[i]) ** 2, axis=1)
            assert np.argmax(pseudo.soft_labels[row]) == np.argmin(d)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(0, 5, size=(6, 4))
        assert np.allclose(soft_labels_from_distances(d),
                           soft_labels_from_distances(d + 13.7), atol=1e-12)

    def test_column_order_follows_exemplar_permutation(self):
        d = np.array([[0.5, 1.5, 2.5]])
        perm = [2, 0, 1]
        assert np.allclose(soft_labels_from_distances(d[:, perm]),
                           soft_labels_from_distances(d)[:, perm], atol=1e-12)


class TestSchedule:
    def test_single_advance_paper_step(self):
        s = SelectionSchedule(d_step=1.0)
        s = advance_schedule(s)
        assert s.d_t == 1.0 and s.iteration == 1

    def test_three_advances(self):
        s = SelectionSchedule(d_step=0.5)
        for _ in range(3):
            s = advance_schedule(s)
        assert s.d_t == 1.5

    def test_selection_grows_with_schedule(self):
        es = one_d([0.0, 1.0, 2.0, 3.0])
        assignment = ClusterAssignment(exemplars=[0], assignment=np.zeros(4, dtype=int),
                                       converged=True, iterations_used=1)
        tau_l = 0.5
        sizes = []
        s = SelectionSchedule(d_step=3.0)
        for _ in range(4):
            sizes.append(len(select_reliable(es, assignment, tau_l + s.d_t)))
            s = advance_schedule(s)
        assert sizes == sorted(sizes)
        assert sizes[-1] == 4
