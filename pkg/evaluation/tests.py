import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from corpus.parsing import LabeledUtterance
from corpus.splits import SplitSpec, build_splits
from episodes.sampling import EpisodeSpec, NonEpisodicTask, nonepisodic_tasks

from .metrics import (
    EvaluationError, MetricsReport, evaluate_episodic, evaluate_nonepisodic, harmonic_accuracy,
)


class AlwaysFirst:
    def predict(self, queries, class_supports):
        return [0] * len(queries)


class Oracle:
    """Utterance texts start with their label, so the first token identifies the class."""

    def predict(self, queries, class_supports):
        firsts = [supports[0][0] for supports in class_supports]
        return [firsts.index(query[0]) for query in queries]


class RandomGuess:
    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def predict(self, queries, class_supports):
        return [int(i) for i in self.rng.integers(0, len(class_supports), size=len(queries))]


class ByLength:
    def predict(self, queries, class_supports):
        return [len(query) % len(class_supports) for query in queries]


def make_splits(seen, novel, per_class=20, K=1):
    corpus = [
        LabeledUtterance.from_text(f'{label} ' + ' '.join(['word'] * (i % 4)) + f' n{i}', label)
        for label in seen + novel for i in range(per_class)
    ]
    return build_splits(corpus, SplitSpec(novel_labels=frozenset(novel), shots_K=K, seed=0))


class HarmonicAccuracyTest(SimpleTestCase):
    """Test the harmonic mean of S-J and S-N"""

    def test_published_rows(self):
        """Test (81.85, 95.84) gives 88.29 and (66.1, 44.11) gives 52.91"""
        self.assertAlmostEqual(harmonic_accuracy(81.85, 95.84), 88.29, delta=0.01)
        self.assertAlmostEqual(harmonic_accuracy(66.1, 44.11), 52.91, delta=0.01)

    def test_equal_inputs(self):
        """Test (x, x) gives x"""
        self.assertAlmostEqual(harmonic_accuracy(73.5, 73.5), 73.5)

    def test_bounds(self):
        """Test min <= h <= arithmetic mean"""
        for s_j, s_n in [(10.0, 90.0), (55.0, 60.0), (0.0, 100.0)]:
            h = harmonic_accuracy(s_j, s_n)
            self.assertLessEqual(min(s_j, s_n), h + 1e-12)
            self.assertLessEqual(h, (s_j + s_n) / 2 + 1e-12)

    def test_both_zero(self):
        """Test both accuracies 0 is rejected"""
        with self.assertRaises(EvaluationError):
            harmonic_accuracy(0.0, 0.0)


class EpisodicEvaluationTest(SimpleTestCase):
    """Test episodic accuracy"""

    def setUp(self):
        self.splits = make_splits(['a', 'b'], ['x', 'y'])

    def test_oracle_is_perfect(self):
        """Test an oracle scores 100% on every pool"""
        for pool in ('seen', 'novel', 'joint'):
            spec = EpisodeSpec(C=2, K=1, N_Q=5, label_pool=pool)
            self.assertEqual(evaluate_episodic(Oracle(), self.splits, spec, 20, [0, 1]), 100.0)

    def test_constant_prediction_near_half(self):
        """Test always predicting index 0 on two balanced classes is near 50%"""
        spec = EpisodeSpec(C=2, K=1, N_Q=10)
        accuracy = evaluate_episodic(AlwaysFirst(), self.splits, spec, 100, [0])
        self.assertLess(abs(accuracy - 50.0), 100 * 3 * np.sqrt(0.25 / 1000))

    def test_threads_do_not_change_result(self):
        """Test a worker pool gives the same accuracy as a sequential run"""
        spec = EpisodeSpec(C=2, K=1, N_Q=5, label_pool='joint')
        self.assertEqual(
            evaluate_episodic(ByLength(), self.splits, spec, 30, [0, 4]),
            evaluate_episodic(ByLength(), self.splits, spec, 30, [0, 4], threads=3),
        )

    def test_zero_episodes(self):
        """Test n_episodes = 0 is rejected"""
        with self.assertRaises(EvaluationError):
            evaluate_episodic(Oracle(), self.splits, EpisodeSpec(C=2, K=1), 0, [0])


class NonEpisodicEvaluationTest(SimpleTestCase):
    """Test fixed-space evaluation"""

    def setUp(self):
        self.splits = make_splits(['s1', 's2', 's3', 's4', 's5'], ['n1', 'n2'], per_class=100)

    def test_oracle_diagonal(self):
        """Test an oracle gives a diagonal confusion matrix and 100%"""
        result = evaluate_nonepisodic(Oracle(), nonepisodic_tasks(self.splits, 'joint'))
        self.assertEqual(result.accuracy, 100.0)
        self.assertEqual(np.count_nonzero(result.confusion - np.diag(np.diag(result.confusion))), 0)

    def test_accuracy_is_trace_over_total(self):
        """Test accuracy equals trace / total and rows sum to per-class counts"""
        task = nonepisodic_tasks(self.splits, 'joint')
        result = evaluate_nonepisodic(ByLength(), task)
        self.assertAlmostEqual(result.accuracy, 100.0 * np.trace(result.confusion) / result.total)
        counts = np.bincount(task.targets, minlength=len(task.labels))
        np.testing.assert_array_equal(result.confusion.sum(axis=1), counts)

    def test_random_guess_near_one_seventh(self):
        """Test uniform guessing over 7 classes is near 14.3%"""
        task = nonepisodic_tasks(self.splits, 'joint')
        result = evaluate_nonepisodic(RandomGuess(), task)
        p = 1 / 7
        self.assertLess(abs(result.accuracy / 100 - p), 3 * np.sqrt(p * (1 - p) / len(task.test_set)))

    def test_threads_preserve_order(self):
        """Test sharded prediction gives the same confusion matrix"""
        task = nonepisodic_tasks(self.splits, 'novel')
        np.testing.assert_array_equal(
            evaluate_nonepisodic(ByLength(), task).confusion,
            evaluate_nonepisodic(ByLength(), task, threads=4).confusion,
        )

    def test_single_class_space(self):
        """Test a one-class space scores 100% without consulting the model"""
        utterance = LabeledUtterance.from_text('only one', 'solo')
        task = NonEpisodicTask('novel', ('solo',), ((utterance,),), ((utterance, 0), (utterance, 0)))
        self.assertEqual(evaluate_nonepisodic(None, task).accuracy, 100.0)

    def test_label_outside_space(self):
        """Test a test utterance whose label is not in the space is rejected"""
        stray = LabeledUtterance.from_text('stray request', 'other')
        task = NonEpisodicTask('novel', ('a', 'b'), ((stray,), (stray,)), ((stray, 0),))
        with self.assertRaises(EvaluationError):
            evaluate_nonepisodic(Oracle(), task)


class MetricsReportTest(SimpleTestCase):
    """Test the metrics report"""

    def test_h_acc_and_rounding(self):
        """Test h-acc follows S-J and S-N and percents round to 2 places"""
        report = MetricsReport(mode='nonepisodic', shots=1, s_j=81.85, s_n=95.84)
        data = report.to_dict()
        self.assertEqual(data['h_acc'], 88.29)
        self.assertEqual(
            set(data), {'mode', 'shots', 's_j', 's_n', 'h_acc', 'n_episodes', 'seeds', 'confusion'},
        )

    def test_merge_spaces(self):
        """Test a joint-only and a novel-only report merge into a full row"""
        joint = MetricsReport(mode='nonepisodic', shots=1, s_j=66.1, confusion={'joint': {}})
        novel = MetricsReport(mode='nonepisodic', shots=1, s_n=44.11, confusion={'novel': {}})
        merged = novel.merge(joint)
        self.assertAlmostEqual(merged.h_acc, 52.91, delta=0.01)
        self.assertEqual(set(merged.confusion), {'joint', 'novel'})

    def test_merge_requires_same_mode(self):
        """Test episodic and non-episodic reports do not merge"""
        with self.assertRaises(EvaluationError):
            MetricsReport(mode='episodic', shots=1, s_j=1.0).merge(MetricsReport(mode='nonepisodic', shots=1))

    def test_write_and_read(self):
        """Test the JSON file is sorted, stable and reads back"""
        report = MetricsReport(mode='episodic', shots=5, s_j=90.0, s_n=80.0, n_episodes=100, seeds=(0, 1))
        with tempfile.TemporaryDirectory() as tmp:
            report.write(tmp, 'metrics')
            text = (Path(tmp) / 'metrics.json').read_text()
            self.assertEqual(list(json.loads(text)), sorted(json.loads(text)))
            self.assertEqual(MetricsReport.read(Path(tmp) / 'metrics.json'), report)
            self.assertIn('84.71', (Path(tmp) / 'metrics.txt').read_text())

    def test_missing_space_has_no_h_acc(self):
        """Test h-acc is absent until both spaces are known"""
        self.assertIsNone(MetricsReport(mode='nonepisodic', shots=1, s_j=50.0).to_dict()['h_acc'])
