import dataclasses
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from corpus.parsing import LabeledUtterance
from corpus.splits import SplitSpec, build_splits

from .sampling import (
    EpisodeError, EpisodeSpec, episode_rng, nonepisodic_tasks, sample_episode, sample_gfsl_episode,
    sample_novel_episode, sample_training_episode,
)


def make_corpus(counts):
    return [
        LabeledUtterance.from_text(f'{label} request number {i}', label)
        for label, count in counts.items() for i in range(count)
    ]


def make_splits(seen, novel, per_class=10, K=1, seed=0):
    corpus = make_corpus({label: per_class for label in seen + novel})
    return build_splits(corpus, SplitSpec(novel_labels=frozenset(novel), shots_K=K, seed=seed))


class EpisodeSpecTest(SimpleTestCase):
    """Test episode spec validation"""

    def test_single_class_rejected(self):
        """Test C=1 is refused"""
        with self.assertRaises(EpisodeError):
            EpisodeSpec(C=1, K=1)

    def test_unknown_pool_rejected(self):
        """Test an unknown label pool is refused"""
        with self.assertRaises(EpisodeError):
            EpisodeSpec(C=2, K=1, label_pool='all')


class TrainingEpisodeTest(SimpleTestCase):
    """Test seen-class episode sampling"""

    def setUp(self):
        self.pool = make_corpus({'a': 3, 'b': 3})

    def test_supports_disjoint_from_queries(self):
        """Test C=2, K=1, N_Q=2 keeps supports out of the queries"""
        episode = sample_training_episode(self.pool, EpisodeSpec(C=2, K=1, N_Q=2), np.random.default_rng(0))
        supports = {u for shots in episode.support for u in shots}
        queries = {u for u, _ in episode.queries}
        self.assertFalse(supports & queries)
        self.assertEqual([len(shots) for shots in episode.support], [1, 1])
        self.assertEqual(len(episode.queries), 2)

    def test_query_indices_match_labels(self):
        """Test every query index points at its label's class"""
        episode = sample_training_episode(self.pool, EpisodeSpec(C=2, K=1, N_Q=4), np.random.default_rng(1))
        for utterance, index in episode.queries:
            self.assertEqual(episode.classes[index], utterance.label)
        for c, shots in enumerate(episode.support):
            self.assertTrue(all(u.label == episode.classes[c] for u in shots))

    def test_same_rng_state_same_episode(self):
        """Test identical generator states give identical episodes"""
        spec = EpisodeSpec(C=2, K=1, N_Q=3)
        self.assertEqual(
            sample_training_episode(self.pool, spec, np.random.default_rng(5)),
            sample_training_episode(self.pool, spec, np.random.default_rng(5)),
        )

    def test_short_query_pool_uses_all(self):
        """Test N_Q beyond the remaining utterances falls back to all of them"""
        with self.assertLogs('episodes.sampling', 'WARNING'):
            episode = sample_training_episode(self.pool, EpisodeSpec(C=2, K=1, N_Q=10), np.random.default_rng(0))
        self.assertEqual(len(episode.queries), 4)

    def test_too_many_classes(self):
        """Test C beyond the available classes is rejected"""
        with self.assertRaises(EpisodeError):
            sample_training_episode(self.pool, EpisodeSpec(C=3, K=1), np.random.default_rng(0))

    def test_class_too_small(self):
        """Test a class with only K utterances is rejected"""
        with self.assertRaises(EpisodeError):
            sample_training_episode(self.pool, EpisodeSpec(C=2, K=3), np.random.default_rng(0))

    def test_class_frequency_binomial_bound(self):
        """Test each of 5 classes appears in 35-45% of 1000 two-way episodes"""
        pool = make_corpus({label: 4 for label in 'abcde'})
        spec = EpisodeSpec(C=2, K=1, N_Q=2)
        counts = Counter()
        for i in range(1000):
            counts.update(sample_training_episode(pool, spec, episode_rng(11, i)).classes)
        for label in 'abcde':
            self.assertGreaterEqual(counts[label], 350)
            self.assertLessEqual(counts[label], 450)


class EpisodeRngTest(SimpleTestCase):
    """Test per-episode generator streams"""

    def test_streams_are_reproducible_and_distinct(self):
        """Test (seed, index) fixes the stream and different indices differ"""
        self.assertEqual(episode_rng(3, 7).integers(1 << 30), episode_rng(3, 7).integers(1 << 30))
        self.assertNotEqual(episode_rng(3, 7).integers(1 << 30), episode_rng(3, 8).integers(1 << 30))


class GfslEpisodeTest(SimpleTestCase):
    """Test joint-space episode sampling"""

    def test_forced_mix(self):
        """Test one seen and one novel class give an episode with one of each"""
        splits = make_splits(['seen'], ['novel'])
        spec = EpisodeSpec(C=2, K=1, N_Q=5, label_pool='joint')
        for i in range(20):
            episode = sample_gfsl_episode(splits.train_pool, splits, spec, episode_rng(0, i))
            self.assertEqual(sorted(episode.classes), ['novel', 'seen'])

    def test_novel_supports_are_presampled_shots(self):
        """Test novel classes always use the split's support shots"""
        splits = make_splits(['a', 'b', 'c'], ['x', 'y'])
        spec = EpisodeSpec(C=3, K=1, N_Q=4, label_pool='joint')
        for i in range(30):
            episode = sample_gfsl_episode(splits.train_pool, splits, spec, episode_rng(1, i))
            for label, shots in zip(episode.classes, episode.support):
                if label in splits.novel_labels:
                    self.assertEqual(list(shots), splits.support_shots[label])
                else:
                    self.assertTrue(set(shots) <= set(splits.train_pool))

    def test_queries_from_joint_test(self):
        """Test queries come from the joint test pool and are disjoint from supports"""
        splits = make_splits(['a', 'b', 'c'], ['x', 'y'])
        spec = EpisodeSpec(C=2, K=1, N_Q=4, label_pool='joint')
        episode = sample_gfsl_episode(splits.train_pool, splits, spec, episode_rng(2, 0))
        joint = set(splits.joint_test)
        supports = {u for shots in episode.support for u in shots}
        for utterance, index in episode.queries:
            self.assertIn(utterance, joint)
            self.assertNotIn(utterance, supports)
            self.assertEqual(episode.classes[index], utterance.label)

    def test_inclusion_frequencies_match_enumeration(self):
        """Test class frequencies over 1000 episodes match the uniform mixed-pair oracle"""
        splits = make_splits(['a', 'b', 'c'], ['x', 'y'])
        spec = EpisodeSpec(C=2, K=1, N_Q=4, label_pool='joint')
        counts = Counter()
        n = 1000
        for i in range(n):
            counts.update(sample_gfsl_episode(splits.train_pool, splits, spec, episode_rng(3, i)).classes)
        # valid sets: one of 3 seen and one of 2 novel, 6 equally likely pairs
        for label, p in {'a': 1 / 3, 'b': 1 / 3, 'c': 1 / 3, 'x': 0.5, 'y': 0.5}.items():
            sigma = np.sqrt(p * (1 - p) / n)
            self.assertLess(abs(counts[label] / n - p), 3 * sigma)

    def test_shots_must_match_K(self):
        """Test an episode K other than the split's pre-sampled shots is rejected"""
        splits = make_splits(['a', 'b'], ['x', 'y'], K=2)
        with self.assertRaisesMessage(EpisodeError, 'K=1'):
            sample_gfsl_episode(splits.train_pool, splits, EpisodeSpec(C=2, K=1, N_Q=4, label_pool='joint'),
                                episode_rng(0, 0))
        with self.assertRaises(EpisodeError):
            sample_novel_episode(splits, EpisodeSpec(C=2, K=1, N_Q=4, label_pool='novel'), episode_rng(0, 0))

    def test_insufficient_queries(self):
        """Test a query demand no class set can meet fails after the retry budget"""
        splits = make_splits(['a'], ['x'])
        with self.assertRaises(EpisodeError):
            sample_gfsl_episode(splits.train_pool, splits, EpisodeSpec(C=2, K=1, N_Q=50, label_pool='joint'),
                                episode_rng(0, 0))


class NovelEpisodeTest(SimpleTestCase):
    """Test novel-space episode sampling"""

    def test_novel_classes_and_shots(self):
        """Test the dispatcher samples novel classes with their shots and novel-test queries"""
        splits = make_splits(['a', 'b'], ['x', 'y', 'z'])
        spec = EpisodeSpec(C=2, K=1, N_Q=6, label_pool='novel')
        episode = sample_episode(splits, spec, episode_rng(0, 0))
        novel_test = set(splits.novel_test)
        for label, shots in zip(episode.classes, episode.support):
            self.assertIn(label, splits.novel_labels)
            self.assertEqual(list(shots), splits.support_shots[label])
        self.assertTrue(all(u in novel_test for u, _ in episode.queries))

    def test_too_many_classes(self):
        """Test C beyond the novel classes is rejected"""
        splits = make_splits(['a', 'b'], ['x', 'y'])
        with self.assertRaises(EpisodeError):
            sample_novel_episode(splits, EpisodeSpec(C=3, K=1, label_pool='novel'), episode_rng(0, 0))

    def test_seen_dispatch(self):
        """Test the seen pool dispatches to training episodes"""
        splits = make_splits(['a', 'b'], ['x'])
        episode = sample_episode(splits, EpisodeSpec(C=2, K=1, N_Q=3), episode_rng(0, 0))
        self.assertEqual(sorted(episode.classes), ['a', 'b'])


class NonEpisodicTaskTest(SimpleTestCase):
    """Test fixed evaluation tasks"""

    def setUp(self):
        self.splits = make_splits(['s1', 's2', 's3', 's4', 's5'], ['n1', 'n2'], K=1)

    def test_joint_space_labels(self):
        """Test SNIPS-shaped joint space has 7 sorted labels"""
        task = nonepisodic_tasks(self.splits, 'joint')
        self.assertEqual(task.labels, ('n1', 'n2', 's1', 's2', 's3', 's4', 's5'))
        self.assertEqual(len(task.test_set), len(self.splits.joint_test))

    def test_novel_test_set(self):
        """Test the novel task's test set is the novel test pool"""
        task = nonepisodic_tasks(self.splits, 'novel')
        self.assertEqual([u for u, _ in task.test_set], self.splits.novel_test)
        self.assertEqual(task.labels, ('n1', 'n2'))
        for utterance, index in task.test_set:
            self.assertEqual(task.labels[index], utterance.label)

    def test_every_label_has_k_supports(self):
        """Test each label carries exactly K supports, identical across calls"""
        first, second = nonepisodic_tasks(self.splits, 'joint'), nonepisodic_tasks(self.splits, 'joint')
        self.assertTrue(all(len(shots) == 1 for shots in first.supports))
        self.assertEqual(first.supports, second.supports)

    def test_shots_mismatch(self):
        """Test a label missing its shots is rejected"""
        support = dict(self.splits.support_indices)
        support['n1'] = ()
        broken = dataclasses.replace(self.splits, support_indices=support)
        with self.assertRaises(EpisodeError):
            nonepisodic_tasks(broken, 'novel')

    def test_unknown_space(self):
        """Test an unknown space is rejected"""
        with self.assertRaises(EpisodeError):
            nonepisodic_tasks(self.splits, 'seen')
