"""
Episode sampling for meta-training and episodic evaluation, and the fixed
tasks used by non-episodic evaluation.

Every sampler is a pure function of its pools, the EpisodeSpec and the
numpy Generator it is handed; independent streams come from episode_rng.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

LABEL_POOLS = ('seen', 'novel', 'joint')
SPACES = ('novel', 'joint')
MAX_ATTEMPTS = 100


class EpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeSpec:
    C: int
    K: int
    N_Q: int = 20
    label_pool: str = 'seen'
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise EpisodeError(f'an episode needs C >= 2 classes, got {self.C}')
        if self.K < 1:
            raise EpisodeError(f'K must be positive, got {self.K}')
        if self.N_Q < 1:
            raise EpisodeError(f'N_Q must be positive, got {self.N_Q}')
        if self.label_pool not in LABEL_POOLS:
            raise EpisodeError(f'label_pool must be one of {LABEL_POOLS}, got {self.label_pool!r}')


@dataclass(frozen=True)
class Episode:
    classes: tuple
    support: tuple
    queries: tuple

    @property
    def C(self):
        return len(self.classes)

    @property
    def support_instances(self):
        """(utterance, class index) for every support, class by class."""
        return [(u, c) for c, shots in enumerate(self.support) for u in shots]

    @property
    def query_targets(self):
        return [index for _, index in self.queries]


@dataclass(frozen=True)
class NonEpisodicTask:
    space: str
    labels: tuple
    supports: tuple
    test_set: tuple

    @property
    def targets(self):
        return [index for _, index in self.test_set]


def episode_rng(seed, index):
    """Independent stream for episode `index` of a run seeded with `seed`."""
    return np.random.default_rng([seed, index])


def _by_label(utterances):
    grouped = defaultdict(list)
    for utterance in utterances:
        grouped[utterance.label].append(utterance)
    return grouped


def _draw(items, count, rng):
    if count == 0:
        return []
    return [items[i] for i in rng.choice(len(items), size=count, replace=False)]


def _queries(candidates, classes, N_Q, rng):
    index_of = {label: c for c, label in enumerate(classes)}
    return tuple((u, index_of[u.label]) for u in _draw(candidates, N_Q, rng))


def sample_training_episode(train_pool, spec, rng):
    """C seen classes, K supports each, N_Q queries from the rest of those classes."""
    grouped = _by_label(train_pool)
    labels = sorted(grouped)
    if spec.C > len(labels):
        raise EpisodeError(f'C={spec.C} exceeds the {len(labels)} classes in the training pool')
    classes = tuple(labels[i] for i in rng.choice(len(labels), size=spec.C, replace=False))
    support, remaining = [], []
    for label in classes:
        members = grouped[label]
        if len(members) < spec.K + 1:
            raise EpisodeError(f'class {label!r} has {len(members)} utterances; needs at least {spec.K + 1}')
        order = rng.permutation(len(members))
        support.append(tuple(members[i] for i in order[:spec.K]))
        remaining.extend(members[i] for i in order[spec.K:])
    n_queries = spec.N_Q
    if len(remaining) < n_queries:
        logger.warning('Only %d query candidates for N_Q=%d; using all of them', len(remaining), n_queries)
        n_queries = len(remaining)
    return Episode(classes, tuple(support), _queries(remaining, classes, n_queries, rng))


def _novel_count_weights(C, n_seen, n_novel):
    """Weight of drawing n novel classes, for every feasible n, proportional to the number of class sets."""
    lowest, highest = max(0, C - n_seen), min(C, n_novel)
    if max(1, lowest) <= min(C - 1, highest):
        lowest, highest = max(1, lowest), min(C - 1, highest)
    counts = np.arange(lowest, highest + 1)
    weights = np.array([math.comb(n_novel, n) * math.comb(n_seen, C - n) for n in counts], dtype=float)
    return counts, weights / weights.sum()


def _check_shots(splits, spec):
    if spec.K != splits.shots_K:
        raise EpisodeError(f'episode K={spec.K} does not match the {splits.shots_K} pre-sampled shots per class')


def _mixed_classes(seen, novel, C, rng):
    counts, weights = _novel_count_weights(C, len(seen), len(novel))
    n = int(rng.choice(counts, p=weights))
    chosen = _draw(list(novel), n, rng) + _draw(list(seen), C - n, rng)
    return tuple(chosen[i] for i in rng.permutation(C))


def sample_gfsl_episode(train_pool, splits, spec, rng):
    """
    C classes from the joint label space, with at least one seen and one novel
    class whenever both pools allow it. Seen supports come from the training
    pool, novel supports are the pre-sampled shots, queries come from the
    joint test pool.
    """
    _check_shots(splits, spec)
    seen, novel = splits.seen_labels, splits.novel_labels
    if spec.C > len(seen) + len(novel):
        raise EpisodeError(f'C={spec.C} exceeds the {len(seen) + len(novel)} joint classes')
    train_by_label = _by_label(train_pool)
    test_by_label = _by_label(splits.joint_test)
    shots = splits.support_shots
    for _ in range(MAX_ATTEMPTS):
        classes = _mixed_classes(seen, novel, spec.C, rng)
        candidates = [u for label in classes for u in test_by_label[label]]
        if len(candidates) >= spec.N_Q:
            break
    else:
        raise EpisodeError(f'no class draw offered {spec.N_Q} joint-test queries in {MAX_ATTEMPTS} attempts')
    support = []
    for label in classes:
        if label in novel:
            support.append(tuple(shots[label]))
            continue
        members = train_by_label[label]
        if len(members) < spec.K:
            raise EpisodeError(f'seen class {label!r} has only {len(members)} training utterances')
        support.append(tuple(_draw(members, spec.K, rng)))
    return Episode(classes, tuple(support), _queries(candidates, classes, spec.N_Q, rng))


def sample_novel_episode(splits, spec, rng):
    """C novel classes with their pre-sampled shots, queries from the novel test pool."""
    _check_shots(splits, spec)
    novel = list(splits.novel_labels)
    if spec.C > len(novel):
        raise EpisodeError(f'C={spec.C} exceeds the {len(novel)} novel classes')
    test_by_label = _by_label(splits.novel_test)
    shots = splits.support_shots
    for _ in range(MAX_ATTEMPTS):
        classes = tuple(_draw(novel, spec.C, rng))
        candidates = [u for label in classes for u in test_by_label[label]]
        if len(candidates) >= spec.N_Q:
            break
    else:
        raise EpisodeError(f'no class draw offered {spec.N_Q} novel-test queries in {MAX_ATTEMPTS} attempts')
    support = tuple(tuple(shots[label]) for label in classes)
    return Episode(classes, support, _queries(candidates, classes, spec.N_Q, rng))


def sample_episode(splits, spec, rng):
    """Dispatch on spec.label_pool: seen, novel or joint."""
    if spec.label_pool == 'seen':
        return sample_training_episode(splits.train_pool, spec, rng)
    if spec.label_pool == 'novel':
        return sample_novel_episode(splits, spec, rng)
    return sample_gfsl_episode(splits.train_pool, splits, spec, rng)


def nonepisodic_tasks(splits, space):
    """Sorted label list, the pre-sampled supports per label and the test set in file order."""
    if space not in SPACES:
        raise EpisodeError(f'space must be one of {SPACES}, got {space!r}')
    labels = splits.novel_labels if space == 'novel' else splits.joint_labels
    labels = tuple(sorted(labels))
    shots = splits.support_shots
    for label in labels:
        if len(shots.get(label, ())) != splits.shots_K:
            raise EpisodeError(f'class {label!r} does not have exactly K={splits.shots_K} support shots')
    index_of = {label: i for i, label in enumerate(labels)}
    test_indices = splits.novel_indices if space == 'novel' else sorted(splits.joint_test_indices)
    test_set = tuple((splits.corpus[i], index_of[splits.corpus[i].label]) for i in test_indices)
    return NonEpisodicTask(space, labels, tuple(tuple(shots[label]) for label in labels), test_set)
