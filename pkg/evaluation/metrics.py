"""
Episodic and non-episodic accuracy, and the S-J / S-N / h-acc report.

A model here is anything with `predict(queries, class_supports)`, taking
token tuples and returning one class index per query. Accuracies are
percentages; reports round them to two decimals.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from episodes.sampling import episode_rng, sample_episode

logger = logging.getLogger(__name__)

MODES = ('episodic', 'nonepisodic')


class EvaluationError(ValueError):
    pass


def harmonic_accuracy(s_j, s_n):
    """2 s_j s_n / (s_j + s_n)"""
    if s_j < 0 or s_n < 0:
        raise EvaluationError('accuracies must be non-negative')
    if s_j == 0 and s_n == 0:
        raise EvaluationError('harmonic accuracy is undefined when both accuracies are 0')
    return 2.0 * s_j * s_n / (s_j + s_n)


def _tokens(utterances):
    return [u.tokens for u in utterances]


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _episode_counts(model, episode):
    queries = [u for u, _ in episode.queries]
    predictions = model.predict(_tokens(queries), [_tokens(shots) for shots in episode.support])
    correct = sum(int(p == t) for p, t in zip(predictions, episode.query_targets))
    return correct, len(queries)


def episodic_seed_accuracies(model, splits, spec, n_episodes, seeds, threads=1):
    """Accuracy (percent) per seed over n_episodes episodes drawn from spec.label_pool."""
    if n_episodes < 1:
        raise EvaluationError(f'n_episodes must be at least 1, got {n_episodes}')
    if not seeds:
        raise EvaluationError('at least one seed is required')
    accuracies = []
    for seed in seeds:
        episodes = [sample_episode(splits, spec, episode_rng(seed, i)) for i in range(n_episodes)]
        counts = _map(lambda episode: _episode_counts(model, episode), episodes, threads)
        correct, total = (sum(c[0] for c in counts), sum(c[1] for c in counts))
        accuracies.append(100.0 * correct / total)
        logger.info(
            'Episodic %s accuracy, seed %d: %.2f%% over %d episodes', spec.label_pool, seed, accuracies[-1], n_episodes,
        )
    return accuracies


def evaluate_episodic(model, splits, spec, n_episodes, seeds, threads=1):
    """Correct over total queries per seed, averaged over seeds."""
    return float(np.mean(episodic_seed_accuracies(model, splits, spec, n_episodes, seeds, threads)))


@dataclass(frozen=True)
class NonEpisodicResult:
    space: str
    labels: tuple
    accuracy: float
    confusion: np.ndarray

    @property
    def total(self):
        return int(self.confusion.sum())

    def confusion_dict(self):
        return {'labels': list(self.labels), 'matrix': self.confusion.tolist()}


def evaluate_nonepisodic(model, task, threads=1):
    """Classify every test utterance once over the task's whole label space."""
    labels = task.labels
    for utterance, index in task.test_set:
        if utterance.label not in labels or labels[index] != utterance.label:
            raise EvaluationError(f'test label {utterance.label!r} is not in the {task.space} label space')
    if len(task.supports) != len(labels) or any(not shots for shots in task.supports):
        raise EvaluationError('every label in the space needs support instances')
    queries = [u.tokens for u, _ in task.test_set]
    if len(labels) == 1:
        predictions = [0] * len(queries)
    else:
        supports = [_tokens(shots) for shots in task.supports]
        shards = [queries[i::max(threads, 1)] for i in range(max(threads, 1))]
        shard_predictions = _map(lambda shard: model.predict(shard, supports) if shard else [], shards, threads)
        predictions = [None] * len(queries)
        for i, shard in enumerate(shard_predictions):
            predictions[i::max(threads, 1)] = shard
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for target, predicted in zip(task.targets, predictions):
        confusion[target, predicted] += 1
    accuracy = 100.0 * np.trace(confusion) / confusion.sum() if confusion.sum() else 0.0
    logger.info('Non-episodic %s accuracy: %.2f%% over %d utterances', task.space, accuracy, len(queries))
    return NonEpisodicResult(task.space, labels, float(accuracy), confusion)


def _percent(value):
    return None if value is None else round(float(value), 2)


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    shots: int
    s_j: float = None
    s_n: float = None
    n_episodes: int = None
    seeds: tuple = None
    confusion: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise EvaluationError(f'mode must be one of {MODES}')

    @property
    def h_acc(self):
        if self.s_j is None or self.s_n is None:
            return None
        if self.s_j == 0 and self.s_n == 0:
            return 0.0
        return harmonic_accuracy(self.s_j, self.s_n)

    def merge(self, other):
        """Fill the spaces this report lacks from another report of the same mode and shots."""
        if (other.mode, other.shots) != (self.mode, self.shots):
            raise EvaluationError('only reports of the same mode and shots can be merged')
        return replace(
            self,
            s_j=self.s_j if self.s_j is not None else other.s_j,
            s_n=self.s_n if self.s_n is not None else other.s_n,
            confusion={**other.confusion, **self.confusion},
        )

    def to_dict(self):
        return {
            'mode': self.mode,
            'shots': self.shots,
            's_j': _percent(self.s_j),
            's_n': _percent(self.s_n),
            'h_acc': _percent(self.h_acc),
            'n_episodes': self.n_episodes,
            'seeds': list(self.seeds) if self.seeds is not None else None,
            'confusion': self.confusion or None,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            mode=data['mode'],
            shots=data['shots'],
            s_j=data.get('s_j'),
            s_n=data.get('s_n'),
            n_episodes=data.get('n_episodes'),
            seeds=tuple(data['seeds']) if data.get('seeds') is not None else None,
            confusion=data.get('confusion') or {},
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'

    def table(self):
        def cell(value):
            return '-' if value is None else f'{value:.2f}'

        rows = [
            f'{"mode":<12} {"shots":>5} {"S-J":>7} {"S-N":>7} {"h-acc":>7}',
            f'{self.mode:<12} {self.shots:>5} {cell(self.s_j):>7} {cell(self.s_n):>7} {cell(self.h_acc):>7}',
        ]
        return '\n'.join(rows) + '\n'

    def write(self, directory, stem):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f'{stem}.json').write_text(self.to_json(), encoding='utf-8')
        (directory / f'{stem}.txt').write_text(self.table(), encoding='utf-8')
        logger.info('Wrote %s metrics to %s', self.mode, directory / f'{stem}.json')

    @classmethod
    def read(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))
        except (KeyError, ValueError) as exc:
            raise EvaluationError(f'{path}: not a metrics report ({exc})') from exc
