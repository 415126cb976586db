"""
Seen/novel/joint splits with pre-sampled support shots.

The corpus is partitioned by record index into four disjoint pools:
train (seen classes), joint_seen (the held-out share of every seen class),
novel (novel utterances left after the shots) and support (K shots for every
class). The joint test pool is joint_seen followed by novel.
"""

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .parsing import CorpusError

logger = logging.getLogger(__name__)

POOLS = ('train', 'joint_seen', 'novel', 'support')
NOVEL_HEADER = '# novel_labels='


@dataclass(frozen=True)
class SplitSpec:
    novel_labels: frozenset
    shots_K: int = 1
    joint_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'novel_labels', frozenset(self.novel_labels))
        if not self.novel_labels:
            raise CorpusError('at least one novel label is required')
        if not 0.0 < self.joint_fraction < 1.0:
            raise CorpusError(f'joint_fraction must lie in (0, 1), got {self.joint_fraction}')
        if self.shots_K < 1:
            raise CorpusError(f'K must be positive, got {self.shots_K}')
        if self.seed < 0:
            raise CorpusError('seed must be a non-negative integer')


@dataclass(frozen=True)
class DatasetSplits:
    corpus: tuple
    spec: SplitSpec
    seen_labels: tuple
    novel_labels: tuple
    train_indices: tuple
    joint_seen_indices: tuple
    novel_indices: tuple
    support_indices: dict = field(default_factory=dict)

    def _pick(self, indices):
        return [self.corpus[i] for i in indices]

    @property
    def joint_labels(self):
        return tuple(sorted(self.seen_labels + self.novel_labels))

    @property
    def train_pool(self):
        return self._pick(self.train_indices)

    @property
    def novel_test(self):
        return self._pick(self.novel_indices)

    @property
    def joint_test_indices(self):
        return self.joint_seen_indices + self.novel_indices

    @property
    def joint_test(self):
        return self._pick(self.joint_test_indices)

    @property
    def support_shots(self):
        return {label: self._pick(indices) for label, indices in self.support_indices.items()}

    @property
    def shots_K(self):
        return self.spec.shots_K

    def pool_of(self):
        """Record index -> pool name, over the whole corpus."""
        membership = {}
        for pool, indices in (
            ('train', self.train_indices),
            ('joint_seen', self.joint_seen_indices),
            ('novel', self.novel_indices),
        ):
            membership.update((i, pool) for i in indices)
        for indices in self.support_indices.values():
            membership.update((i, 'support') for i in indices)
        return membership


def _indices_by_label(corpus):
    grouped = defaultdict(list)
    for index, utterance in enumerate(corpus):
        grouped[utterance.label].append(index)
    return grouped


def build_splits(corpus, spec):
    """Deterministically split corpus per (corpus, spec)."""
    corpus = tuple(corpus)
    grouped = _indices_by_label(corpus)
    unknown = sorted(spec.novel_labels - set(grouped))
    if unknown:
        raise CorpusError(f'novel label(s) not in corpus: {", ".join(unknown)}')
    seen_labels = tuple(sorted(set(grouped) - spec.novel_labels))
    novel_labels = tuple(sorted(spec.novel_labels))
    if not seen_labels:
        raise CorpusError('every label is novel; no seen classes left for training')

    K = spec.shots_K
    min_seen = math.ceil(round(1 / spec.joint_fraction, 9))
    rng = np.random.default_rng(spec.seed)
    train, joint_seen, novel, support = [], [], [], {}

    for label in seen_labels:
        members = grouped[label]
        # rounded so 0.29 * 100 holds out 29, not 28
        held_out = math.floor(round(spec.joint_fraction * len(members), 9))
        if len(members) < max(min_seen, K + 1) or len(members) - held_out < K + 1:
            raise CorpusError(
                f'seen class {label!r} has {len(members)} utterances; too few for '
                f'K={K} with joint_fraction={spec.joint_fraction}'
            )
        order = [members[i] for i in rng.permutation(len(members))]
        joint_seen.extend(order[:held_out])
        remainder = order[held_out:]
        support[label] = tuple(sorted(remainder[:K]))
        train.extend(remainder[K:])

    for label in novel_labels:
        members = grouped[label]
        if len(members) < K + 1:
            raise CorpusError(f'novel class {label!r} has {len(members)} utterances; needs at least {K + 1}')
        order = [members[i] for i in rng.permutation(len(members))]
        support[label] = tuple(sorted(order[:K]))
        novel.extend(order[K:])

    splits = DatasetSplits(
        corpus=corpus,
        spec=spec,
        seen_labels=seen_labels,
        novel_labels=novel_labels,
        train_indices=tuple(sorted(train)),
        joint_seen_indices=tuple(sorted(joint_seen)),
        novel_indices=tuple(sorted(novel)),
        support_indices=support,
    )
    logger.info(
        'Split %d utterances: |Y_s|=%d |Y_n|=%d N_s=%d N_n=%d N_j=%d shots=%d',
        len(corpus), len(seen_labels), len(novel_labels), len(splits.train_indices),
        len(splits.novel_indices), len(splits.joint_test_indices), K * len(support),
    )
    return splits


def write_manifest(splits, path):
    spec = splits.spec
    lines = [
        f'# seed={spec.seed} joint_fraction={spec.joint_fraction} K={spec.shots_K}',
        NOVEL_HEADER + json.dumps(list(splits.novel_labels)),
    ]
    membership = splits.pool_of()
    lines += [f'{membership[i]}\t{i}' for i in sorted(membership)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info('Wrote split manifest to %s', path)


def read_manifest(path, corpus):
    """Rebuild DatasetSplits for corpus from a manifest written by write_manifest."""
    corpus = tuple(corpus)
    header, pools = {}, defaultdict(list)
    with Path(path).open(encoding='utf-8') as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(NOVEL_HEADER):
                try:
                    header['novel_labels'] = json.loads(line[len(NOVEL_HEADER):])
                except ValueError as exc:
                    raise CorpusError(f'{path}:{number}: malformed novel_labels header') from exc
                continue
            if line.startswith('#'):
                for item in line[1:].split():
                    key, _, value = item.partition('=')
                    header[key] = value
                continue
            pool, _, index = line.partition('\t')
            if pool not in POOLS or not index.isdigit() or int(index) >= len(corpus):
                raise CorpusError(f'{path}:{number}: malformed manifest line')
            pools[pool].append(int(index))
    try:
        spec = SplitSpec(
            novel_labels=frozenset(header['novel_labels']),
            shots_K=int(header['K']),
            joint_fraction=float(header['joint_fraction']),
            seed=int(header['seed']),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f'{path}: incomplete manifest header') from exc
    if sum(len(v) for v in pools.values()) != len(corpus):
        raise CorpusError(f'{path}: manifest does not cover the corpus')
    support = defaultdict(list)
    for i in pools['support']:
        support[corpus[i].label].append(i)
    labels = {u.label for u in corpus}
    unknown = sorted(spec.novel_labels - labels)
    if unknown:
        raise CorpusError(f'{path}: novel label(s) not in corpus: {", ".join(unknown)}')
    short = sorted(label for label in labels if len(support[label]) != spec.shots_K)
    if short:
        raise CorpusError(f'{path}: expected K={spec.shots_K} support shots for {", ".join(short)}')
    return DatasetSplits(
        corpus=corpus,
        spec=spec,
        seen_labels=tuple(sorted(labels - spec.novel_labels)),
        novel_labels=tuple(sorted(spec.novel_labels)),
        train_indices=tuple(sorted(pools['train'])),
        joint_seen_indices=tuple(sorted(pools['joint_seen'])),
        novel_indices=tuple(sorted(pools['novel'])),
        support_indices={label: tuple(sorted(v)) for label, v in sorted(support.items())},
    )
