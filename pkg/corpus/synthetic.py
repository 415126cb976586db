"""
Generated intent corpus for smoke runs and learnability checks.

Each class owns a few exclusive keyword tokens; every utterance mixes at least
two distinct keywords of its class with filler tokens shared by all classes.
With three keywords per class any two utterances of a class share a keyword.
"""

import logging

import numpy as np

from .parsing import LabeledUtterance

logger = logging.getLogger(__name__)

SYNTHETIC = 'synthetic'


def synthetic_labels(n_classes):
    return [f'intent{c:02d}' for c in range(n_classes)]


def synthetic_novel_labels(n_classes=8, n_novel=2):
    """The last n_novel generated labels."""
    return frozenset(synthetic_labels(n_classes)[n_classes - n_novel:])


def generate_corpus(n_classes=8, per_class=40, keywords=3, n_filler=12, length=(4, 8), seed=0):
    """Seed-deterministic list of LabeledUtterance, class by class."""
    shortest, longest = length
    if n_classes < 2 or per_class < 1 or keywords < 1 or n_filler < 1:
        raise ValueError('synthetic corpus needs >= 2 classes and positive sizes')
    if not 1 <= shortest <= longest:
        raise ValueError(f'invalid utterance length range {length}')
    rng = np.random.default_rng(seed)
    filler = [f'filler{j:02d}' for j in range(n_filler)]
    utterances = []
    for c, label in enumerate(synthetic_labels(n_classes)):
        vocabulary = [f'kw{c:02d}x{j}' for j in range(keywords)]
        for _ in range(per_class):
            size = int(rng.integers(shortest, longest + 1))
            most = min(keywords, size)
            n_keywords = int(rng.integers(min(2, most), most + 1))
            tokens = [vocabulary[i] for i in rng.choice(keywords, size=n_keywords, replace=False)]
            tokens += [filler[i] for i in rng.integers(0, n_filler, size=size - n_keywords)]
            utterances.append(LabeledUtterance(tuple(tokens[i] for i in rng.permutation(size)), label))
    logger.info('Generated %d synthetic utterances over %d classes (seed %d)', len(utterances), n_classes, seed)
    return utterances
