"""
Frozen word vectors.

Vectors come either from a pretrained text file (`<count> <dim>` header, then
`token v_1 ... v_dim` lines, optionally gzipped) read with gensim, or are
synthesized per token from a hash of (token, seed). The table never takes
part in optimisation.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from gensim.models import KeyedVectors

logger = logging.getLogger(__name__)

UNK = '<unk>'


class EmbeddingError(ValueError):
    pass


class Vocabulary:
    """Token to index map; index 0 is reserved for UNK."""

    def __init__(self, tokens=()):
        self._index = {UNK: 0}
        for token in sorted(set(tokens) - {UNK}):
            self._index[token] = len(self._index)

    @classmethod
    def from_utterances(cls, utterances):
        return cls(token for utterance in utterances for token in utterance.tokens)

    def __len__(self):
        return len(self._index)

    def __contains__(self, token):
        return token in self._index

    def __iter__(self):
        return iter(self._index)

    def index(self, token):
        return self._index.get(token, 0)

    def indices(self, tokens):
        return [self.index(token) for token in tokens]


@dataclass(frozen=True)
class EmbeddingTable:
    matrix: torch.Tensor

    def __post_init__(self):
        if not torch.isfinite(self.matrix).all():
            raise EmbeddingError('embedding table contains non-finite values')
        self.matrix.requires_grad_(False)

    @property
    def d_w(self):
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]

    def to(self, dtype):
        return EmbeddingTable(self.matrix.to(dtype))


def load_vectors(path, vocab):
    """In-vocabulary tokens get their file vectors; UNK and the rest get the mean vector."""
    path = Path(path)
    if not path.is_file():
        raise EmbeddingError(f'vector file not found: {path}')
    try:
        keyed = KeyedVectors.load_word2vec_format(str(path), binary=False, datatype=np.float64)
    except (ValueError, EOFError, UnicodeDecodeError) as exc:
        raise EmbeddingError(f'{path}: {exc}') from exc
    if len(keyed) == 0:
        raise EmbeddingError(f'{path}: no vectors loaded')
    vectors = keyed.vectors.astype(np.float64)
    mean = vectors.mean(axis=0)
    matrix = np.tile(mean, (len(vocab), 1))
    found = 0
    for token in vocab:
        if token != UNK and token in keyed.key_to_index:
            matrix[vocab.index(token)] = vectors[keyed.key_to_index[token]]
            found += 1
    logger.info(
        'Loaded %d vectors of dim %d from %s; %d/%d vocabulary tokens covered',
        len(keyed), keyed.vector_size, path, found, len(vocab) - 1,
    )
    return EmbeddingTable(torch.from_numpy(matrix))


def _token_seed(token, seed):
    digest = hashlib.blake2b(f'{seed}\x00{token}'.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def synthesize_vectors(vocab, d_w, seed=0):
    """Draw each token's vector from N(0, 1/d_w), keyed by a hash of (token, seed)."""
    if d_w < 1:
        raise EmbeddingError(f'd_w must be positive, got {d_w}')
    scale = np.sqrt(1.0 / d_w)
    rows = [np.random.default_rng(_token_seed(token, seed)).normal(0.0, scale, d_w) for token in vocab]
    logger.info('Synthesized %d vectors of dim %d (seed %d)', len(rows), d_w, seed)
    return EmbeddingTable(torch.from_numpy(np.stack(rows)))


def embed_tokens(tokens, table, vocab):
    """T x d_w matrix of token vectors; unknown tokens use the UNK row."""
    if not tokens:
        raise EmbeddingError('cannot embed an empty token sequence')
    return table.matrix[torch.tensor(vocab.indices(tokens), dtype=torch.long)]


class Embedder:
    """Vocabulary and table bound together, as the model consumes them."""

    def __init__(self, vocab, table):
        if len(vocab) != len(table):
            raise EmbeddingError(f'vocabulary has {len(vocab)} tokens but table has {len(table)} rows')
        self.vocab = vocab
        self.table = table

    @property
    def d_w(self):
        return self.table.d_w

    def __call__(self, tokens):
        return embed_tokens(tokens, self.table, self.vocab)

    def to(self, dtype):
        return Embedder(self.vocab, self.table.to(dtype))
