"""
The assembled matching network and its inference wrapper.
"""

import logging
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from encoder.semantic import EncoderParams, encode
from matching.aggregation import AggregatorParams, aggregate, enhance_pair
from matching.perspectives import MATCH_LEVELS, MATCHERS, MatchUnits, PerspectiveWeights, match_all

from .scoring import ClassifierParams, class_scores

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    d_w: int
    d_h: int = 64
    d_a: int = 20
    r: int = 4
    perspectives: int = 5
    matchers: tuple = field(default=MATCHERS)
    match_level: str = 'head'

    def __post_init__(self):
        object.__setattr__(self, 'matchers', tuple(m for m in MATCHERS if m in self.matchers))
        for name in ('d_w', 'd_h', 'd_a', 'r', 'perspectives'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} must be positive')
        if not self.matchers:
            raise ValueError(f'at least one matcher from {MATCHERS} is required')
        if self.match_level not in MATCH_LEVELS:
            raise ValueError(f'match_level must be one of {MATCH_LEVELS}')

    @property
    def match_width(self):
        return len(self.matchers) * self.perspectives

    def to_dict(self):
        data = asdict(self)
        data['matchers'] = list(self.matchers)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['matchers'] = tuple(data.get('matchers', MATCHERS))
        return cls(**data)


class SemanticMatchingNetwork(nn.Module):
    """Encoder, perspective matching, aggregation and the class scorer."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = EncoderParams(config.d_w, config.d_h, config.d_a, config.r)
        self.perspectives = PerspectiveWeights(config.perspectives, config.d_h)
        self.aggregator = AggregatorParams(config.match_width, config.d_h)
        self.classifier = ClassifierParams(config.d_h)

    @property
    def dtype(self):
        return self.encoder.w_s1.dtype

    def encode(self, X):
        return encode(X, self.encoder)

    def _enhance_heads(self, queries, supports):
        # queries (n_q, 1, r, d_h) against supports (1, K, r, d_h)
        Q = MatchUnits.stack([MatchUnits.heads(q) for q in queries]).map(lambda t: t.unsqueeze(1))
        S = MatchUnits.stack([MatchUnits.heads(s) for s in supports]).map(lambda t: t.unsqueeze(0))
        s_hats = aggregate(match_all(S, Q, self.perspectives, self.config.matchers), self.aggregator)
        q_hats = aggregate(match_all(Q, S, self.perspectives, self.config.matchers), self.aggregator)
        return s_hats, q_hats

    def _enhance_words(self, queries, supports):
        rows = [
            [
                enhance_pair(s, q, self.perspectives, self.aggregator, self.config.matchers, level='word')
                for s in supports
            ]
            for q in queries
        ]
        s_hats = torch.stack([torch.stack([pair[0] for pair in row]) for row in rows])
        q_hats = torch.stack([torch.stack([pair[1] for pair in row]) for row in rows])
        return s_hats, q_hats

    def enhance_grid(self, queries, class_supports):
        """
        Enhanced pairs for every query against every support of every class.

        Returns one (s_hats, q_hats) per class, each (n_q, K_c, 2d_h).
        """
        enhance = self._enhance_heads if self.config.match_level == 'head' else self._enhance_words
        grid = []
        for supports in class_supports:
            if not supports:
                raise ValueError('every class needs at least one support instance')
            grid.append(enhance(queries, supports))
        return grid

    def score(self, queries, class_supports):
        """(n_q, C) class scores for encoded queries against encoded supports."""
        grid = self.enhance_grid(queries, class_supports)
        return torch.stack([class_scores(s, q, self.classifier)[0] for s, q in grid], dim=-1)


class IntentMatcher:
    """Token-level predictor over a fixed network and embedder."""

    def __init__(self, network, embedder, chunk_size=16):
        self.network = network
        self.embedder = embedder.to(network.dtype)
        self.chunk_size = chunk_size

    def encode(self, tokens):
        return self.network.encode(self.embedder(tokens))

    def encode_classes(self, class_supports):
        return [[self.encode(tokens) for tokens in supports] for supports in class_supports]

    @torch.no_grad()
    def predict(self, queries, class_supports, encoded_supports=None):
        """Argmax class index per query; a single-class space predicts 0 without scoring."""
        if len(class_supports) == 1:
            return [0] * len(queries)
        if encoded_supports is None:
            encoded_supports = self.encode_classes(class_supports)
        predictions = []
        for start in range(0, len(queries), self.chunk_size):
            chunk = [self.encode(tokens) for tokens in queries[start:start + self.chunk_size]]
            scores = self.network.score(chunk, encoded_supports)
            predictions.extend(int(i) for i in torch.argmax(scores, dim=-1))
        return predictions
