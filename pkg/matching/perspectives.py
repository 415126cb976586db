"""
Multi-perspective matching between the heads (or words) of two instances.

Every function works per direction on tensors of shape (..., n, d_h) and
broadcasts over leading dimensions, so a whole query x support grid can be
matched in one call.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from diffcore.ops import COSINE_EPS, checked, concat, guarded_cosine, max_reduce

# concatenation order of the match vector
MATCHERS = ('head_wise', 'max_attentive', 'attentive', 'max_pool')
MATCH_LEVELS = ('head', 'word')

# (forward, backward) perspective weights used by each matcher
WEIGHT_NAMES = {
    'head_wise': ('w1', 'w2'),
    'max_pool': ('w3', 'w4'),
    'attentive': ('w5', 'w6'),
    'max_attentive': ('w7', 'w8'),
}


class PerspectiveWeights(nn.Module):
    """W1 ... W8, each l x d_h."""

    def __init__(self, perspectives, d_h):
        super().__init__()
        self.perspectives, self.d_h = perspectives, d_h
        for i in range(1, 9):
            self.register_parameter(f'w{i}', nn.Parameter(torch.empty(perspectives, d_h)))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.d_h)
        with torch.no_grad():
            for p in self.parameters():
                p.uniform_(-bound, bound)

    def pair(self, matcher):
        forward, backward = WEIGHT_NAMES[matcher]
        return getattr(self, forward), getattr(self, backward)


@dataclass(frozen=True)
class MatchUnits:
    """The vectors one instance offers for matching, per direction: (..., n, d_h)."""
    forward: torch.Tensor
    backward: torch.Tensor

    @classmethod
    def heads(cls, instance):
        return cls(instance.m_forward, instance.m_backward)

    @classmethod
    def words(cls, instance):
        return cls(instance.h_forward, instance.h_backward)

    @classmethod
    def of(cls, instance, level='head'):
        if isinstance(instance, MatchUnits):
            return instance
        if level not in MATCH_LEVELS:
            raise ValueError(f'unknown match level {level!r}')
        return cls.heads(instance) if level == 'head' else cls.words(instance)

    @classmethod
    def stack(cls, units, dim=0):
        return cls(
            torch.stack([u.forward for u in units], dim=dim),
            torch.stack([u.backward for u in units], dim=dim),
        )

    def map(self, fn):
        return MatchUnits(fn(self.forward), fn(self.backward))

    @property
    def count(self):
        return self.forward.shape[-2]


@dataclass(frozen=True)
class MatchSequence:
    """Per unit and direction, the concatenated match vectors: (..., n, width)."""
    forward: torch.Tensor
    backward: torch.Tensor

    @property
    def width(self):
        return self.forward.shape[-1]


def multi_perspective(v1, v2, W):
    """m_k = cosine(W_k * v1, W_k * v2) for every perspective row W_k."""
    return guarded_cosine(v1.unsqueeze(-2) * W, v2.unsqueeze(-2) * W)


def _pairwise(ms, mq, W):
    """(..., n_s, n_q, l): every source unit against every target unit."""
    return multi_perspective(ms.unsqueeze(-2), mq.unsqueeze(-3), W)


def representatives(ms, mq):
    """
    For each source unit i, the cosine-weighted mean of the target units:
    sum_j beta_ij mq_j / sum_j beta_ij, beta_ij = cosine(ms_i, mq_j).

    The denominator is pushed away from zero by COSINE_EPS, keeping its sign.
    """
    beta = guarded_cosine(ms.unsqueeze(-2), mq.unsqueeze(-3))
    total = beta.sum(dim=-1, keepdim=True)
    sign = torch.where(total >= 0, torch.ones_like(total), -torch.ones_like(total))
    total = total + COSINE_EPS * sign
    return checked('representatives', (beta @ mq) / total)


def _check_heads(S, Q):
    if S.count != Q.count:
        raise ValueError(f'instances have different head counts ({S.count} vs {Q.count})')


def head_wise(S, Q, w1, w2):
    """Head i of S against head i of Q, per direction."""
    S, Q = MatchUnits.of(S), MatchUnits.of(Q)
    _check_heads(S, Q)
    return multi_perspective(S.forward, Q.forward, w1), multi_perspective(S.backward, Q.backward, w2)


def max_pool_match(S, Q, w3, w4):
    """Head i of S against every head of Q, keeping the max per perspective."""
    S, Q = MatchUnits.of(S), MatchUnits.of(Q)
    return (
        max_reduce(_pairwise(S.forward, Q.forward, w3), dim=-2),
        max_reduce(_pairwise(S.backward, Q.backward, w4), dim=-2),
    )


def attentive_match(S, Q, w5, w6):
    """Head i of S against its attentive representative over Q's heads."""
    S, Q = MatchUnits.of(S), MatchUnits.of(Q)
    return (
        multi_perspective(S.forward, representatives(S.forward, Q.forward), w5),
        multi_perspective(S.backward, representatives(S.backward, Q.backward), w6),
    )


def max_attentive_match(S, Q, w7, w8):
    """Head i of S against every representative, keeping the max per perspective."""
    S, Q = MatchUnits.of(S), MatchUnits.of(Q)
    return (
        max_reduce(_pairwise(S.forward, representatives(S.forward, Q.forward), w7), dim=-2),
        max_reduce(_pairwise(S.backward, representatives(S.backward, Q.backward), w8), dim=-2),
    )


def word_wise_match(S, Q, w1, w2):
    """
    Word-level stand-in for head_wise: every forward state of S against Q's
    last forward state, every backward state against Q's first backward state.
    """
    S, Q = MatchUnits.of(S, 'word'), MatchUnits.of(Q, 'word')
    return (
        multi_perspective(S.forward, Q.forward[..., -1:, :], w1),
        multi_perspective(S.backward, Q.backward[..., :1, :], w2),
    )


_MATCHER_FNS = {
    'max_attentive': max_attentive_match,
    'attentive': attentive_match,
    'max_pool': max_pool_match,
}


def match_all(source, target, weights, matchers=MATCHERS, level='head'):
    """
    Concatenate the enabled matchers' outputs per unit and direction, in the
    order head_wise, max_attentive, attentive, max_pool.
    """
    unknown = set(matchers) - set(MATCHERS)
    if unknown or not matchers:
        raise ValueError(f'matchers must be a non-empty subset of {MATCHERS}')
    S, T = MatchUnits.of(source, level), MatchUnits.of(target, level)
    forward, backward = [], []
    for name in MATCHERS:
        if name not in matchers:
            continue
        if name == 'head_wise':
            fn = word_wise_match if level == 'word' else head_wise
        else:
            fn = _MATCHER_FNS[name]
        fw, bw = fn(S, T, *weights.pair(name))
        forward.append(fw)
        backward.append(bw)
    return MatchSequence(concat(forward), concat(backward))
