"""
Attention regularizers.

Both KL terms work on the per-word aggregate p = (sum over heads of A) / r,
a distribution over the utterance's words.
"""

import math
from dataclasses import dataclass

import torch

from diffcore.ops import checked

SMOOTHING = 1e-8


@dataclass(frozen=True)
class RegularizerWeights:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    kl_cap: float = 10.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError('regularizer weights must be non-negative')
        if not self.kl_cap > 0:
            raise ValueError('kl_cap must be positive (use inf for no cap)')


def self_attn_penalty(A):
    """||A A^T - I||_F^2"""
    r = A.shape[-2]
    gram = A @ A.transpose(-1, -2) - torch.eye(r, dtype=A.dtype)
    return checked('self_attn_penalty', (gram * gram).sum(dim=(-2, -1)))


def word_distribution(A):
    return A.sum(dim=-2) / A.shape[-2]


def _kl(p, q):
    # 0 log 0 = 0
    positive = p > 0
    safe_p = torch.where(positive, p, torch.ones_like(p))
    return torch.where(positive, p * (torch.log(safe_p) - torch.log(q)), torch.zeros_like(p)).sum(dim=-1)


def uniform_penalty(A):
    """KL(p || U_T); lies in [0, ln T]."""
    p = word_distribution(A)
    T = p.shape[-1]
    return checked('uniform_penalty', _kl(p, torch.full_like(p, 1.0 / T)))


def _smoothed(p, length):
    padded = torch.nn.functional.pad(p, (0, length - p.shape[-1])) + SMOOTHING
    return padded / padded.sum(dim=-1, keepdim=True)


def discr_penalty(A_q, A_s, same_label, kl_cap=10.0):
    """
    +KL(p_q || p_s) for a same-label pair, -KL for a different-label pair,
    with the divergence capped at kl_cap.

    Distributions of different lengths are zero-padded to the longer one,
    smoothed by SMOOTHING and renormalised before comparison.
    """
    p_q, p_s = word_distribution(A_q), word_distribution(A_s)
    length = max(p_q.shape[-1], p_s.shape[-1])
    divergence = _kl(_smoothed(p_q, length), _smoothed(p_s, length))
    if math.isfinite(kl_cap):
        divergence = divergence.clamp(max=kl_cap)
    return checked('discr_penalty', divergence if same_label else -divergence)


def episode_discr_loss(query_attention, predicted_labels, support_attention, support_labels, kl_cap=10.0):
    """
    Mean discr_penalty over every (query, support instance) pair.

    predicted_labels are plain values (already detached from the graph); a
    pair counts as same-label when the query's prediction equals the
    support's true label.
    """
    if not query_attention or not support_attention:
        raise ValueError('episode_discr_loss needs at least one query and one support instance')
    if len(query_attention) != len(predicted_labels) or len(support_attention) != len(support_labels):
        raise ValueError('attention and label lists differ in length')
    penalties = [
        discr_penalty(A_q, A_s, predicted == label, kl_cap)
        for A_q, predicted in zip(query_attention, predicted_labels)
        for A_s, label in zip(support_attention, support_labels)
    ]
    return torch.stack(penalties).mean()
