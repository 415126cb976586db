"""
Attentive instance aggregation and class matching.

One scorer, W9^T ReLU(W10 [S ⊕ Q]), is shared by both steps: it weighs the
K enhanced supports of a class into a prototype, then scores the prototype
against the class-pooled query representation.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from diffcore.ops import concat, log_softmax, matmul, relu, softmax


class ClassifierParams(nn.Module):
    def __init__(self, d_h):
        super().__init__()
        self.d_h = d_h
        self.w9 = nn.Parameter(torch.empty(d_h))
        self.w10 = nn.Parameter(torch.empty(d_h, 4 * d_h))
        self.reset_parameters()

    def reset_parameters(self):
        with torch.no_grad():
            self.w9.uniform_(-1.0 / math.sqrt(self.d_h), 1.0 / math.sqrt(self.d_h))
            self.w10.uniform_(-1.0 / math.sqrt(4 * self.d_h), 1.0 / math.sqrt(4 * self.d_h))


@dataclass(frozen=True)
class ClassScore:
    scores: torch.Tensor

    @property
    def probabilities(self):
        return softmax(self.scores, dim=-1)

    @property
    def predicted(self):
        """Argmax class index; the lowest index wins exact ties."""
        return int(torch.argmax(self.scores, dim=-1))


def match_score(s_hat, q_hat, params):
    """W9^T ReLU(W10 [s_hat ⊕ q_hat]), broadcasting q_hat against s_hat."""
    q_hat = q_hat.expand_as(s_hat)
    return matmul(relu(matmul(concat([s_hat, q_hat]), params.w10.T)), params.w9)


def class_scores(s_hats, q_hats, params):
    """
    Score classes from enhanced pairs.

    s_hats, q_hats: (..., K, 2d_h), one row per support of the class.
    Returns (scores (...), prototypes (..., 2d_h), pooled queries (..., 2d_h),
    instance weights (..., K)).
    """
    q_class = q_hats.mean(dim=-2)
    alpha = match_score(s_hats, q_class.unsqueeze(-2), params)
    instance_weights = softmax(alpha, dim=-1)
    prototype = (instance_weights.unsqueeze(-1) * s_hats).sum(dim=-2)
    return match_score(prototype, q_class, params), prototype, q_class, instance_weights


def score_class(query, supports, model):
    """(score, S_hat, Q_hat_c) for one query against one class's K supports."""
    if not supports:
        raise ValueError('score_class needs at least one support instance')
    [(s_hats, q_hats)] = model.enhance_grid([query], [list(supports)])
    score, prototype, q_class, _ = class_scores(s_hats[0], q_hats[0], model.classifier)
    return score, prototype, q_class


def classify_episode(query, class_supports, model):
    """ClassScore of one query over the C classes of an episode."""
    if len(class_supports) < 2:
        raise ValueError(f'an episode needs at least 2 classes, got {len(class_supports)}')
    return ClassScore(model.score([query], class_supports)[0])


def classification_loss(scores, targets):
    """
    Mean softmax cross-entropy.

    scores: a ClassScore, or raw scores of shape (C,) or (n, C);
    targets: the true class index, or one index per row.
    """
    if isinstance(scores, ClassScore):
        scores = scores.scores
    scores = scores.reshape(-1, scores.shape[-1])
    targets = torch.as_tensor(targets, dtype=torch.long).reshape(-1)
    if targets.numel() != scores.shape[0]:
        raise ValueError('one target per score row is required')
    if ((targets < 0) | (targets >= scores.shape[-1])).any():
        raise IndexError(f'target index out of range for {scores.shape[-1]} classes')
    log_probs = log_softmax(scores, dim=-1)
    return -log_probs.gather(1, targets.unsqueeze(1)).mean()
