"""Aggregation of match sequences into enhanced instance representations."""

import torch
from torch import nn

from diffcore.lstm import LSTMWeights

from .perspectives import MATCHERS, match_all


class AggregatorParams(nn.Module):
    """The aggregation Bi-LSTM; input width is (#enabled matchers) * l."""

    def __init__(self, input_size, d_h):
        super().__init__()
        self.forward_lstm = LSTMWeights(input_size, d_h)
        self.backward_lstm = LSTMWeights(input_size, d_h)


def aggregate(seq, params):
    """
    Forward LSTM over units 1..n, backward LSTM over n..1; returns the
    concatenated final hidden states, (..., 2d_h).
    """
    forward = params.forward_lstm.scan(seq.forward)[..., -1, :]
    backward = params.backward_lstm.scan(seq.backward, reverse=True)[..., 0, :]
    return torch.cat([forward, backward], dim=-1)


def enhance_pair(S, Q, weights, agg_params, matchers=MATCHERS, level='head'):
    """(S_hat, Q_hat): S matched against Q and Q against S, same parameters."""
    s_hat = aggregate(match_all(S, Q, weights, matchers, level), agg_params)
    q_hat = aggregate(match_all(Q, S, weights, matchers, level), agg_params)
    return s_hat, q_hat
