"""
Semantic encoder: a Bi-LSTM over the word vectors followed by r-head
self-attention.

    H = [forward states ; backward states]          T x 2d_h
    A = softmax_over_words(W_s2 tanh(W_s1 H^T))      r x T
    M = A H                                          r x 2d_h

M inherits H's column layout, so columns [0, d_h) of each head are its
forward component and [d_h, 2d_h) its backward component.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from diffcore.lstm import LSTMWeights
from diffcore.ops import matmul, softmax, tanh


class EncoderParams(nn.Module):
    def __init__(self, d_w, d_h, d_a, r):
        super().__init__()
        self.d_w, self.d_h, self.d_a, self.r = d_w, d_h, d_a, r
        self.forward_lstm = LSTMWeights(d_w, d_h)
        self.backward_lstm = LSTMWeights(d_w, d_h)
        # bias-free, as the attention formula is printed
        self.w_s1 = nn.Parameter(torch.empty(d_a, 2 * d_h))
        self.w_s2 = nn.Parameter(torch.empty(r, d_a))
        self.reset_parameters()

    def reset_parameters(self):
        with torch.no_grad():
            for weight in (self.w_s1, self.w_s2):
                bound = 1.0 / math.sqrt(weight.shape[1])
                weight.uniform_(-bound, bound)

    def forward(self, X):
        return encode(X, self)


@dataclass(frozen=True)
class EncodedInstance:
    H: torch.Tensor
    A: torch.Tensor
    M: torch.Tensor

    @property
    def d_h(self):
        return self.H.shape[-1] // 2

    @property
    def T(self):
        return self.H.shape[-2]

    @property
    def r(self):
        return self.M.shape[-2]

    @property
    def m_forward(self):
        return self.M[..., :self.d_h]

    @property
    def m_backward(self):
        return self.M[..., self.d_h:]

    @property
    def h_forward(self):
        return self.H[..., :self.d_h]

    @property
    def h_backward(self):
        return self.H[..., self.d_h:]


def run_bilstm(X, params):
    """T x d_w -> T x 2d_h; row t is [forward state at t, backward state at t]."""
    if X.dim() != 2 or X.shape[0] < 1:
        raise ValueError(f'expected a non-empty T x d_w matrix, got shape {tuple(X.shape)}')
    if X.shape[1] != params.d_w:
        raise ValueError(f'encoder expects d_w={params.d_w}, got {X.shape[1]}')
    forward = params.forward_lstm.scan(X)
    backward = params.backward_lstm.scan(X, reverse=True)
    return torch.cat([forward, backward], dim=-1)


def attend_heads(H, params):
    """Return (A, M): A is r x T with rows summing to 1 over words, M = A H."""
    if H.shape[-1] != 2 * params.d_h:
        raise ValueError(f'expected H of width {2 * params.d_h}, got {H.shape[-1]}')
    scores = matmul(params.w_s2, tanh(matmul(params.w_s1, H.T)))
    A = softmax(scores, dim=-1)
    return A, matmul(A, H)


def encode(X, params):
    H = run_bilstm(X, params)
    A, M = attend_heads(H, params)
    return EncodedInstance(H=H, A=A, M=M)
