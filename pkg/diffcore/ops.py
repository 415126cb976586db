"""
Differentiable operations shared by the encoder, matching, classifier and
regularizers.

Every op is a thin wrapper around torch that checks its output is finite and
names itself when it is not, so a NaN in a long forward pass is reported at
the op that produced it rather than at the loss.
"""

import torch

COSINE_EPS = 1e-8


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""

    def __init__(self, op):
        super().__init__(f'non-finite value produced by {op}')
        self.op = op


def checked(op, tensor):
    if not torch.isfinite(tensor).all():
        raise NonFiniteError(op)
    return tensor


def matmul(a, b):
    return checked('matmul', a @ b)


def tanh(x):
    return checked('tanh', torch.tanh(x))


def sigmoid(x):
    return checked('sigmoid', torch.sigmoid(x))


def relu(x):
    return checked('relu', torch.relu(x))


def exp(x):
    return checked('exp', torch.exp(x))


def log(x):
    return checked('log', torch.log(x))


def softmax(x, dim=-1):
    return checked('softmax', torch.softmax(x, dim=dim))


def log_softmax(x, dim=-1):
    return checked('log_softmax', torch.log_softmax(x, dim=dim))


def concat(tensors, dim=-1):
    return checked('concat', torch.cat(list(tensors), dim=dim))


def max_reduce(x, dim):
    """
    Elementwise max over `dim`.

    Gradient reaches the selected element only; on ties the lowest index
    wins (torch.argmax returns the first maximal index).
    """
    index = torch.argmax(x, dim=dim, keepdim=True)
    return checked('max_reduce', torch.gather(x, dim, index).squeeze(dim))


def guarded_cosine(u, v, dim=-1, eps=COSINE_EPS):
    """cos(u, v) = <u, v> / (max(|u|, eps) * max(|v|, eps)); 0 for a zero vector."""
    dot = (u * v).sum(dim=dim)
    u_norm = torch.linalg.vector_norm(u, dim=dim).clamp(min=eps)
    v_norm = torch.linalg.vector_norm(v, dim=dim).clamp(min=eps)
    return checked('cosine', dot / (u_norm * v_norm))


def lstm_cell(x, h, c, weight_ih, weight_hh, bias):
    """
    One step of a standard LSTM cell; gates are packed (input, forget, cell, output).

    x: (..., d_in), h and c: (..., d_h), weight_ih: (4d_h, d_in),
    weight_hh: (4d_h, d_h), bias: (4d_h,).
    """
    gates = x @ weight_ih.T + h @ weight_hh.T + bias
    i, f, g, o = gates.chunk(4, dim=-1)
    i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
    c_next = f * c + i * torch.tanh(g)
    h_next = o * torch.tanh(c_next)
    return checked('lstm_cell', h_next), checked('lstm_cell', c_next)
