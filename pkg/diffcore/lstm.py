import math

import torch
from torch import nn

from .ops import lstm_cell


class LSTMWeights(nn.Module):
    """Weights of one LSTM direction."""

    def __init__(self, input_size, hidden_size):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden_size, input_size))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.empty(4 * hidden_size))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.hidden_size)
        with torch.no_grad():
            for weight in (self.weight_ih, self.weight_hh, self.bias):
                weight.uniform_(-bound, bound)
            # forget gate
            self.bias[self.hidden_size:2 * self.hidden_size].fill_(1.0)

    def scan(self, inputs, reverse=False):
        """
        Run the cell over inputs of shape (..., T, d_in) from zero states.

        Returns hidden states (..., T, d_h) in input order, whichever way the
        scan ran.
        """
        if inputs.shape[-1] != self.input_size:
            raise ValueError(
                f'LSTM expects input width {self.input_size}, got {inputs.shape[-1]}'
            )
        steps = inputs.shape[-2]
        batch_shape = inputs.shape[:-2]
        h = inputs.new_zeros(*batch_shape, self.hidden_size)
        c = inputs.new_zeros(*batch_shape, self.hidden_size)
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        outputs = [None] * steps
        for t in order:
            h, c = lstm_cell(inputs[..., t, :], h, c, self.weight_ih, self.weight_hh, self.bias)
            outputs[t] = h
        return torch.stack(outputs, dim=-2)
