"""
ParamStore: named view over a module's trainable tensors, with a flat vector
view for optimisation and gradient checking, and a plain binary file format.

File layout: a text header, one `name shape offset` line per parameter
(shape written as `4x8`, offset counted in values), an `end` line, then the
flat vector as little-endian float64.
"""

import logging
from pathlib import Path

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from .ops import checked

logger = logging.getLogger(__name__)

HEADER_MAGIC = '# paramstore float64-le'


class ParamStore:
    def __init__(self, module):
        self.module = module
        self._named = [(name, p) for name, p in module.named_parameters() if p.requires_grad]

    def __iter__(self):
        return iter(self._named)

    def __len__(self):
        return len(self._named)

    def __getitem__(self, name):
        for key, tensor in self._named:
            if key == name:
                return tensor
        raise KeyError(name)

    def names(self):
        return [name for name, _ in self._named]

    def tensors(self):
        return [p for _, p in self._named]

    @property
    def numel(self):
        return sum(p.numel() for p in self.tensors())

    @property
    def dtype(self):
        return self.tensors()[0].dtype

    def layout(self):
        """(name, shape, offset) triples in flat-vector order."""
        offset = 0
        rows = []
        for name, p in self._named:
            rows.append((name, tuple(p.shape), offset))
            offset += p.numel()
        return rows

    def flat(self):
        return parameters_to_vector(self.tensors()).detach().clone()

    def load_flat(self, vector):
        if vector.numel() != self.numel:
            raise ValueError(f'flat vector has {vector.numel()} values, expected {self.numel}')
        with torch.no_grad():
            vector_to_parameters(vector.to(self.dtype), self.tensors())

    def zero_grad(self):
        for p in self.tensors():
            p.grad = None

    def flat_grad(self):
        return torch.cat([
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
            for p in self.tensors()
        ]).detach()

    def save(self, path, notes=()):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [HEADER_MAGIC]
        lines += [f'# {note}' for note in notes]
        for name, shape, offset in self.layout():
            dims = 'x'.join(str(d) for d in shape) or '1'
            lines.append(f'{name} {dims} {offset}')
        lines.append('end')
        values = self.flat().to(torch.float64).cpu().numpy().astype('<f8')
        with path.open('wb') as fh:
            fh.write(('\n'.join(lines) + '\n').encode('utf-8'))
            fh.write(values.tobytes())
        logger.info('Wrote %d parameters (%d values) to %s', len(self), self.numel, path)

    def load(self, path):
        """Read values saved by `save` into this store; names and shapes must match."""
        path = Path(path)
        with path.open('rb') as fh:
            magic = fh.readline().decode('utf-8').rstrip('\n')
            if magic != HEADER_MAGIC:
                raise ValueError(f'{path} is not a parameter file')
            layout = []
            for raw in fh:
                line = raw.decode('utf-8').rstrip('\n')
                if line == 'end':
                    break
                if line.startswith('#'):
                    continue
                name, dims, offset = line.split(' ')
                shape = tuple(int(d) for d in dims.split('x'))
                layout.append((name, shape, int(offset)))
            else:
                raise ValueError(f'{path} has no end-of-header marker')
            payload = fh.read()
        expected = [(name, shape if shape else (1,), offset) for name, shape, offset in self.layout()]
        if layout != expected:
            raise ValueError(f'{path} does not match the model layout')
        values = np.frombuffer(payload, dtype='<f8')
        self.load_flat(torch.from_numpy(values.copy()))
        logger.info('Loaded %d parameters from %s', len(self), path)


def forward_backward(loss_fn, params):
    """
    Evaluate loss_fn(params) and backpropagate.

    Returns (loss, flat gradient). Gradients are also left on the parameters'
    `.grad` so an optimizer can step on them.
    """
    params.zero_grad()
    loss = checked('loss', loss_fn(params))
    if loss.requires_grad:
        loss.backward()
    return loss.item(), params.flat_grad()
