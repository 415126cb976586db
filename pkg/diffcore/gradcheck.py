"""Central-difference verification of analytic gradients."""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .params import forward_backward

logger = logging.getLogger(__name__)

ABS_TOL = 1e-10


@dataclass(frozen=True)
class CoordinateCheck:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def abs_error(self):
        return abs(self.analytic - self.numeric)

    @property
    def rel_error(self):
        a, n = self.analytic, self.numeric
        return abs(a - n) / max(abs(a), abs(n), 1e-8)


@dataclass
class GradientCheckReport:
    """
    A coordinate fails when its relative error exceeds rel_tol and its
    absolute error exceeds abs_tol, the round-off floor of a central
    difference in float64.
    """

    rel_tol: float
    epsilon: float
    abs_tol: float = ABS_TOL
    checks: list = field(default_factory=list)

    @property
    def failures(self):
        return [c for c in self.checks if c.rel_error > self.rel_tol and c.abs_error > self.abs_tol]

    @property
    def below_noise_floor(self):
        """Coordinates over rel_tol whose absolute error is within abs_tol."""
        return [c for c in self.checks if c.rel_error > self.rel_tol and c.abs_error <= self.abs_tol]

    @property
    def passed(self):
        return not self.failures

    @property
    def max_rel_error(self):
        return max((c.rel_error for c in self.checks), default=0.0)

    def per_parameter(self):
        """Max relative error per parameter name."""
        worst = {}
        for c in self.checks:
            worst[c.name] = max(worst.get(c.name, 0.0), c.rel_error)
        return worst

    def to_dict(self):
        return {
            'passed': self.passed,
            'rel_tol': self.rel_tol,
            'abs_tol': self.abs_tol,
            'epsilon': self.epsilon,
            'coordinates': len(self.checks),
            'max_rel_error': self.max_rel_error,
            'below_noise_floor': [
                {'name': c.name, 'index': c.index, 'analytic': c.analytic, 'numeric': c.numeric}
                for c in self.below_noise_floor
            ],
            'per_parameter': self.per_parameter(),
            'failures': [
                {'name': c.name, 'index': c.index, 'analytic': c.analytic, 'numeric': c.numeric}
                for c in self.failures
            ],
        }


class GradientCheckError(AssertionError):
    def __init__(self, report):
        first = report.failures[0]
        super().__init__(
            f'{len(report.failures)} coordinate(s) over rel_tol {report.rel_tol}; '
            f'first: {first.name}[{first.index}] analytic={first.analytic:.6e} '
            f'numeric={first.numeric:.6e}'
        )
        self.report = report


def _pick_coordinates(params, n_coords, rng):
    """One coordinate from every tensor, then random extras up to n_coords."""
    layout = params.layout()
    total = params.numel
    if total <= n_coords:
        return list(range(total))
    picked = set()
    for name, shape, offset in layout:
        size = int(np.prod(shape)) if shape else 1
        picked.add(offset + int(rng.integers(size)))
    remaining = np.setdiff1d(np.arange(total), np.fromiter(picked, dtype=np.int64))
    extra = max(n_coords - len(picked), 0)
    if extra:
        picked.update(int(i) for i in rng.choice(remaining, size=extra, replace=False))
    return sorted(picked)


def _locate(layout, flat_index):
    for name, shape, offset in reversed(layout):
        if flat_index >= offset:
            return name, flat_index - offset
    raise IndexError(flat_index)


def gradient_check(loss_fn, params, epsilon=1e-5, rel_tol=1e-3, n_coords=64, seed=0,
                   raise_on_failure=True, abs_tol=ABS_TOL):
    """
    Compare analytic gradients of loss_fn at params with central differences
    (f(p + eps e) - f(p - eps e)) / 2 eps on a sampled coordinate subset.
    """
    if params.dtype != torch.float64:
        raise ValueError('gradient_check needs float64 parameters')
    _, analytic = forward_backward(loss_fn, params)
    params.zero_grad()
    base = params.flat()
    layout = params.layout()
    rng = np.random.default_rng(seed)
    report = GradientCheckReport(rel_tol=rel_tol, epsilon=epsilon, abs_tol=abs_tol)
    try:
        with torch.no_grad():
            for i in _pick_coordinates(params, n_coords, rng):
                shifted = base.clone()
                shifted[i] += epsilon
                params.load_flat(shifted)
                f_plus = float(loss_fn(params))
                shifted[i] -= 2 * epsilon
                params.load_flat(shifted)
                f_minus = float(loss_fn(params))
                name, index = _locate(layout, i)
                report.checks.append(CoordinateCheck(
                    name=name,
                    index=index,
                    analytic=float(analytic[i]),
                    numeric=(f_plus - f_minus) / (2 * epsilon),
                ))
    finally:
        params.load_flat(base)
    logger.info(
        'Gradient check: %d coordinates, max relative error %.3e',
        len(report.checks), report.max_rel_error,
    )
    if raise_on_failure and not report.passed:
        raise GradientCheckError(report)
    return report
