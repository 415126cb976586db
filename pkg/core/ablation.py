"""
Matcher and regularizer ablation grids.

Every variant trains on the same splits for each seed in eval.seeds and is
scored by non-episodic and episodic h-acc, averaged over those seeds.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from classifier.network import IntentMatcher
from matching.perspectives import MATCHERS
from trainer.training import train

from .pipeline import episodic_report, nonepisodic_report, train_config

logger = logging.getLogger(__name__)

MATCHER_GRID = tuple((name, {'model.matchers': name}) for name in MATCHERS) + (('full', {}),)
REGULARIZER_GRID = (
    ('word_match', {'model.match_level': 'word'}),
    ('no_discr', {'reg.gamma': 0}),
    ('no_self_attn', {'reg.alpha': 0}),
    ('no_uniform', {'reg.beta': 0}),
    ('full', {}),
)


@dataclass(frozen=True)
class VariantResult:
    variant: str
    nonepisodic_h_acc: float
    episodic_h_acc: float
    seeds: tuple

    def to_dict(self):
        return {
            'variant': self.variant,
            'nonepisodic_h_acc': round(self.nonepisodic_h_acc, 2),
            'episodic_h_acc': round(self.episodic_h_acc, 2),
            'seeds': list(self.seeds),
        }


def run_variant(run, splits, embedder, name, overrides):
    seeds = run['eval.seeds']
    nonepisodic, episodic = [], []
    for seed in seeds:
        variant = run.with_values({**overrides, 'train.seed': seed, 'eval.seeds': seed})
        params, _ = train(train_config(variant, embedder.d_w), splits, embedder)
        matcher = IntentMatcher(params.module, embedder)
        nonepisodic.append(nonepisodic_report(matcher, splits, variant).h_acc)
        episodic.append(episodic_report(matcher, splits, variant).h_acc)
    result = VariantResult(name, float(np.mean(nonepisodic)), float(np.mean(episodic)), tuple(seeds))
    logger.info(
        'Variant %s: non-episodic h-acc %.2f, episodic h-acc %.2f', name, result.nonepisodic_h_acc,
        result.episodic_h_acc,
    )
    return result


def run_ablation(run, splits, embedder):
    """{'matchers': [...], 'regularizers': [...]}; the shared full model is trained once."""
    cache = {}
    grids = {}
    for grid_name, grid in (('matchers', MATCHER_GRID), ('regularizers', REGULARIZER_GRID)):
        rows = []
        for name, overrides in grid:
            if name not in cache:
                cache[name] = run_variant(run, splits, embedder, name, overrides)
            rows.append(cache[name])
        grids[grid_name] = rows
    return grids


def ablation_table(grids):
    lines = []
    for grid_name, rows in grids.items():
        lines.append(f'{grid_name:<14} {"non-episodic":>13} {"episodic":>10}')
        lines += [f'{r.variant:<14} {r.nonepisodic_h_acc:>13.2f} {r.episodic_h_acc:>10.2f}' for r in rows]
        lines.append('')
    return '\n'.join(lines)


def write_ablation(grids, directory):
    data = {grid_name: [r.to_dict() for r in rows] for grid_name, rows in grids.items()}
    (directory / 'ablation.json').write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    (directory / 'ablation.txt').write_text(ablation_table(grids), encoding='utf-8')
