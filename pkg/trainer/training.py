"""
Episodic meta-training of the matching network.

    L = L_class + alpha L_self_attn + beta L_uniform + gamma L_discr

One Adam step per episode. Episodes come from the seen-class training pool
only; episode i draws from the stream episode_rng(seed, i).
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from classifier.network import ModelConfig, SemanticMatchingNetwork
from classifier.scoring import classification_loss
from diffcore.params import ParamStore, forward_backward
from episodes.sampling import EpisodeSpec, episode_rng, sample_training_episode
from regularizers.penalties import RegularizerWeights, episode_discr_loss, self_attn_penalty, uniform_penalty

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
PRECISIONS = {64: torch.float64, 32: torch.float32}
LOG_COLUMNS = ('episode', 'total', 'classification', 'self_attn', 'uniform', 'discr', 'accuracy')
INIT_NOTE = 'init uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); lstm forget-gate bias 1'


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    reg: RegularizerWeights = field(default_factory=RegularizerWeights)
    learning_rate: float = 1e-4
    n_episodes: int = 1000
    C: int = 2
    K: int = 1
    N_Q: int = 20
    seed: int = 0
    precision: int = 64
    checkpoint_path: str = None
    checkpoint_every: int = 100
    log_every: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f'learning_rate must be positive, got {self.learning_rate}')
        if self.n_episodes < 1:
            raise ValueError(f'n_episodes must be at least 1, got {self.n_episodes}')
        if self.precision not in PRECISIONS:
            raise ValueError(f'precision must be 32 or 64, got {self.precision}')
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError('checkpoint_every and log_every must be positive')

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def episode_spec(self):
        return EpisodeSpec(C=self.C, K=self.K, N_Q=self.N_Q, label_pool='seen', seed=self.seed)

    def to_dict(self):
        data = asdict(self)
        data['model'] = self.model.to_dict()
        data['reg'] = asdict(self.reg)
        if self.checkpoint_path is not None:
            data['checkpoint_path'] = str(self.checkpoint_path)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['model'] = ModelConfig.from_dict(data['model'])
        data['reg'] = RegularizerWeights(**data.get('reg', {}))
        return cls(**data)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    classification: torch.Tensor
    self_attn: torch.Tensor
    uniform: torch.Tensor
    discr: torch.Tensor
    accuracy: float

    def record(self, episode):
        return {
            'episode': episode,
            'total': float(self.total),
            'classification': float(self.classification),
            'self_attn': float(self.self_attn),
            'uniform': float(self.uniform),
            'discr': float(self.discr),
            'accuracy': self.accuracy,
        }


def _check(name, value):
    if not torch.isfinite(value).all():
        raise TrainingError(f'{name} loss is not finite')
    return value


def total_loss(episode, network, embedder, reg):
    """
    Weighted objective for one episode. Both regularizers on A average over
    every encoded instance, supports and queries alike; the discriminative
    term pairs each query's current (detached) prediction with every support.
    """
    supports = [[network.encode(embedder(u.tokens)) for u in shots] for shots in episode.support]
    queries = [network.encode(embedder(u.tokens)) for u, _ in episode.queries]
    targets = torch.tensor(episode.query_targets, dtype=torch.long)
    scores = network.score(queries, supports)
    classification = _check('classification', classification_loss(scores, targets))

    support_attention = [state.A for shots in supports for state in shots]
    support_labels = [c for c, shots in enumerate(supports) for _ in shots]
    attention = support_attention + [state.A for state in queries]
    self_attn = _check('self_attn', torch.stack([self_attn_penalty(A) for A in attention]).mean())
    uniform = _check('uniform', torch.stack([uniform_penalty(A) for A in attention]).mean())

    predicted = torch.argmax(scores.detach(), dim=-1)
    discr = _check('discr', episode_discr_loss(
        [state.A for state in queries], predicted.tolist(), support_attention, support_labels, reg.kl_cap,
    ))
    total = classification + reg.alpha * self_attn + reg.beta * uniform + reg.gamma * discr
    accuracy = float((predicted == targets).double().mean())
    return LossBreakdown(_check('total', total), classification, self_attn, uniform, discr, accuracy)


class TrainLog:
    def __init__(self, records=()):
        self.records = list(records)

    def __len__(self):
        return len(self.records)

    def append(self, record):
        self.records.append(record)

    def column(self, name):
        return [record[name] for record in self.records]

    def mean_accuracy(self, last=None):
        values = self.column('accuracy')[-last:] if last else self.column('accuracy')
        return sum(values) / len(values) if values else 0.0

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator='\n')
            writer.writeheader()
            for record in self.records:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in record.items()})


def sidecar_path(checkpoint_path):
    return Path(checkpoint_path).with_suffix('.json')


def save_checkpoint(params, config, path, episodes_done):
    params.save(path, notes=[INIT_NOTE, f'episodes {episodes_done}', f'seed {config.seed}'])
    sidecar = {'config': config.to_dict(), 'episodes': episodes_done}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def load_checkpoint(path):
    """Rebuild the network saved at path from the checkpoint and its JSON sidecar."""
    path = Path(path)
    try:
        sidecar = json.loads(sidecar_path(path).read_text(encoding='utf-8'))
        config = TrainConfig.from_dict(sidecar['config'])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise TrainingError(f'cannot read checkpoint sidecar for {path}: {exc}') from exc
    network = SemanticMatchingNetwork(config.model).to(torch.float64)
    try:
        ParamStore(network).load(path)
    except (OSError, ValueError) as exc:
        raise TrainingError(f'cannot load checkpoint {path}: {exc}') from exc
    logger.info('Loaded checkpoint %s (%d episodes)', path, sidecar.get('episodes', 0))
    return network, config


def build_network(config):
    torch.manual_seed(config.seed)
    return SemanticMatchingNetwork(config.model).to(config.dtype)


def train(config, splits, embedder):
    """Returns (ParamStore over the trained network, TrainLog)."""
    network = build_network(config)
    embedder = embedder.to(config.dtype)
    if embedder.d_w != config.model.d_w:
        raise TrainingError(f'embedding width {embedder.d_w} does not match model d_w={config.model.d_w}')
    params = ParamStore(network)
    optimizer = torch.optim.Adam(params.tensors(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    spec, pool = config.episode_spec, splits.train_pool
    log = TrainLog()
    logger.info(
        'Training %d parameters for %d episodes (C=%d K=%d N_Q=%d, lr=%g, %d-bit)',
        params.numel, config.n_episodes, config.C, config.K, config.N_Q, config.learning_rate, config.precision,
    )
    for i in range(config.n_episodes):
        episode = sample_training_episode(pool, spec, episode_rng(config.seed, i))
        breakdown = None

        def loss_fn(_):
            nonlocal breakdown
            breakdown = total_loss(episode, network, embedder, config.reg)
            return breakdown.total

        loss, _ = forward_backward(loss_fn, params)
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingError(f'training diverged at episode {i + 1}: total loss {loss}')
        optimizer.step()
        record = breakdown.record(i + 1)
        log.append(record)
        logger.debug('Episode %d: %s', i + 1, record)
        if (i + 1) % config.log_every == 0:
            logger.info(
                'Episode %d/%d: loss %.4f, accuracy %.3f (last %d)',
                i + 1, config.n_episodes, loss, log.mean_accuracy(config.log_every), config.log_every,
            )
        if config.checkpoint_path and (i + 1) % config.checkpoint_every == 0:
            save_checkpoint(params, config, config.checkpoint_path, i + 1)
    if config.checkpoint_path:
        save_checkpoint(params, config, config.checkpoint_path, config.n_episodes)
    return params, log


def tiny_config(seed=0, **overrides):
    """The smallest configuration that still touches every loss component."""
    model = ModelConfig(d_w=6, d_h=8, d_a=5, r=2, perspectives=3)
    options = dict(
        model=model, reg=RegularizerWeights(alpha=1.0, beta=1.0, gamma=1.0), n_episodes=1,
        C=2, K=2, N_Q=2, seed=seed,
    )
    options.update(overrides)
    return TrainConfig(**options)
