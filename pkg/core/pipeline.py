"""
Glue between a RunConfig and the modules: corpus, splits, embeddings,
model/training configuration and the two evaluation protocols.
"""

import logging

from django.core.exceptions import ImproperlyConfigured

from classifier.network import IntentMatcher, ModelConfig
from corpus.parsing import parse_dataset
from corpus.splits import SplitSpec, build_splits, read_manifest, write_manifest
from corpus.synthetic import generate_corpus, synthetic_novel_labels
from embeddings.vectors import Embedder, Vocabulary, load_vectors, synthesize_vectors
from episodes.sampling import EpisodeSpec, nonepisodic_tasks
from evaluation.metrics import MetricsReport, evaluate_episodic, evaluate_nonepisodic
from regularizers.penalties import RegularizerWeights
from trainer.training import TrainConfig, load_checkpoint

logger = logging.getLogger(__name__)

MANIFEST = 'splits.manifest'
CHECKPOINT = 'model.params'
TRAIN_LOG = 'train_log.csv'


def load_corpus(run):
    run.check_paths()
    if run.is_synthetic_data:
        return generate_corpus(seed=run['data.seed'])
    return parse_dataset(run['data.path'], format=run['data.format'])


def split_spec(run):
    novel = frozenset(run['data.novel_labels'])
    if not novel:
        if not run.is_synthetic_data:
            raise ImproperlyConfigured('data.novel_labels is required for a corpus file')
        novel = synthetic_novel_labels()
    return SplitSpec(
        novel_labels=novel,
        shots_K=run['episode.K'],
        joint_fraction=run['data.joint_fraction'],
        seed=run['data.seed'],
    )


def prepare_splits(run, corpus):
    splits = build_splits(corpus, split_spec(run))
    write_manifest(splits, run.output_dir / MANIFEST)
    return splits


def load_splits(run, corpus):
    """Splits from the output directory's manifest, or freshly built when there is none."""
    path = run.output_dir / MANIFEST
    if path.is_file():
        logger.info('Reading split manifest %s', path)
        return read_manifest(path, corpus)
    return build_splits(corpus, split_spec(run))


def build_embedder(run, corpus):
    vocab = Vocabulary.from_utterances(corpus)
    width = run.synthetic_width
    if width is not None:
        table = synthesize_vectors(vocab, width, seed=run['data.seed'])
    else:
        table = load_vectors(run['embeddings.source'], vocab)
    return Embedder(vocab, table)


def model_config(run, d_w):
    return ModelConfig(
        d_w=d_w,
        d_h=run['model.d_h'],
        d_a=run['model.d_a'],
        r=run['model.r'],
        perspectives=run['model.perspectives'],
        matchers=tuple(run['model.matchers']),
        match_level=run['model.match_level'],
    )


def reg_weights(run):
    return RegularizerWeights(
        alpha=run['reg.alpha'], beta=run['reg.beta'], gamma=run['reg.gamma'], kl_cap=run['reg.kl_cap'],
    )


def train_config(run, d_w, checkpoint_path=None):
    return TrainConfig(
        model=model_config(run, d_w),
        reg=reg_weights(run),
        learning_rate=run['train.learning_rate'],
        n_episodes=run['episode.count'],
        C=run['episode.C'],
        K=run['episode.K'],
        N_Q=run['episode.NQ'],
        seed=run['train.seed'],
        precision=run['train.precision'],
        checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
        checkpoint_every=run['train.checkpoint_every'],
        log_every=run['train.log_every'],
    )


def load_matcher(checkpoint_path, embedder):
    network, config = load_checkpoint(checkpoint_path)
    if config.model.d_w != embedder.d_w:
        raise ImproperlyConfigured(
            f'checkpoint expects d_w={config.model.d_w} but embeddings have d_w={embedder.d_w}'
        )
    network.eval()
    return IntentMatcher(network, embedder)


def episodic_report(matcher, splits, run):
    """S-J over joint-space episodes and S-N over novel-space episodes."""
    n_episodes, seeds, threads = run['eval.episodes'], run['eval.seeds'], run['eval.threads']
    accuracies = {}
    for pool in ('joint', 'novel'):
        spec = EpisodeSpec(C=run['episode.C'], K=splits.shots_K, N_Q=run['episode.NQ'], label_pool=pool)
        accuracies[pool] = evaluate_episodic(matcher, splits, spec, n_episodes, seeds, threads)
    return MetricsReport(
        mode='episodic', shots=splits.shots_K, s_j=accuracies['joint'], s_n=accuracies['novel'],
        n_episodes=n_episodes, seeds=tuple(seeds),
    )


def nonepisodic_report(matcher, splits, run, spaces=('joint', 'novel')):
    scores, confusion = {}, {}
    for space in spaces:
        result = evaluate_nonepisodic(matcher, nonepisodic_tasks(splits, space), threads=run['eval.threads'])
        scores[space] = result.accuracy
        confusion[space] = result.confusion_dict()
    return MetricsReport(
        mode='nonepisodic', shots=splits.shots_K, s_j=scores.get('joint'), s_n=scores.get('novel'),
        confusion=confusion,
    )
