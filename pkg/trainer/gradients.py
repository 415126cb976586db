"""End-to-end gradient check of the training objective on a tiny random episode."""

import logging

from corpus.synthetic import generate_corpus
from diffcore.gradcheck import ABS_TOL, gradient_check
from diffcore.params import ParamStore
from embeddings.vectors import Embedder, Vocabulary, synthesize_vectors
from episodes.sampling import episode_rng, sample_training_episode

from .training import build_network, tiny_config, total_loss

logger = logging.getLogger(__name__)


def check_model_gradients(config=None, n_coords=64, rel_tol=1e-3, raise_on_failure=True, abs_tol=ABS_TOL):
    """
    Finite-difference check of total_loss over every parameter tensor.

    Utterances have at most 6 tokens; defaults to tiny_config(), which weighs
    every regularizer by 1.
    """
    config = config or tiny_config()
    if config.precision != 64:
        raise ValueError('gradient checks run in 64-bit precision only')
    corpus = generate_corpus(
        n_classes=config.C, per_class=config.K + config.N_Q + 1, length=(2, 6), seed=config.seed,
    )
    vocab = Vocabulary.from_utterances(corpus)
    embedder = Embedder(vocab, synthesize_vectors(vocab, config.model.d_w, seed=config.seed))
    network = build_network(config)
    episode = sample_training_episode(corpus, config.episode_spec, episode_rng(config.seed, 0))
    report = gradient_check(
        lambda _: total_loss(episode, network, embedder, config.reg).total,
        ParamStore(network),
        rel_tol=rel_tol,
        abs_tol=abs_tol,
        n_coords=n_coords,
        seed=config.seed,
        raise_on_failure=raise_on_failure,
    )
    logger.info(
        'Model gradient check %s: %d coordinates, max relative error %.3e',
        'passed' if report.passed else 'failed', len(report.checks), report.max_rel_error,
    )
    return report
