import tempfile
from pathlib import Path
from unittest import mock

import torch
from django.test import SimpleTestCase, tag

from classifier.network import ModelConfig
from classifier.scoring import classification_loss, score_class
from corpus.splits import SplitSpec, build_splits
from corpus.synthetic import generate_corpus, synthetic_novel_labels
from diffcore.params import ParamStore
from embeddings.vectors import Embedder, Vocabulary, synthesize_vectors
from episodes.sampling import Episode, episode_rng, sample_training_episode
from regularizers.penalties import RegularizerWeights, discr_penalty, self_attn_penalty, uniform_penalty

from .gradients import check_model_gradients
from .training import (
    TrainConfig, TrainingError, build_network, load_checkpoint, tiny_config, total_loss, train,
)


def synthetic_setup(n_classes=4, per_class=12, d_w=6, K=1, seed=0):
    corpus = generate_corpus(n_classes=n_classes, per_class=per_class, seed=seed)
    splits = build_splits(corpus, SplitSpec(novel_labels=synthetic_novel_labels(n_classes, 1), shots_K=K, seed=seed))
    vocab = Vocabulary.from_utterances(corpus)
    return splits, Embedder(vocab, synthesize_vectors(vocab, d_w, seed=seed))


class TotalLossTest(SimpleTestCase):
    """Test the combined episode objective"""

    def setUp(self):
        self.splits, self.embedder = synthetic_setup()
        self.config = tiny_config(N_Q=4, K=1)
        self.network = build_network(self.config)
        self.episode = sample_training_episode(self.splits.train_pool, self.config.episode_spec, episode_rng(0, 0))

    def test_decomposition(self):
        """Test total = L_class + alpha L_self + beta L_uniform + gamma L_discr"""
        reg = RegularizerWeights(alpha=0.3, beta=0.2, gamma=0.1)
        parts = total_loss(self.episode, self.network, self.embedder, reg)
        expected = parts.classification + 0.3 * parts.self_attn + 0.2 * parts.uniform + 0.1 * parts.discr
        self.assertAlmostEqual(float(parts.total), float(expected), places=10)

    def test_no_regularizers(self):
        """Test alpha = beta = gamma = 0 leaves exactly the classification loss"""
        parts = total_loss(self.episode, self.network, self.embedder, RegularizerWeights())
        self.assertEqual(float(parts.total), float(parts.classification))

    def test_uniform_attention(self):
        """Test zero W_s2 gives uniform attention and a zero uniform penalty"""
        with torch.no_grad():
            self.network.encoder.w_s2.zero_()
        parts = total_loss(self.episode, self.network, self.embedder, RegularizerWeights(beta=1.0))
        self.assertAlmostEqual(float(parts.uniform), 0.0, places=10)

    def test_single_query_oracle(self):
        """Test a 1-query, 1-support-per-class episode against separately computed terms"""
        pool = self.splits.train_pool
        a = [u for u in pool if u.label == 'intent00']
        b = [u for u in pool if u.label == 'intent01']
        episode = Episode(('intent00', 'intent01'), ((a[0],), (b[0],)), ((a[1], 0),))
        reg = RegularizerWeights(alpha=1.0, beta=1.0, gamma=1.0)
        parts = total_loss(episode, self.network, self.embedder, reg)

        encode = self.network.encode
        s0, s1, q = (encode(self.embedder(u.tokens)) for u in (a[0], b[0], a[1]))
        scores = torch.stack([score_class(q, [s0], self.network)[0], score_class(q, [s1], self.network)[0]])
        classification = classification_loss(scores, 0)
        self_attn = (self_attn_penalty(s0.A) + self_attn_penalty(s1.A) + self_attn_penalty(q.A)) / 3
        uniform = (uniform_penalty(s0.A) + uniform_penalty(s1.A) + uniform_penalty(q.A)) / 3
        predicted = int(torch.argmax(scores))
        discr = (discr_penalty(q.A, s0.A, predicted == 0) + discr_penalty(q.A, s1.A, predicted == 1)) / 2
        self.assertAlmostEqual(float(parts.total), float(classification + self_attn + uniform + discr), places=10)


class TrainTest(SimpleTestCase):
    """Test the training loop"""

    def setUp(self):
        self.splits, self.embedder = synthetic_setup()

    def test_zero_episodes_rejected(self):
        """Test n_episodes = 0 fails the precondition"""
        with self.assertRaises(ValueError):
            tiny_config(n_episodes=0)

    def test_deterministic(self):
        """Test two runs with the same config give identical parameters and logs"""
        config = tiny_config(n_episodes=3, N_Q=4, K=1)
        first_params, first_log = train(config, self.splits, self.embedder)
        second_params, second_log = train(config, self.splits, self.embedder)
        self.assertTrue(torch.equal(first_params.flat(), second_params.flat()))
        self.assertEqual(first_log.records, second_log.records)

    def test_log_records(self):
        """Test one finite, decomposable record per episode"""
        config = tiny_config(n_episodes=3, N_Q=4, K=1)
        _, log = train(config, self.splits, self.embedder)
        self.assertEqual(log.column('episode'), [1, 2, 3])
        for record in log.records:
            expected = record['classification'] + record['self_attn'] + record['uniform'] + record['discr']
            self.assertAlmostEqual(record['total'], expected, delta=1e-6)

    def test_head_wise_only_still_trains(self):
        """Test a single matcher without regularizers updates the parameters"""
        model = ModelConfig(d_w=6, d_h=8, d_a=5, r=2, perspectives=3, matchers=('head_wise',))
        config = TrainConfig(model=model, n_episodes=3, N_Q=4, learning_rate=1e-2)
        before = ParamStore(build_network(config)).flat()
        params, _ = train(config, self.splits, self.embedder)
        self.assertFalse(torch.equal(before, params.flat()))

    def test_width_mismatch(self):
        """Test an embedder of the wrong width is refused"""
        _, wide = synthetic_setup(d_w=9)
        with self.assertRaises(TrainingError):
            train(tiny_config(N_Q=4, K=1), self.splits, wide)

    def test_checkpoint_round_trip(self):
        """Test the checkpoint, sidecar and CSV log are written and reload to the same network"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.params'
            config = tiny_config(n_episodes=2, N_Q=4, K=1, checkpoint_path=str(path), checkpoint_every=1)
            params, log = train(config, self.splits, self.embedder)
            network, loaded = load_checkpoint(path)
            self.assertEqual(loaded, config)
            self.assertTrue(torch.equal(ParamStore(network).flat(), params.flat()))
            log.write_csv(Path(tmp) / 'train_log.csv')
            lines = (Path(tmp) / 'train_log.csv').read_text().splitlines()
            self.assertEqual(lines[0], 'episode,total,classification,self_attn,uniform,discr,accuracy')
            self.assertEqual(len(lines), 3)

    def test_missing_checkpoint(self):
        """Test loading a checkpoint without its sidecar fails cleanly"""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(TrainingError):
                load_checkpoint(Path(tmp) / 'absent.params')

    def test_config_round_trip(self):
        """Test TrainConfig survives to_dict and from_dict"""
        config = tiny_config(learning_rate=3e-4, precision=32)
        self.assertEqual(TrainConfig.from_dict(config.to_dict()), config)


class _DoubledMax(torch.autograd.Function):
    """Max reduction whose backward pass is off by a factor of two."""

    @staticmethod
    def forward(ctx, x, dim):
        values, index = x.max(dim=dim)
        ctx.save_for_backward(index)
        ctx.dim, ctx.shape = dim, x.shape
        return values

    @staticmethod
    def backward(ctx, grad):
        (index,) = ctx.saved_tensors
        out = torch.zeros(ctx.shape, dtype=grad.dtype)
        return out.scatter(ctx.dim, index.unsqueeze(ctx.dim), 2 * grad.unsqueeze(ctx.dim)), None


class ModelGradientTest(SimpleTestCase):
    """Test the end-to-end gradient check"""

    def test_tiny_config_passes(self):
        """Test every sampled coordinate passes with all regularizers weighted 1"""
        report = check_model_gradients()
        self.assertTrue(report.passed)
        self.assertGreaterEqual(len(report.checks), 64)
        self.assertLess(report.max_rel_error, 1e-3)

    def test_word_level_passes(self):
        """Test the word-level variant also passes"""
        model = ModelConfig(d_w=6, d_h=8, d_a=5, r=2, perspectives=3, match_level='word')
        self.assertTrue(check_model_gradients(tiny_config(model=model), n_coords=32).passed)

    def test_broken_matcher_gradient_fails(self):
        """Test a wrong max-pooling backward pass is caught"""
        with mock.patch('matching.perspectives.max_reduce', lambda x, dim: _DoubledMax.apply(x, dim)):
            report = check_model_gradients(raise_on_failure=False)
        self.assertFalse(report.passed)

    def test_single_precision_refused(self):
        """Test 32-bit configurations are refused"""
        with self.assertRaises(ValueError):
            check_model_gradients(tiny_config(precision=32))


@tag('slow')
class SyntheticLearnabilityTest(SimpleTestCase):
    """Test the network learns the keyword corpus"""

    def test_two_way_one_shot(self):
        """Test 300 two-way one-shot episodes reach 95% query accuracy over the last 50"""
        splits, embedder = synthetic_setup(n_classes=8, per_class=40, d_w=16)
        model = ModelConfig(d_w=16, d_h=16, d_a=20, r=4, perspectives=3)
        config = TrainConfig(
            model=model, reg=RegularizerWeights(alpha=1e-4, beta=1e-5, gamma=0.01),
            learning_rate=1e-3, n_episodes=300, C=2, K=1, N_Q=20,
        )
        _, log = train(config, splits, embedder)
        self.assertGreaterEqual(log.mean_accuracy(last=50), 0.95)
