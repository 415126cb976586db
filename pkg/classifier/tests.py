import math

import numpy as np
import torch
from django.test import SimpleTestCase

from corpus.parsing import tokenize
from diffcore.gradcheck import gradient_check
from diffcore.params import ParamStore
from embeddings.vectors import Embedder, Vocabulary, synthesize_vectors

from .network import IntentMatcher, ModelConfig, SemanticMatchingNetwork
from .scoring import (
    ClassScore, ClassifierParams, class_scores, classification_loss, classify_episode, match_score,
    score_class,
)

SENTENCES = [
    'play some jazz', 'play the next song please', 'book a table for two', 'reserve a table tonight',
    'what is the weather', 'will it rain tomorrow in paris',
]


def make_network(match_level='head', seed=0, **overrides):
    torch.manual_seed(seed)
    options = dict(d_w=6, d_h=4, d_a=5, r=2, perspectives=3, match_level=match_level)
    options.update(overrides)
    return SemanticMatchingNetwork(ModelConfig(**options)).double()


def make_embedder(d_w=6):
    vocab = Vocabulary(token for sentence in SENTENCES for token in tokenize(sentence))
    return Embedder(vocab, synthesize_vectors(vocab, d_w, seed=1))


def encoded(network, embedder, sentences):
    return [network.encode(embedder(tokenize(s))) for s in sentences]


def make_classifier(d_h=3, seed=0):
    torch.manual_seed(seed)
    return ClassifierParams(d_h).double()


class MatchScoreTest(SimpleTestCase):
    """Test the shared W9/W10 scorer"""

    def test_numpy_oracle(self):
        """Test the score equals w9 . relu(W10 [s; q])"""
        params = make_classifier()
        s, q = torch.randn(6, dtype=torch.float64), torch.randn(6, dtype=torch.float64)
        w9, w10 = params.w9.detach().numpy(), params.w10.detach().numpy()
        expected = w9 @ np.maximum(w10 @ np.concatenate([s.numpy(), q.numpy()]), 0.0)
        self.assertAlmostEqual(float(match_score(s, q, params)), float(expected), places=12)

    def test_broadcasts_query(self):
        """Test one query row is scored against every support row"""
        params = make_classifier()
        s, q = torch.randn(4, 6, dtype=torch.float64), torch.randn(6, dtype=torch.float64)
        scores = match_score(s, q, params)
        self.assertEqual(tuple(scores.shape), (4,))
        self.assertAlmostEqual(float(scores[2]), float(match_score(s[2], q, params)), places=12)


class ClassScoresTest(SimpleTestCase):
    """Test attentive instance aggregation"""

    def test_single_shot_is_identity(self):
        """Test K=1 gives weight 1 and the support itself as prototype"""
        params = make_classifier()
        s_hats, q_hats = torch.randn(1, 6, dtype=torch.float64), torch.randn(1, 6, dtype=torch.float64)
        score, prototype, q_class, weights = class_scores(s_hats, q_hats, params)
        self.assertAlmostEqual(float(weights[0]), 1.0, places=12)
        self.assertTrue(torch.allclose(prototype, s_hats[0]))
        self.assertTrue(torch.allclose(q_class, q_hats[0]))
        self.assertAlmostEqual(float(score), float(match_score(s_hats[0], q_hats[0], params)), places=12)

    def test_prototype_is_convex_combination(self):
        """Test the prototype is the weight-averaged supports with weights summing to 1"""
        params = make_classifier(seed=3)
        s_hats, q_hats = torch.randn(5, 6, dtype=torch.float64), torch.randn(5, 6, dtype=torch.float64)
        _, prototype, q_class, weights = class_scores(s_hats, q_hats, params)
        self.assertAlmostEqual(float(weights.sum()), 1.0, places=12)
        self.assertTrue(bool((weights >= 0).all()))
        self.assertTrue(torch.allclose(prototype, weights @ s_hats))
        self.assertTrue(torch.allclose(q_class, q_hats.mean(dim=0)))

    def test_weights_follow_instance_scores(self):
        """Test instance weights are the softmax of per-support scores against the pooled query"""
        params = make_classifier(seed=4)
        s_hats, q_hats = torch.randn(3, 6, dtype=torch.float64), torch.randn(3, 6, dtype=torch.float64)
        _, _, _, weights = class_scores(s_hats, q_hats, params)
        alpha = np.array([float(match_score(s, q_hats.mean(dim=0), params)) for s in s_hats])
        expected = np.exp(alpha - alpha.max()) / np.exp(alpha - alpha.max()).sum()
        np.testing.assert_allclose(weights.detach().numpy(), expected, atol=1e-12)

    def test_batched_leading_dims(self):
        """Test a (n_q, K) grid scores each row independently"""
        params = make_classifier(seed=5)
        s_hats, q_hats = torch.randn(2, 3, 6, dtype=torch.float64), torch.randn(2, 3, 6, dtype=torch.float64)
        scores = class_scores(s_hats, q_hats, params)[0]
        self.assertEqual(tuple(scores.shape), (2,))
        self.assertAlmostEqual(float(scores[1]), float(class_scores(s_hats[1], q_hats[1], params)[0]), places=12)


class ClassScoreTest(SimpleTestCase):
    """Test episode score bundles"""

    def test_softmax_oracle(self):
        """Test probabilities for scores (1, 2, 3)"""
        probabilities = ClassScore(torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)).probabilities
        expected = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
        np.testing.assert_allclose(probabilities.numpy(), expected, atol=1e-12)

    def test_ties_pick_lowest_index(self):
        """Test equal scores predict the first class"""
        self.assertEqual(ClassScore(torch.tensor([0.5, 0.5, 0.1])).predicted, 0)
        self.assertEqual(ClassScore(torch.tensor([0.1, 0.5, 0.5])).predicted, 1)


class ClassificationLossTest(SimpleTestCase):
    """Test softmax cross-entropy"""

    def test_confident_correct(self):
        """Test a dominant true score gives near-zero loss"""
        loss = classification_loss(torch.tensor([50.0, 0.0], dtype=torch.float64), 0)
        self.assertAlmostEqual(float(loss), 0.0, places=12)

    def test_equal_scores(self):
        """Test two equal scores give ln 2"""
        loss = classification_loss(torch.zeros(2, dtype=torch.float64), 1)
        self.assertAlmostEqual(float(loss), math.log(2), places=12)

    def test_known_probability(self):
        """Test probability 0.7 on the true class gives -ln 0.7"""
        scores = torch.tensor([math.log(0.7), math.log(0.3)], dtype=torch.float64)
        self.assertAlmostEqual(float(classification_loss(scores, 0)), 0.3567, places=4)

    def test_shift_invariance(self):
        """Test adding a constant to every score leaves the loss unchanged"""
        scores = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
        self.assertAlmostEqual(
            float(classification_loss(scores, 2)), float(classification_loss(scores + 7.5, 2)), places=12,
        )

    def test_batch_mean(self):
        """Test a (n, C) batch averages the per-row losses"""
        scores = torch.tensor([[0.0, 0.0], [50.0, 0.0]], dtype=torch.float64)
        self.assertAlmostEqual(float(classification_loss(scores, [0, 0])), math.log(2) / 2, places=12)

    def test_index_out_of_range(self):
        """Test a target beyond the class count is rejected"""
        with self.assertRaises(IndexError):
            classification_loss(torch.zeros(2), 2)


class NetworkScoreTest(SimpleTestCase):
    """Test the assembled network"""

    def setUp(self):
        self.network = make_network()
        self.embedder = make_embedder().to(torch.float64)
        self.queries = encoded(self.network, self.embedder, SENTENCES[4:])
        self.classes = [
            encoded(self.network, self.embedder, SENTENCES[:2]),
            encoded(self.network, self.embedder, SENTENCES[2:4]),
        ]

    def test_score_shape(self):
        """Test scores are (n_q, C)"""
        self.assertEqual(tuple(self.network.score(self.queries, self.classes).shape), (2, 2))

    def test_batched_equals_single(self):
        """Test the batched grid agrees with per-query, per-class scoring"""
        scores = self.network.score(self.queries, self.classes)
        for i, query in enumerate(self.queries):
            for c, supports in enumerate(self.classes):
                single, _, _ = score_class(query, supports, self.network)
                self.assertAlmostEqual(float(scores[i, c]), float(single), places=10)

    def test_zero_output_weights_give_uniform(self):
        """Test W9 = 0 makes every class equally likely"""
        with torch.no_grad():
            self.network.classifier.w9.zero_()
        result = classify_episode(self.queries[0], self.classes, self.network)
        np.testing.assert_allclose(result.probabilities.detach().numpy(), [0.5, 0.5], atol=1e-12)

    def test_identical_classes_are_tied(self):
        """Test two classes with the same supports split probability evenly"""
        result = classify_episode(self.queries[0], [self.classes[0], self.classes[0]], self.network)
        np.testing.assert_allclose(result.probabilities.detach().numpy(), [0.5, 0.5], atol=1e-12)
        self.assertEqual(result.predicted, 0)

    def test_single_class_episode_rejected(self):
        """Test an episode needs two classes"""
        with self.assertRaises(ValueError):
            classify_episode(self.queries[0], self.classes[:1], self.network)

    def test_empty_class_rejected(self):
        """Test a class without supports is rejected"""
        with self.assertRaises(ValueError):
            score_class(self.queries[0], [], self.network)

    def test_word_level(self):
        """Test word-level matching scores the same grid"""
        network = make_network(match_level='word')
        queries = encoded(network, self.embedder, SENTENCES[4:])
        classes = [encoded(network, self.embedder, SENTENCES[:2]), encoded(network, self.embedder, SENTENCES[2:4])]
        scores = network.score(queries, classes)
        self.assertEqual(tuple(scores.shape), (2, 2))
        single, _, _ = score_class(queries[1], classes[1], network)
        self.assertAlmostEqual(float(scores[1, 1]), float(single), places=10)

    def test_matcher_subset_width(self):
        """Test the aggregator input width follows the enabled matchers"""
        network = make_network(matchers=('max_pool', 'head_wise'))
        self.assertEqual(network.config.matchers, ('head_wise', 'max_pool'))
        self.assertEqual(network.aggregator.forward_lstm.weight_ih.shape[1], 6)


class ModelConfigTest(SimpleTestCase):
    """Test model configuration"""

    def test_dict_round_trip(self):
        """Test to_dict and from_dict agree"""
        config = ModelConfig(d_w=10, matchers=('attentive',), match_level='word')
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)

    def test_unknown_level(self):
        """Test an unknown match level is rejected"""
        with self.assertRaises(ValueError):
            ModelConfig(d_w=10, match_level='sentence')

    def test_no_matchers(self):
        """Test an empty matcher set is rejected"""
        with self.assertRaises(ValueError):
            ModelConfig(d_w=10, matchers=())


class IntentMatcherTest(SimpleTestCase):
    """Test token-level prediction"""

    def setUp(self):
        self.matcher = IntentMatcher(make_network(), make_embedder(), chunk_size=1)
        self.classes = [[tokenize(s) for s in SENTENCES[:2]], [tokenize(s) for s in SENTENCES[2:4]]]

    def test_single_class_predicts_zero(self):
        """Test a one-class space predicts index 0 for every query"""
        self.assertEqual(self.matcher.predict([tokenize('hello there')] * 3, self.classes[:1]), [0, 0, 0])

    def test_matches_argmax(self):
        """Test predictions equal the argmax of network scores, across chunks"""
        queries = [tokenize(s) for s in SENTENCES]
        predictions = self.matcher.predict(queries, self.classes)
        network, embedder = self.matcher.network, self.matcher.embedder
        scores = network.score(
            encoded(network, embedder, SENTENCES),
            [encoded(network, embedder, SENTENCES[:2]), encoded(network, embedder, SENTENCES[2:4])],
        )
        self.assertEqual(predictions, torch.argmax(scores, dim=-1).tolist())

    def test_unknown_tokens(self):
        """Test out-of-vocabulary queries still get a prediction"""
        self.assertIn(self.matcher.predict([('zzz', 'qqq')], self.classes)[0], (0, 1))


class NetworkGradientTest(SimpleTestCase):
    """Test end-to-end gradients of the classification loss"""

    def test_classification_loss_gradient(self):
        """Test the loss through encoder, matching, aggregation and scorer passes the check"""
        network = make_network(seed=7)
        embedder = make_embedder().to(torch.float64)
        inputs = [embedder(tokenize(s)) for s in SENTENCES]

        def loss(_):
            states = [network.encode(X) for X in inputs]
            scores = network.score(states[4:], [states[:2], states[2:4]])
            return classification_loss(scores, [0, 1])

        self.assertTrue(gradient_check(loss, ParamStore(network), n_coords=48, seed=2).passed)
