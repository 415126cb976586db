import math

import numpy as np
import torch
from django.test import SimpleTestCase
from torch import nn

from diffcore.gradcheck import gradient_check
from diffcore.params import ParamStore

from .penalties import (
    RegularizerWeights, discr_penalty, episode_discr_loss, self_attn_penalty, uniform_penalty,
    word_distribution,
)


def tensor(rows):
    return torch.tensor(rows, dtype=torch.float64)


def random_stochastic(r, T, seed):
    generator = torch.Generator().manual_seed(seed)
    return torch.softmax(torch.randn(r, T, generator=generator, dtype=torch.float64), dim=-1)


class SelfAttnPenaltyTest(SimpleTestCase):
    """Test the Frobenius self-attention penalty"""

    def test_orthonormal_rows(self):
        """Test one-hot rows on disjoint words give 0"""
        self.assertAlmostEqual(float(self_attn_penalty(tensor([[1, 0, 0], [0, 0, 1]]))), 0.0, delta=1e-9)

    def test_duplicated_rows(self):
        """Test identical one-hot rows give 2"""
        self.assertAlmostEqual(float(self_attn_penalty(tensor([[0, 1], [0, 1]]))), 2.0, delta=1e-9)

    def test_entrywise_oracle(self):
        """Test r=3, T=4 against a brute-force sum"""
        A = random_stochastic(3, 4, seed=1)
        a = A.numpy()
        expected = sum(
            (sum(a[i, t] * a[j, t] for t in range(4)) - (1.0 if i == j else 0.0)) ** 2
            for i in range(3) for j in range(3)
        )
        self.assertAlmostEqual(float(self_attn_penalty(A)), expected, places=12)


class WordDistributionTest(SimpleTestCase):
    """Test the per-word head aggregate"""

    def test_uniform(self):
        """Test uniform attention gives a uniform distribution"""
        p = word_distribution(torch.full((3, 5), 0.2, dtype=torch.float64))
        self.assertTrue(torch.allclose(p, torch.full((5,), 0.2, dtype=torch.float64)))

    def test_single_head(self):
        """Test r=1 returns the attention row"""
        A = random_stochastic(1, 4, seed=2)
        self.assertTrue(torch.equal(word_distribution(A), A[0]))

    def test_averaging(self):
        """Test rows (1,0) and (0,1) average to (0.5, 0.5)"""
        self.assertEqual(word_distribution(tensor([[1, 0], [0, 1]])).tolist(), [0.5, 0.5])


class UniformPenaltyTest(SimpleTestCase):
    """Test KL against the uniform distribution"""

    def test_uniform_is_zero(self):
        """Test uniform attention has zero penalty"""
        self.assertAlmostEqual(float(uniform_penalty(torch.full((2, 4), 0.25, dtype=torch.float64))), 0.0)

    def test_point_mass(self):
        """Test a point mass over T=4 gives ln 4"""
        A = tensor([[1, 0, 0, 0], [1, 0, 0, 0]])
        self.assertAlmostEqual(float(uniform_penalty(A)), math.log(4), delta=1e-6)

    def test_bounds(self):
        """Test the penalty lies in [0, ln T]"""
        for seed in range(10):
            value = float(uniform_penalty(random_stochastic(3, 6, seed)))
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, math.log(6))


class DiscrPenaltyTest(SimpleTestCase):
    """Test the signed, capped discriminative KL"""

    def test_identical_same_label(self):
        """Test identical distributions with the same label give 0"""
        A = random_stochastic(2, 5, seed=3)
        self.assertAlmostEqual(float(discr_penalty(A, A, True)), 0.0, delta=1e-6)

    def test_identical_different_label(self):
        """Test identical distributions with different labels give 0"""
        A = random_stochastic(2, 5, seed=3)
        self.assertAlmostEqual(float(discr_penalty(A, A, False)), 0.0, delta=1e-6)

    def test_smoothed_kl_value(self):
        """Test KL((1,0) || (0.5,0.5)) is about ln 2"""
        value = float(discr_penalty(tensor([[1, 0]]), tensor([[0.5, 0.5]]), True))
        self.assertAlmostEqual(value, math.log(2), delta=1e-3)

    def test_different_lengths_are_padded(self):
        """Test a 2-word and a 3-word utterance compare after zero padding"""
        value = float(discr_penalty(tensor([[0.5, 0.5]]), tensor([[0.5, 0.5, 0.0]]), True))
        self.assertAlmostEqual(value, 0.0, delta=1e-6)

    def test_cap_bounds_magnitude(self):
        """Test the divergence is capped for disjoint supports"""
        A_q, A_s = tensor([[1, 0]]), tensor([[0, 1]])
        self.assertAlmostEqual(float(discr_penalty(A_q, A_s, False, kl_cap=10.0)), -10.0)
        self.assertGreater(float(discr_penalty(A_q, A_s, True, kl_cap=math.inf)), 10.0)


class EpisodeDiscrLossTest(SimpleTestCase):
    """Test the pairwise episode average"""

    def test_single_matching_pair(self):
        """Test one query and one identical support with matching prediction give 0"""
        A = random_stochastic(2, 3, seed=4)
        self.assertAlmostEqual(float(episode_discr_loss([A], ['x'], [A], ['x'])), 0.0, delta=1e-6)

    def test_pair_grid_oracle(self):
        """Test a 2x2 grid equals the mean of the four pair penalties"""
        queries = [random_stochastic(2, 3, seed=5), random_stochastic(2, 4, seed=6)]
        supports = [random_stochastic(2, 5, seed=7), random_stochastic(2, 3, seed=8)]
        predicted, labels = ['a', 'b'], ['a', 'a']
        expected = np.mean([
            float(discr_penalty(q, s, p == l)) for q, p in zip(queries, predicted) for s, l in zip(supports, labels)
        ])
        self.assertAlmostEqual(float(episode_discr_loss(queries, predicted, supports, labels)), expected, places=12)

    def test_empty_episode(self):
        """Test an episode without queries is rejected"""
        with self.assertRaises(ValueError):
            episode_discr_loss([], [], [random_stochastic(1, 2, 0)], ['a'])


class RegularizerWeightsTest(SimpleTestCase):
    """Test weight validation"""

    def test_negative_weight_rejected(self):
        """Test negative weights are refused"""
        with self.assertRaises(ValueError):
            RegularizerWeights(alpha=-1.0)


class _Logits(nn.Module):
    def __init__(self):
        super().__init__()
        generator = torch.Generator().manual_seed(9)
        self.q = nn.Parameter(torch.randn(3, 4, generator=generator, dtype=torch.float64))
        self.s = nn.Parameter(torch.randn(3, 6, generator=generator, dtype=torch.float64))


class PenaltyGradientTest(SimpleTestCase):
    """Test penalty gradients through an upstream softmax"""

    def test_all_penalties_pass_gradient_check(self):
        """Test every penalty and their episode mean pass the check"""
        params = ParamStore(_Logits())

        def loss(ps):
            A_q, A_s = torch.softmax(ps['q'], dim=-1), torch.softmax(ps['s'], dim=-1)
            return (
                self_attn_penalty(A_q) + uniform_penalty(A_s)
                + discr_penalty(A_q, A_s, True) + episode_discr_loss([A_q], ['a'], [A_s, A_q], ['b', 'a'])
            )

        self.assertTrue(gradient_check(loss, params).passed)
