import math

import numpy as np
import torch
from django.test import SimpleTestCase
from torch import nn

from diffcore.gradcheck import gradient_check
from diffcore.params import ParamStore
from encoder.semantic import EncodedInstance, EncoderParams, encode

from .aggregation import AggregatorParams, aggregate, enhance_pair
from .perspectives import (
    MatchSequence, MatchUnits, PerspectiveWeights, attentive_match, head_wise, match_all,
    max_attentive_match, max_pool_match, multi_perspective, representatives, word_wise_match,
)

D_H = 4


def instance(r=2, T=3, seed=0):
    generator = torch.Generator().manual_seed(seed)
    H = torch.randn(T, 2 * D_H, generator=generator, dtype=torch.float64)
    A = torch.softmax(torch.randn(r, T, generator=generator, dtype=torch.float64), dim=-1)
    return EncodedInstance(H=H, A=A, M=A @ H)


def from_heads(M):
    return EncodedInstance(H=M, A=torch.eye(M.shape[0], dtype=torch.float64), M=M)


def weights(l=2, seed=0):
    torch.manual_seed(seed)
    return PerspectiveWeights(l, D_H).double()


def np_cos(u, v):
    return float(u @ v / (max(np.linalg.norm(u), 1e-8) * max(np.linalg.norm(v), 1e-8)))


def np_mp(v1, v2, W):
    return np.array([np_cos(w * v1, w * v2) for w in W])


def arr(t):
    return t.detach().numpy()


class MultiPerspectiveTest(SimpleTestCase):
    """Test the weighted-cosine matching function"""

    def test_identical_vectors(self):
        """Test v1 = v2 gives all ones"""
        v = torch.randn(D_H, dtype=torch.float64)
        W = weights(l=3).w1
        self.assertTrue(torch.allclose(multi_perspective(v, v, W), torch.ones(3, dtype=torch.float64)))

    def test_opposite_vectors(self):
        """Test v2 = -v1 gives all minus ones"""
        v = torch.randn(D_H, dtype=torch.float64)
        W = weights(l=3).w1
        self.assertTrue(torch.allclose(multi_perspective(v, -v, W), -torch.ones(3, dtype=torch.float64)))

    def test_hand_arithmetic(self):
        """Test W=(2,1), v1=(1,1), v2=(1,0) gives 2/sqrt(5)"""
        value = multi_perspective(
            torch.tensor([1.0, 1.0], dtype=torch.float64),
            torch.tensor([1.0, 0.0], dtype=torch.float64),
            torch.tensor([[2.0, 1.0]], dtype=torch.float64),
        )
        self.assertAlmostEqual(float(value[0]), 2 / math.sqrt(5), places=4)
        self.assertAlmostEqual(float(value[0]), 0.8944, places=4)


class HeadWiseTest(SimpleTestCase):
    """Test head-wise matching"""

    def test_same_instance(self):
        """Test S = Q gives all ones"""
        S, W = instance(), weights()
        fw, bw = head_wise(S, S, W.w1, W.w2)
        self.assertTrue(torch.allclose(fw, torch.ones(2, 2, dtype=torch.float64)))
        self.assertTrue(torch.allclose(bw, torch.ones(2, 2, dtype=torch.float64)))

    def test_single_head(self):
        """Test r=1 reduces to one multi-perspective comparison"""
        S, Q, W = instance(r=1, seed=1), instance(r=1, seed=2), weights()
        fw, _ = head_wise(S, Q, W.w1, W.w2)
        self.assertTrue(torch.allclose(fw[0], multi_perspective(S.m_forward[0], Q.m_forward[0], W.w1)))

    def test_loop_oracle(self):
        """Test r=2, l=2 against a per-pair loop"""
        S, Q, W = instance(seed=3), instance(seed=4), weights()
        fw, bw = head_wise(S, Q, W.w1, W.w2)
        for i in range(2):
            np.testing.assert_allclose(arr(fw[i]), np_mp(arr(S.m_forward[i]), arr(Q.m_forward[i]), arr(W.w1)))
            np.testing.assert_allclose(arr(bw[i]), np_mp(arr(S.m_backward[i]), arr(Q.m_backward[i]), arr(W.w2)))

    def test_mismatched_heads(self):
        """Test instances with different r are rejected"""
        W = weights()
        with self.assertRaises(ValueError):
            head_wise(instance(r=2), instance(r=3), W.w1, W.w2)


class MaxPoolTest(SimpleTestCase):
    """Test max-pooling matching"""

    def test_single_head_equals_head_wise(self):
        """Test r=1 equals head-wise under the same weights"""
        S, Q, W = instance(r=1, seed=1), instance(r=1, seed=2), weights()
        for a, b in zip(max_pool_match(S, Q, W.w3, W.w4), head_wise(S, Q, W.w3, W.w4)):
            self.assertTrue(torch.allclose(a, b))

    def test_matching_head_hits_ceiling(self):
        """Test a query holding S's head i gives an all-ones row i"""
        S = instance(r=3, seed=5)
        Q = from_heads(torch.stack([instance(r=3, seed=6).M[0], S.M[1], instance(r=3, seed=7).M[2]]))
        fw, bw = max_pool_match(S, Q, *weights().pair('max_pool'))
        self.assertTrue(torch.allclose(fw[1], torch.ones(2, dtype=torch.float64)))
        self.assertTrue(torch.allclose(bw[1], torch.ones(2, dtype=torch.float64)))

    def test_brute_force_oracle(self):
        """Test r=3 against enumeration over query heads"""
        S, Q, W = instance(r=3, seed=8), instance(r=3, seed=9), weights(l=3)
        fw, _ = max_pool_match(S, Q, W.w3, W.w4)
        for i in range(3):
            expected = np.max([np_mp(arr(S.m_forward[i]), arr(Q.m_forward[j]), arr(W.w3)) for j in range(3)], axis=0)
            np.testing.assert_allclose(arr(fw[i]), expected)

    def test_dominates_head_wise(self):
        """Test max-pooling dominates head-wise under shared weights"""
        S, Q, W = instance(r=4, seed=10), instance(r=4, seed=11), weights(l=3)
        pooled = max_pool_match(S, Q, W.w1, W.w2)
        direct = head_wise(S, Q, W.w1, W.w2)
        for a, b in zip(pooled, direct):
            self.assertTrue((a >= b - 1e-12).all())


class AttentiveTest(SimpleTestCase):
    """Test attentive and max-attentive matching"""

    def test_identical_query_heads(self):
        """Test query heads all equal to S's head i give an all-ones row i"""
        S = instance(r=2, seed=12)
        Q = from_heads(S.M[0].expand(2, -1).clone())
        fw, bw = attentive_match(S, Q, *weights().pair('attentive'))
        self.assertTrue(torch.allclose(fw[0], torch.ones(2, dtype=torch.float64)))
        self.assertTrue(torch.allclose(bw[0], torch.ones(2, dtype=torch.float64)))

    def test_single_head_representative(self):
        """Test r=1 makes the representative the query head itself"""
        S, Q = instance(r=1, seed=13), instance(r=1, seed=14)
        rep = representatives(S.m_forward, Q.m_forward)
        self.assertTrue(torch.allclose(rep, Q.m_forward, atol=1e-6))

    def test_weighted_mean_oracle(self):
        """Test r=2 representatives against direct arithmetic"""
        S, Q = instance(r=2, seed=15), instance(r=2, seed=16)
        ms, mq = arr(S.m_forward), arr(Q.m_forward)
        rep = arr(representatives(S.m_forward, Q.m_forward))
        for i in range(2):
            beta = np.array([np_cos(ms[i], mq[j]) for j in range(2)])
            total = beta.sum()
            total += 1e-8 if total >= 0 else -1e-8
            np.testing.assert_allclose(rep[i], (beta[:, None] * mq).sum(axis=0) / total, rtol=1e-10)

    def test_max_attentive_single_head(self):
        """Test r=1 max-attentive equals attentive under the same weights"""
        S, Q, W = instance(r=1, seed=17), instance(r=1, seed=18), weights()
        for a, b in zip(max_attentive_match(S, Q, W.w7, W.w8), attentive_match(S, Q, W.w7, W.w8)):
            self.assertTrue(torch.allclose(a, b))

    def test_max_attentive_oracle(self):
        """Test r=3 max-attentive against enumeration over representatives"""
        S, Q, W = instance(r=3, seed=19), instance(r=3, seed=20), weights(l=3)
        fw, _ = max_attentive_match(S, Q, W.w7, W.w8)
        rep = arr(representatives(S.m_forward, Q.m_forward))
        for i in range(3):
            expected = np.max([np_mp(arr(S.m_forward[i]), rep[j], arr(W.w7)) for j in range(3)], axis=0)
            np.testing.assert_allclose(arr(fw[i]), expected, rtol=1e-10)


class WordWiseTest(SimpleTestCase):
    """Test the word-level matching variant"""

    def test_single_word_same_instance(self):
        """Test T_s=1 and S=Q gives one all-ones row per direction"""
        S, W = instance(T=1, seed=21), weights()
        fw, bw = word_wise_match(S, S, W.w1, W.w2)
        self.assertTrue(torch.allclose(fw, torch.ones(1, 2, dtype=torch.float64)))
        self.assertTrue(torch.allclose(bw, torch.ones(1, 2, dtype=torch.float64)))

    def test_forward_uses_last_query_word_only(self):
        """Test changing earlier query words leaves the forward block unchanged"""
        S, Q, W = instance(T=3, seed=22), instance(T=4, seed=23), weights()
        H = Q.H.clone()
        H[:-1] = torch.randn(3, 2 * D_H, dtype=torch.float64)
        changed = EncodedInstance(H=H, A=Q.A, M=Q.M)
        self.assertTrue(torch.equal(word_wise_match(S, Q, W.w1, W.w2)[0], word_wise_match(S, changed, W.w1, W.w2)[0]))

    def test_row_oracle(self):
        """Test each row against the matching end state of Q"""
        S, Q, W = instance(T=3, seed=24), instance(T=5, seed=25), weights()
        fw, bw = word_wise_match(S, Q, W.w1, W.w2)
        for i in range(3):
            np.testing.assert_allclose(arr(fw[i]), np_mp(arr(S.h_forward[i]), arr(Q.h_forward[-1]), arr(W.w1)))
            np.testing.assert_allclose(arr(bw[i]), np_mp(arr(S.h_backward[i]), arr(Q.h_backward[0]), arr(W.w2)))


class MatchAllTest(SimpleTestCase):
    """Test assembly of the match sequence"""

    def test_layout_with_one_perspective(self):
        """Test l=1 gives rows of length 4 per direction"""
        seq = match_all(instance(seed=26), instance(seed=27), weights(l=1))
        self.assertEqual(tuple(seq.forward.shape), (2, 4))
        self.assertEqual(tuple(seq.backward.shape), (2, 4))

    def test_same_instance_head_wise_block(self):
        """Test source = target gives an all-ones head-wise block"""
        S = instance(seed=28)
        seq = match_all(S, S, weights(l=3))
        self.assertTrue(torch.allclose(seq.forward[:, :3], torch.ones(2, 3, dtype=torch.float64)))

    def test_block_equality(self):
        """Test column blocks equal the four matchers run on their own"""
        S, Q, W = instance(r=3, seed=29), instance(r=3, seed=30), weights(l=2)
        seq = match_all(S, Q, W)
        blocks = [
            head_wise(S, Q, W.w1, W.w2), max_attentive_match(S, Q, W.w7, W.w8),
            attentive_match(S, Q, W.w5, W.w6), max_pool_match(S, Q, W.w3, W.w4),
        ]
        for k, (fw, bw) in enumerate(blocks):
            self.assertTrue(torch.equal(seq.forward[:, 2 * k:2 * k + 2], fw))
            self.assertTrue(torch.equal(seq.backward[:, 2 * k:2 * k + 2], bw))

    def test_entries_within_unit_interval(self):
        """Test every match entry lies in [-1, 1]"""
        seq = match_all(instance(r=4, seed=31), instance(r=4, seed=32), weights(l=5))
        for block in (seq.forward, seq.backward):
            self.assertTrue((block.abs() <= 1 + 1e-12).all())

    def test_matcher_subset_shrinks_width(self):
        """Test disabling matchers shrinks the sequence width"""
        seq = match_all(instance(seed=33), instance(seed=34), weights(l=3), matchers=('attentive',))
        self.assertEqual(seq.width, 3)
        with self.assertRaises(ValueError):
            match_all(instance(), instance(), weights(), matchers=('bogus',))

    def test_word_level_rows_follow_source_words(self):
        """Test word-level matching yields T_s rows"""
        seq = match_all(instance(T=5, seed=35), instance(T=2, seed=36), weights(l=2), level='word')
        self.assertEqual(tuple(seq.forward.shape), (5, 8))

    def test_batched_grid_matches_pairwise(self):
        """Test broadcasting over a query x support grid equals per-pair calls"""
        supports = [instance(seed=40 + k) for k in range(3)]
        queries = [instance(seed=50 + i) for i in range(2)]
        W = weights(l=2)
        S = MatchUnits.stack([MatchUnits.heads(s) for s in supports]).map(lambda t: t.unsqueeze(0))
        Q = MatchUnits.stack([MatchUnits.heads(q) for q in queries]).map(lambda t: t.unsqueeze(1))
        grid = match_all(S, Q, W)
        for i, q in enumerate(queries):
            for k, s in enumerate(supports):
                self.assertTrue(torch.allclose(grid.forward[i, k], match_all(s, q, W).forward))


class AggregateTest(SimpleTestCase):
    """Test the aggregation Bi-LSTM"""

    def setUp(self):
        torch.manual_seed(1)
        self.params = AggregatorParams(4 * 2, D_H).double()

    def test_zero_weights_give_zero_vector(self):
        """Test zeroed aggregator weights produce a zero output"""
        with torch.no_grad():
            for p in self.params.parameters():
                p.zero_()
        seq = match_all(instance(seed=1), instance(seed=2), weights())
        self.assertTrue(torch.equal(aggregate(seq, self.params), torch.zeros(2 * D_H, dtype=torch.float64)))

    def test_stepwise_oracle(self):
        """Test r=3 against a per-step LSTM oracle"""
        from encoder.tests import lstm_oracle

        seq = match_all(instance(r=3, seed=3), instance(r=3, seed=4), weights())
        out = arr(aggregate(seq, self.params))
        forward = lstm_oracle(arr(seq.forward), self.params.forward_lstm)[-1]
        backward = lstm_oracle(arr(seq.backward), self.params.backward_lstm, reverse=True)[0]
        np.testing.assert_allclose(out, np.concatenate([forward, backward]), atol=1e-12)

    def test_single_head_single_step(self):
        """Test r=1 is one LSTM step per direction"""
        from encoder.tests import lstm_oracle

        seq = MatchSequence(torch.randn(1, 8, dtype=torch.float64), torch.randn(1, 8, dtype=torch.float64))
        out = arr(aggregate(seq, self.params))
        np.testing.assert_allclose(out[:D_H], lstm_oracle(arr(seq.forward), self.params.forward_lstm)[0], atol=1e-12)


class EnhancePairTest(SimpleTestCase):
    """Test two-way matching and aggregation"""

    def setUp(self):
        torch.manual_seed(2)
        self.W = weights(l=2)
        self.agg = AggregatorParams(4 * 2, D_H).double()

    def test_symmetric_inputs(self):
        """Test S = Q gives S_hat = Q_hat"""
        S = instance(seed=60)
        s_hat, q_hat = enhance_pair(S, S, self.W, self.agg)
        self.assertTrue(torch.equal(s_hat, q_hat))
        self.assertEqual(s_hat.shape[-1], 2 * D_H)

    def test_swap_swaps_outputs(self):
        """Test swapping inputs swaps the outputs"""
        S, Q = instance(seed=61), instance(seed=62)
        s_hat, q_hat = enhance_pair(S, Q, self.W, self.agg)
        q_hat2, s_hat2 = enhance_pair(Q, S, self.W, self.agg)
        self.assertTrue(torch.equal(s_hat, s_hat2))
        self.assertTrue(torch.equal(q_hat, q_hat2))

    def test_composition_oracle(self):
        """Test r=1, l=1 against composing the pieces by hand"""
        W = weights(l=1)
        agg = AggregatorParams(4, D_H).double()
        S, Q = instance(r=1, seed=63), instance(r=1, seed=64)
        s_hat, _ = enhance_pair(S, Q, W, agg)
        self.assertTrue(torch.allclose(s_hat, aggregate(match_all(S, Q, W), agg)))


class _Stack(nn.Module):
    def __init__(self):
        super().__init__()
        torch.manual_seed(3)
        self.encoder = EncoderParams(3, D_H, 5, 2)
        self.weights = PerspectiveWeights(3, D_H)
        self.aggregator = AggregatorParams(4 * 3, D_H)


class MatchingGradientTest(SimpleTestCase):
    """Test matching gradients numerically"""

    def test_enhance_pair_gradients(self):
        """Test head-level matching and aggregation pass the gradient check"""
        module = _Stack().double()
        X_s = torch.randn(4, 3, dtype=torch.float64)
        X_q = torch.randn(5, 3, dtype=torch.float64)
        direction = torch.randn(2, 2 * D_H, dtype=torch.float64)

        def loss(ps):
            m = ps.module
            s_hat, q_hat = enhance_pair(encode(X_s, m.encoder), encode(X_q, m.encoder), m.weights, m.aggregator)
            return (torch.stack([s_hat, q_hat]) * direction).sum()

        self.assertTrue(gradient_check(loss, ParamStore(module)).passed)

    def test_word_level_gradients(self):
        """Test word-level matching passes the gradient check"""
        module = _Stack().double()
        X_s = torch.randn(3, 3, dtype=torch.float64)
        X_q = torch.randn(4, 3, dtype=torch.float64)

        def loss(ps):
            m = ps.module
            s_hat, _ = enhance_pair(encode(X_s, m.encoder), encode(X_q, m.encoder), m.weights, m.aggregator, level='word')
            return s_hat.sum()

        self.assertTrue(gradient_check(loss, ParamStore(module)).passed)

