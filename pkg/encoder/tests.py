import numpy as np
import torch
from django.test import SimpleTestCase

from diffcore.gradcheck import gradient_check
from diffcore.params import ParamStore

from .semantic import EncoderParams, attend_heads, encode, run_bilstm


def make_params(d_w=3, d_h=4, d_a=5, r=2, seed=0):
    torch.manual_seed(seed)
    return EncoderParams(d_w, d_h, d_a, r).double()


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_oracle(X, lstm, reverse=False):
    w_ih = lstm.weight_ih.detach().numpy()
    w_hh = lstm.weight_hh.detach().numpy()
    b = lstm.bias.detach().numpy()
    d = w_hh.shape[1]
    h, c = np.zeros(d), np.zeros(d)
    out = np.zeros((X.shape[0], d))
    steps = range(X.shape[0] - 1, -1, -1) if reverse else range(X.shape[0])
    for t in steps:
        g = w_ih @ X[t] + w_hh @ h + b
        i, f, cand, o = sigmoid(g[:d]), sigmoid(g[d:2 * d]), np.tanh(g[2 * d:3 * d]), sigmoid(g[3 * d:])
        c = f * c + i * cand
        h = o * np.tanh(c)
        out[t] = h
    return out


class RunBiLSTMTest(SimpleTestCase):
    """Test the Bi-LSTM contextualisation"""

    def test_matches_stepwise_oracle(self):
        """Test a T=3 sequence against a per-step numpy LSTM"""
        params = make_params()
        X = torch.randn(3, 3, dtype=torch.float64)
        H = run_bilstm(X, params).detach().numpy()
        expected = np.hstack([
            lstm_oracle(X.numpy(), params.forward_lstm),
            lstm_oracle(X.numpy(), params.backward_lstm, reverse=True),
        ])
        np.testing.assert_allclose(H, expected, atol=1e-12)

    def test_single_token(self):
        """Test T=1 uses zero initial states in both directions"""
        params = make_params()
        X = torch.randn(1, 3, dtype=torch.float64)
        H = run_bilstm(X, params).detach().numpy()
        np.testing.assert_allclose(H[0, :4], lstm_oracle(X.numpy(), params.forward_lstm)[0], atol=1e-12)
        self.assertEqual(H.shape, (1, 8))

    def test_zero_weights_give_zero_states(self):
        """Test all-zero weights and biases give H = 0"""
        params = make_params()
        with torch.no_grad():
            for lstm in (params.forward_lstm, params.backward_lstm):
                for p in lstm.parameters():
                    p.zero_()
        H = run_bilstm(torch.randn(4, 3, dtype=torch.float64), params)
        self.assertTrue(torch.equal(H, torch.zeros(4, 8, dtype=torch.float64)))

    def test_dimension_mismatch(self):
        """Test a wrong embedding width is rejected"""
        with self.assertRaises(ValueError):
            run_bilstm(torch.randn(2, 7, dtype=torch.float64), make_params())


class AttendHeadsTest(SimpleTestCase):
    """Test multi-head self-attention"""

    def test_zero_ws2_gives_uniform_attention(self):
        """Test W_s2 = 0 gives A = 1/T and M = column mean of H"""
        params = make_params()
        with torch.no_grad():
            params.w_s2.zero_()
        H = torch.randn(4, 8, dtype=torch.float64)
        A, M = attend_heads(H, params)
        self.assertTrue(torch.allclose(A, torch.full((2, 4), 0.25, dtype=torch.float64)))
        self.assertTrue(torch.allclose(M, H.mean(dim=0).expand(2, 8)))

    def test_single_word(self):
        """Test T=1 gives an all-ones A and every head equal to the word"""
        H = torch.randn(1, 8, dtype=torch.float64)
        A, M = attend_heads(H, make_params())
        self.assertTrue(torch.equal(A, torch.ones(2, 1, dtype=torch.float64)))
        self.assertTrue(torch.allclose(M, H.expand(2, 8)))

    def test_matches_dense_oracle(self):
        """Test r=2, T=3 against direct numpy arithmetic"""
        params = make_params()
        H = torch.randn(3, 8, dtype=torch.float64)
        A, M = attend_heads(H, params)
        w1, w2, h = params.w_s1.detach().numpy(), params.w_s2.detach().numpy(), H.numpy()
        scores = w2 @ np.tanh(w1 @ h.T)
        expected = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(A.detach().numpy(), expected, atol=1e-12)
        np.testing.assert_allclose(M.detach().numpy(), expected @ h, atol=1e-12)

    def test_rows_are_distributions(self):
        """Test every attention row is non-negative and sums to 1"""
        instance = encode(torch.randn(6, 3, dtype=torch.float64), make_params(r=4))
        self.assertTrue((instance.A >= 0).all())
        self.assertTrue(torch.allclose(instance.A.sum(dim=1), torch.ones(4, dtype=torch.float64), atol=1e-6))
        self.assertTrue(torch.allclose(instance.M, instance.A @ instance.H))

    def test_head_views(self):
        """Test forward and backward head views split M's columns"""
        instance = encode(torch.randn(3, 3, dtype=torch.float64), make_params())
        self.assertTrue(torch.equal(instance.m_forward, instance.M[:, :4]))
        self.assertTrue(torch.equal(instance.m_backward, instance.M[:, 4:]))

    def test_permutation_with_zero_lstm(self):
        """Test permuting tokens permutes A's columns when the Bi-LSTM is zeroed"""
        params = make_params()
        with torch.no_grad():
            for lstm in (params.forward_lstm, params.backward_lstm):
                for p in lstm.parameters():
                    p.zero_()
        X = torch.randn(4, 3, dtype=torch.float64)
        perm = torch.tensor([2, 0, 3, 1])
        self.assertTrue(torch.allclose(encode(X[perm], params).A, encode(X, params).A[:, perm]))


class EncoderGradientTest(SimpleTestCase):
    """Test encoder gradients numerically"""

    def test_encoder_gradients(self):
        """Test run_bilstm and attend_heads pass the gradient check"""
        params = make_params()
        X = torch.randn(5, 3, dtype=torch.float64)
        weights = torch.randn(2, 8, dtype=torch.float64)
        report = gradient_check(lambda ps: (encode(X, ps.module).M * weights).sum(), ParamStore(params))
        self.assertTrue(report.passed)
