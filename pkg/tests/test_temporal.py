import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcast.losses import mse
from flowcast.temporal import (CausalNodeConv, ConvBlock, HistoryEnhancer,
                               PeakAmplifier, PeakStackConfig, TcnBlock,
                               TcnStackConfig, dilated_causal_conv,
                               stack_receptive_field)
from flowcast.training import grad_check


def conv_oracle(seq, weights, dilation):
    # Independent brute-force: out(t) = sum_i seq(t - d*i) * w(i), zeros left.
    out = np.zeros(len(seq))
    for t in range(len(seq)):
        for i, w in enumerate(weights):
            j = t - dilation * i
            if j >= 0:
                out[t] += seq[j] * w
    return out


class TestDilatedCausalConv:
    def test_hand_example_dilation_one(self):
        out = dilated_causal_conv([1, 2, 3, 4], [1, 1], 1)
        assert out.tolist() == [1.0, 3.0, 5.0, 7.0]

    def test_hand_example_dilation_two(self):
        out = dilated_causal_conv([1, 2, 3, 4], [1, 1], 2)
        assert out.tolist() == [1.0, 2.0, 4.0, 6.0]

    def test_unit_kernel_is_identity(self):
        seq = np.random.default_rng(0).normal(size=17)
        out = dilated_causal_conv(seq, [1.0], 3)
        np.testing.assert_allclose(out, seq, rtol=1e-15)

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5), st.integers(1, 4))
    def test_against_brute_force(self, seed, k, d):
        rng = np.random.default_rng(seed)
        seq = rng.normal(size=20)
        weights = rng.normal(size=k)
        out = dilated_causal_conv(seq, weights, d)
        np.testing.assert_allclose(out.numpy(), conv_oracle(seq, weights, d),
                                   atol=1e-12)

    def test_causality(self):
        rng = np.random.default_rng(1)
        seq = rng.normal(size=24)
        weights = rng.normal(size=3)
        base = dilated_causal_conv(seq, weights, 2)
        bumped = seq.copy()
        bumped[15] += 100.0
        out = dilated_causal_conv(bumped, weights, 2)
        np.testing.assert_array_equal(out[:15], base[:15])


class TestConvBlock:
    def _input(self, n=3, p=10, seed=0):
        rng = np.random.default_rng(seed)
        return torch.from_numpy(rng.normal(size=(2, n, p)))

    def test_zero_weights_give_zero_output(self):
        block = ConvBlock(3, kernel_size=3, dilation=1, dropout=0.5)
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        block.eval()
        out = block(self._input())
        assert torch.all(out == 0.0)

    def test_eval_mode_ignores_dropout(self):
        x = self._input()
        torch.manual_seed(0)
        a = ConvBlock(3, 3, 1, dropout=0.5)
        b = ConvBlock(3, 3, 1, dropout=0.0)
        b.load_state_dict(a.state_dict())
        a.eval(), b.eval()
        assert torch.equal(a(x), b(x))

    def test_output_nonnegative(self):
        block = ConvBlock(3, 5, 2, dropout=0.0)
        block.eval()
        assert (block(self._input(seed=5)) >= 0).all()


class TestTcnBlock:
    def test_zero_init_is_exact_identity(self):
        block = TcnBlock(4, kernel_size=3, layers=2, dropout=0.0)
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        block.eval()
        x = torch.from_numpy(np.random.default_rng(0).normal(size=(2, 4, 12)))
        assert torch.equal(block(x), x)

    def test_receptive_field_formula(self):
        # Three stacked convs with filter size 2 and dilations 1, 2, 4 see
        # 8 history steps.
        assert stack_receptive_field([2, 2, 2], [1, 2, 4]) == 8

    def test_receptive_field_by_impulse(self):
        impulse = np.zeros(32)
        impulse[0] = 1.0
        out = impulse
        for d in (1, 2, 4):
            out = dilated_causal_conv(out, [1.0, 1.0], d).numpy()
        assert np.count_nonzero(out) == 8

    def test_causality_of_block(self):
        block = TcnBlock(2, kernel_size=5, layers=2, dropout=0.0)
        block.eval()
        rng = np.random.default_rng(3)
        x = torch.from_numpy(rng.normal(size=(1, 2, 16)))
        base = block(x)
        bumped = x.clone()
        bumped[0, :, 9:] += 10.0
        out = block(bumped)
        assert torch.equal(out[..., :9], base[..., :9])

    def test_gradients_match_finite_differences(self):
        # P=8 series through one residual block, checked against the
        # central-difference oracle.
        class Wrapper(torch.nn.Module):
            def __init__(self):
                super().__init__()
                g = torch.Generator().manual_seed(0)
                self.block = TcnBlock(2, kernel_size=3, layers=2,
                                      dropout=0.0, generator=g)

            def forward(self, x, d=None, ext=None):
                return self.block(x)

        model = Wrapper()
        rng = np.random.default_rng(2)
        x = torch.from_numpy(rng.normal(size=(2, 2, 8)))
        y = torch.from_numpy(rng.normal(size=(2, 2, 8)))
        err, name = grad_check(model, (x, None, None, y), mse, step=1e-6)
        assert err <= 1e-4, (err, name)


class TestHistoryEnhancer:
    def test_default_config_channel_count(self):
        cfg = TcnStackConfig()
        assert cfg.num_blocks == 12
        enhancer = HistoryEnhancer(2, cfg)
        enhancer.eval()
        x = torch.rand(1, 16, 2, 1, dtype=torch.float64)
        assert enhancer(x).shape == (1, 16, 2, 12)

    def test_kernel_rule(self):
        cfg = TcnStackConfig(num_blocks=4)
        assert [cfg.kernel_size(i) for i in range(1, 5)] == [3, 5, 7, 9]

    def test_zero_params_reproduce_input_in_every_channel(self):
        enhancer = HistoryEnhancer(3, TcnStackConfig(num_blocks=3, dropout=0.0))
        with torch.no_grad():
            for p in enhancer.parameters():
                p.zero_()
        enhancer.eval()
        x = torch.rand(2, 10, 3, 1, dtype=torch.float64)
        out = enhancer(x)
        for c in range(3):
            assert torch.equal(out[..., c:c + 1], x)

    def test_per_node_independence(self):
        enhancer = HistoryEnhancer(3, TcnStackConfig(num_blocks=2, dropout=0.0))
        enhancer.eval()
        x = torch.rand(1, 12, 3, 1, dtype=torch.float64)
        base = enhancer(x)
        bumped = x.clone()
        bumped[:, :, 1] += 5.0
        out = enhancer(bumped)
        assert torch.equal(out[:, :, 0], base[:, :, 0])
        assert torch.equal(out[:, :, 2], base[:, :, 2])
        assert not torch.equal(out[:, :, 1], base[:, :, 1])


class TestPeakAmplifier:
    def _amplify(self, seq, num_blocks=1):
        amp = PeakAmplifier(PeakStackConfig(num_blocks=num_blocks))
        x = torch.tensor(seq, dtype=torch.float64).reshape(1, -1, 1, 1)
        return amp(x)[0, :, 0, :]

    def test_hand_window_three(self):
        out = self._amplify([0.0, 5.0, 0.0, 0.0])
        assert out[:, 0].tolist() == [0.0, 5.0, 5.0, 5.0]

    def test_nondecreasing_input_is_identity(self):
        seq = [0.0, 1.0, 1.5, 2.0, 7.0]
        out = self._amplify(seq, num_blocks=3)
        for c in range(3):
            assert out[:, c].tolist() == seq

    def test_kernel_rule_and_shape(self):
        cfg = PeakStackConfig()
        assert cfg.num_blocks == 6
        assert [cfg.kernel_size(i) for i in range(1, 7)] == [3, 5, 7, 9, 11, 13]
        amp = PeakAmplifier(cfg)
        x = torch.rand(2, 20, 3, 1, dtype=torch.float64)
        assert amp(x).shape == (2, 20, 3, 6)

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_dominates_input_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, 15)
        b = a + rng.uniform(0, 1, 15)
        out_a = self._amplify(list(a), num_blocks=2)
        out_b = self._amplify(list(b), num_blocks=2)
        assert (out_a.numpy() >= a[:, None] - 1e-15).all()
        assert (out_b.numpy() >= out_a.numpy() - 1e-15).all()

    def test_causality(self):
        rng = np.random.default_rng(9)
        seq = rng.uniform(0, 1, 20)
        base = self._amplify(list(seq), num_blocks=2)
        bumped = seq.copy()
        bumped[12] += 10
        out = self._amplify(list(bumped), num_blocks=2)
        assert torch.equal(out[:12], base[:12])
