import numpy as np
import pytest
import torch

from flowcast.graph import (DynamicGraphEncoder, DynamicKernelBuilder,
                            GraphGRUCell, graph_conv, kernel_from_embedding)
from flowcast.losses import mse
from flowcast.training import grad_check


class TestKernel:
    def test_zero_embedding_gives_identity(self):
        state = kernel_from_embedding(torch.zeros(4, 3, dtype=torch.float64))
        assert torch.equal(state.kernel, torch.eye(4, dtype=torch.float64))

    def test_identity_embedding_doubles(self):
        # E = I2: A = I, ReLU(A) = I, row sums 1, g = I + D^-1/2 I D^-1/2.
        state = kernel_from_embedding(torch.eye(2, dtype=torch.float64))
        expected = 2.0 * torch.eye(2, dtype=torch.float64)
        assert torch.allclose(state.kernel, expected, atol=1e-5)

    def test_symmetry_and_diagonal_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            e = torch.from_numpy(rng.normal(size=(5, 4)))
            state = kernel_from_embedding(torch.tanh(e))
            g = state.kernel
            assert float((g - g.T).abs().max()) <= 1e-12
            assert (torch.diagonal(g) >= 1.0).all()
            assert ((g - torch.eye(5, dtype=torch.float64)) >= 0).all()

    def test_binary_degree_mode(self):
        # Weighted degrees [6, 3, 1] vs binary edge counts [2, 2, 1].
        e = torch.tensor([[2.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                         dtype=torch.float64)
        weighted = kernel_from_embedding(e, "weighted")
        binary = kernel_from_embedding(e, "binary")
        assert not torch.equal(weighted.kernel, binary.kernel)
        assert float((binary.kernel - binary.kernel.T).abs().max()) <= 1e-12
        with pytest.raises(ValueError):
            kernel_from_embedding(e, "other")

    def test_builder_rejects_non_finite(self):
        builder = DynamicKernelBuilder(3, 2, 4)
        chi = torch.full((1, 3, 2), float("nan"), dtype=torch.float64)
        with pytest.raises(ValueError, match="non-finite"):
            builder(chi)


class TestGraphConv:
    def test_identity_kernel_projects_features(self):
        feats = torch.rand(2, 3, 4, dtype=torch.float64)
        theta = torch.eye(4, dtype=torch.float64)
        bias = torch.zeros(4, dtype=torch.float64)
        g = torch.eye(3, dtype=torch.float64)
        assert torch.allclose(graph_conv(g, feats, theta, bias), feats)

    def test_isolated_row_sees_only_itself(self):
        g = torch.zeros(3, 3, dtype=torch.float64)
        g[0, 0] = 2.0
        feats = torch.rand(3, 2, dtype=torch.float64)
        theta = torch.rand(2, 5, dtype=torch.float64)
        bias = torch.zeros(5, dtype=torch.float64)
        base = graph_conv(g, feats, theta, bias)
        other = feats.clone()
        other[1:] += 3.0
        out = graph_conv(g, other, theta, bias)
        assert torch.allclose(out[0], base[0])

    def test_bilinearity_in_kernel(self):
        g = torch.rand(3, 3, dtype=torch.float64)
        feats = torch.rand(3, 2, dtype=torch.float64)
        theta = torch.rand(2, 4, dtype=torch.float64)
        bias = torch.zeros(4, dtype=torch.float64)
        once = graph_conv(g, feats, theta, bias)
        twice = graph_conv(2 * g, feats, theta, bias)
        assert torch.allclose(twice, 2 * once)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            graph_conv(torch.eye(3, dtype=torch.float64),
                       torch.rand(2, 2, dtype=torch.float64),
                       torch.rand(2, 4, dtype=torch.float64),
                       torch.zeros(4, dtype=torch.float64))


class TestCell:
    def _cell(self, n=3, c=2, f=4, l=3, seed=0):
        g = torch.Generator().manual_seed(seed)
        return GraphGRUCell(n, c, f, l, generator=g)

    def test_zero_params_halve_previous_state(self):
        cell = self._cell()
        with torch.no_grad():
            for p in cell.parameters():
                p.zero_()
        chi = torch.rand(2, 3, 2, dtype=torch.float64)
        h_prev = torch.rand(2, 3, 4, dtype=torch.float64)
        h, state, reset, update, candidate = cell(chi, h_prev,
                                                  return_state=True)
        assert torch.all(reset == 0.5) and torch.all(update == 0.5)
        assert torch.all(candidate == 0.0)
        assert torch.allclose(h, 0.5 * h_prev)
        assert torch.equal(state.kernel[0],
                           torch.eye(3, dtype=torch.float64))

    def test_gate_ranges_and_candidate_bounds(self):
        cell = self._cell(seed=3)
        chi = torch.randn(4, 3, 2, dtype=torch.float64)
        h_prev = torch.randn(4, 3, 4, dtype=torch.float64).tanh()
        h, state, reset, update, candidate = cell(chi, h_prev,
                                                  return_state=True)
        for gate in (reset, update):
            assert (gate > 0).all() and (gate < 1).all()
        assert (candidate > -1).all() and (candidate < 1).all()

    def test_new_state_is_convex_mixture(self):
        cell = self._cell(seed=5)
        chi = torch.randn(2, 3, 2, dtype=torch.float64)
        h_prev = torch.randn(2, 3, 4, dtype=torch.float64).tanh()
        h, _, _, _, candidate = cell(chi, h_prev, return_state=True)
        lower = torch.minimum(candidate, h_prev)
        upper = torch.maximum(candidate, h_prev)
        assert (h >= lower - 1e-12).all() and (h <= upper + 1e-12).all()

    def test_kernel_invariants_at_every_step(self):
        cell = self._cell(seed=7)
        chi = torch.randn(1, 3, 2, dtype=torch.float64)
        h = torch.zeros(1, 3, 4, dtype=torch.float64)
        with torch.no_grad():
            for _ in range(5):
                h, state, *_ = cell(chi, h, return_state=True)
                g = state.kernel[0]
                assert float((g - g.T).abs().max()) <= 1e-12
                assert ((g - torch.eye(3, dtype=torch.float64)) >= -1e-15).all()

    def test_gradients_match_finite_differences(self):
        class Wrapper(torch.nn.Module):
            def __init__(self):
                super().__init__()
                g = torch.Generator().manual_seed(1)
                self.cell = GraphGRUCell(3, 2, 4, 3, generator=g)

            def forward(self, x, d=None, ext=None):
                h = torch.zeros(x.shape[0], 3, 4, dtype=torch.float64)
                return self.cell(x, h)

        model = Wrapper()
        rng = np.random.default_rng(4)
        x = torch.from_numpy(rng.normal(size=(2, 3, 2)))
        y = torch.from_numpy(rng.normal(size=(2, 3, 4)))
        err, name = grad_check(model, (x, None, None, y), mse, step=1e-6)
        assert err <= 1e-4, (err, name)


class TestEncoder:
    def test_output_shape(self):
        enc = DynamicGraphEncoder(11, 3, 128, 16)
        seq = torch.rand(1, 24, 11, 3, dtype=torch.float64)
        assert enc(seq).shape == (1, 24, 11, 128)

    def test_zero_params_zero_output(self):
        enc = DynamicGraphEncoder(3, 2, 4, 3)
        with torch.no_grad():
            for p in enc.parameters():
                p.zero_()
        seq = torch.rand(2, 6, 3, 2, dtype=torch.float64)
        assert torch.all(enc(seq) == 0.0)

    def test_deterministic(self):
        g1 = torch.Generator().manual_seed(11)
        g2 = torch.Generator().manual_seed(11)
        a = DynamicGraphEncoder(3, 2, 4, 3, generator=g1)
        b = DynamicGraphEncoder(3, 2, 4, 3, generator=g2)
        seq = torch.rand(1, 5, 3, 2, dtype=torch.float64)
        assert torch.equal(a(seq), b(seq))

    def test_stacked_layers(self):
        enc = DynamicGraphEncoder(3, 2, 4, 3, num_layers=2)
        seq = torch.rand(1, 5, 3, 2, dtype=torch.float64)
        assert enc(seq).shape == (1, 5, 3, 4)
        assert len(enc.cells) == 2
