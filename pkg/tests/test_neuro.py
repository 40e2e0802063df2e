import math

import numpy as np
import pytest
import torch

import oracles
from structdrts.errors import ConfigError, OutOfVocabulary, ShapeMismatch
from structdrts.graphs import _graph
from structdrts.neuro import (
    MLP,
    UNK,
    AdditiveAttention,
    BiLSTM,
    DecoderLSTM,
    GATLayer,
    GATStack,
    WordEmbedding,
    attention_context,
    cross_entropy_loss,
    edge_softmax,
    grad_check,
    load_checkpoint,
    nll_sum,
    save_checkpoint,
)



@pytest.fixture(autouse=True)
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


def np_(t):
    return t.detach().numpy()


def random_graph(rng, n, p=0.4):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return _graph(n, edges, ["x"] * n)


class TestEmbedding:
    def test_dimension(self):
        emb = WordEmbedding(10, 5, 300, 100, 100)
        assert emb(torch.tensor([1, 2]), torch.tensor([0, 1])).shape == (2, 500)

    def test_unknown_word_uses_unk_row(self):
        table = np.arange(30, dtype=float).reshape(10, 3)
        emb = WordEmbedding(10, 5, 4, 3, 2, pretrained=table)
        out = emb(torch.tensor([42]), torch.tensor([1]))[0]
        np.testing.assert_array_equal(np_(out[:4]), np_(emb.rand.weight[UNK]))
        np.testing.assert_array_equal(np_(out[4:7]), np.zeros(3))
        np.testing.assert_array_equal(np_(out[7:]), np_(emb.lemma.weight[1]))

    def test_pretrained_is_frozen(self):
        emb = WordEmbedding(4, 2, 2, 3, 2, pretrained=np.ones((4, 3)))
        names = {n for n, _ in emb.named_parameters()}
        assert names == {"rand.weight", "lemma.weight"}
        emb(torch.tensor([1]), torch.tensor([1])).sum().backward()
        assert emb.pretrained.grad is None

    def test_identical_ids_identical_vectors(self):
        emb = WordEmbedding(4, 2, 2, 3, 2)
        out = emb(torch.tensor([3, 3]), torch.tensor([1, 1]))
        assert torch.equal(out[0], out[1])

    def test_out_of_vocabulary_without_unk(self):
        emb = WordEmbedding(4, 2, 2, 3, 2, use_unk=False)
        with pytest.raises(OutOfVocabulary):
            emb(torch.tensor([4]), torch.tensor([0]))

    def test_pretrained_shape(self):
        with pytest.raises(ShapeMismatch):
            WordEmbedding(4, 2, 2, 3, 2, pretrained=np.ones((4, 2)))


class TestMLP:
    def test_zero(self):
        mlp = MLP(4, 3)
        torch.nn.init.zeros_(mlp.linear.weight)
        torch.nn.init.zeros_(mlp.linear.bias)
        assert torch.count_nonzero(mlp(torch.randn(2, 4))) == 0

    def test_identity(self):
        mlp = MLP(3, 3, "linear")
        with torch.no_grad():
            mlp.linear.weight.copy_(torch.eye(3))
            mlp.linear.bias.zero_()
        x = torch.randn(2, 3)
        assert torch.equal(mlp(x), x)

    def test_hand_matrix_multiply(self):
        rng = np.random.default_rng(0)
        mlp = MLP(4, 3, "relu")
        w, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        with torch.no_grad():
            mlp.linear.weight.copy_(torch.tensor(w))
            mlp.linear.bias.copy_(torch.tensor(b))
        x = rng.normal(size=(2, 4))
        np.testing.assert_allclose(np_(mlp(torch.tensor(x))), np.maximum(x @ w.T + b, 0), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            MLP(4, 3)(torch.randn(2, 5))

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            MLP(4, 3, "gelu2")


def _lstm_weights(lstm, layer=0, suffix=""):
    return [np_(getattr(lstm, f"{n}_l{layer}{suffix}")) for n in ("weight_ih", "weight_hh", "bias_ih", "bias_hh")]


class TestLSTMs:
    def test_decoder_matches_gate_oracle(self):
        torch.manual_seed(0)
        dec = DecoderLSTM(3, 4)
        xs = torch.randn(5, 3)
        out, (h, c) = dec(xs)
        want, (wh, wc) = oracles.lstm_sequence(np_(xs), *_lstm_weights(dec.lstm))
        np.testing.assert_allclose(np_(out), want, atol=1e-12)
        np.testing.assert_allclose(np_(c[0]), wc, atol=1e-12)

    def test_step_equals_sequence(self):
        torch.manual_seed(1)
        dec = DecoderLSTM(3, 4)
        xs = torch.randn(4, 3)
        out, _ = dec(xs)
        state = dec.zero_state()
        for t in range(4):
            state, h = dec.step(state, xs[t])
            np.testing.assert_allclose(np_(h), np_(out[t]), atol=1e-12)

    def test_zero_everything(self):
        dec = DecoderLSTM(3, 4)
        for p in dec.parameters():
            torch.nn.init.zeros_(p)
        _, h = dec.step(dec.zero_state(), torch.zeros(3))
        assert torch.count_nonzero(h) == 0

    def test_step_is_deterministic(self):
        dec = DecoderLSTM(3, 4)
        state, x = dec.zero_state(), torch.randn(3)
        assert torch.equal(dec.step(state, x)[1], dec.step(state, x)[1])

    def test_bilstm_zero_input_closed_form(self):
        lstm = BiLSTM(3, 2, layers=1)
        for p in lstm.parameters():
            torch.nn.init.zeros_(p)
        out = lstm(torch.zeros(1, 3))
        # all gates sigmoid(0) = 1/2, candidate tanh(0) = 0 -> c = 0, h = 0
        np.testing.assert_allclose(np_(out), 0.0)
        with torch.no_grad():
            lstm.lstm.bias_ih_l0.fill_(1.0)
        out = lstm(torch.zeros(1, 3))
        s, c = oracles.sigmoid(1.0), oracles.sigmoid(1.0) * math.tanh(1.0)
        np.testing.assert_allclose(np_(out[0, :2]), s * math.tanh(c), atol=1e-12)
        np.testing.assert_allclose(np_(out[0, 2:]), 0.0)

    def test_bilstm_matches_oracle_both_directions(self):
        torch.manual_seed(2)
        lstm = BiLSTM(3, 4, layers=1)
        xs = torch.randn(5, 3)
        out = np_(lstm(xs))
        fwd, _ = oracles.lstm_sequence(np_(xs), *_lstm_weights(lstm.lstm))
        bwd, _ = oracles.lstm_sequence(np_(xs)[::-1], *_lstm_weights(lstm.lstm, suffix="_reverse"))
        np.testing.assert_allclose(out[:, :4], fwd, atol=1e-12)
        np.testing.assert_allclose(out[:, 4:], bwd[::-1], atol=1e-12)

    def test_length_one(self):
        lstm = BiLSTM(3, 4, layers=2)
        assert lstm(torch.randn(1, 3)).shape == (1, 8)

    def test_reversal_swaps_directions(self):
        torch.manual_seed(3)
        lstm = BiLSTM(3, 4)
        with torch.no_grad():
            for name in ("weight_ih", "weight_hh", "bias_ih", "bias_hh"):
                getattr(lstm.lstm, f"{name}_l0_reverse").copy_(getattr(lstm.lstm, f"{name}_l0"))
        xs = torch.randn(6, 3)
        a, b = lstm(xs), lstm(xs.flip(0))
        np.testing.assert_allclose(np_(a[:, :4]), np_(b.flip(0)[:, 4:]), atol=1e-12)

    def test_bilstm_errors(self):
        with pytest.raises(ShapeMismatch):
            BiLSTM(3, 2)(torch.zeros(0, 3))
        with pytest.raises(ShapeMismatch):
            BiLSTM(3, 2)(torch.zeros(2, 4))


class TestAttention:
    def test_single_key(self):
        attn = AdditiveAttention(3, 2, 4)
        key = torch.randn(1, 2)
        ctx, w = attention_context(torch.randn(3), key, attn)
        assert w.tolist() == [1.0]
        assert torch.equal(ctx, key[0])

    def test_equal_scores(self):
        attn = AdditiveAttention(3, 2, 4)
        keys = torch.ones(2, 2)
        _, w = attention_context(torch.randn(3), keys, attn)
        np.testing.assert_allclose(np_(w), [0.5, 0.5])

    def test_scores_softmax(self):
        # v.tanh(...) made linear in the key: keys carry scores [1, 2, 3] directly
        attn = AdditiveAttention(1, 1, 1)
        with torch.no_grad():
            attn.query.weight.zero_()
            attn.key.weight.fill_(1e-4)
            attn.key.bias.zero_()
            attn.v.weight.fill_(1e4)
        keys = torch.tensor([[1.0], [2.0], [3.0]])
        _, w = attention_context(torch.zeros(1), keys, attn)
        np.testing.assert_allclose(np_(w), oracles.softmax(np.array([1.0, 2.0, 3.0])), atol=1e-7)

    def test_matches_oracle(self):
        torch.manual_seed(4)
        attn = AdditiveAttention(3, 5, 4)
        q, k = torch.randn(2, 3), torch.randn(6, 5)
        ctx, w = attn(q, k)
        want_ctx, want_w = oracles.additive_attention(
            np_(q), np_(k), np_(attn.query.weight), np_(attn.key.weight), np_(attn.key.bias), np_(attn.v.weight)
        )
        np.testing.assert_allclose(np_(w), want_w, atol=1e-12)
        np.testing.assert_allclose(np_(ctx), want_ctx, atol=1e-12)
        np.testing.assert_allclose(np_(w.sum(1)), 1.0, atol=1e-12)

    def test_empty_memory(self):
        with pytest.raises(ShapeMismatch):
            AdditiveAttention(3, 2, 4)(torch.randn(1, 3), torch.zeros(0, 2))


class TestGAT:
    def _params(self, layer):
        return np_(layer.weight), np_(layer.a_recv), np_(layer.a_send)

    def test_isolated_node(self):
        torch.manual_seed(0)
        layer = GATLayer(3, 2, 2)
        g = _graph(1, [], ["x"])
        h = torch.randn(1, 3)
        out, (_, _, alpha) = layer(h, g, return_attention=True)
        np.testing.assert_allclose(np_(alpha), 1.0)
        want = np.concatenate([oracles.sigmoid(np_(layer.weight[k]) @ np_(h[0])) for k in range(2)])
        np.testing.assert_allclose(np_(out[0]), want, atol=1e-12)

    def test_equal_scores_give_thirds(self):
        layer = GATLayer(2, 1, 2)
        g = _graph(3, [(0, 1), (0, 2)], ["x"] * 3)
        _, (recv, _, alpha) = layer(torch.ones(3, 2), g, return_attention=True)
        np.testing.assert_allclose(np_(alpha[recv == 0]), 1 / 3)

    @pytest.mark.parametrize("heads", [1, 2, 4])
    def test_matches_dense_oracle(self, heads):
        rng = np.random.default_rng(heads)
        torch.manual_seed(heads)
        g = random_graph(rng, 5)
        layer = GATLayer(3, heads, 2)
        h = torch.randn(5, 3)
        want, _ = oracles.gat_layer_dense(np_(h), g.adjacency, *self._params(layer))
        np.testing.assert_allclose(np_(layer(h, g)), want, atol=1e-10)

    def test_stack_of_one_is_a_layer(self):
        torch.manual_seed(5)
        stack = GATStack(3, 4, layers=1, heads=2)
        g = random_graph(np.random.default_rng(5), 4)
        h = torch.randn(4, 3)
        assert torch.equal(stack(h, g), stack.layers[0](h, g))

    def test_stack_dims(self):
        stack = GATStack(7, 600, layers=2, heads=4)
        assert stack.out_dim == 600
        assert [lay.head_dim for lay in stack.layers] == [150, 150]
        assert stack.layers[0].weight is not stack.layers[1].weight

    def test_stack_config_errors(self):
        with pytest.raises(ConfigError):
            GATStack(3, 6, layers=1, heads=4)
        with pytest.raises(ConfigError):
            GATStack(3, 8, layers=0)

    def test_normalization(self):
        torch.manual_seed(6)
        g = random_graph(np.random.default_rng(6), 8)
        layer = GATLayer(3, 4, 2)
        _, (recv, _, alpha) = layer(torch.randn(8, 3), g, return_attention=True)
        sums = torch.zeros(8, 4).index_add(0, recv, alpha)
        np.testing.assert_allclose(np_(sums), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        torch.manual_seed(7)
        recv = torch.tensor([0, 0, 0, 1, 1, 2])
        scores = torch.randn(6, 3)
        shift = torch.randn(3, 3)[recv]  # one constant per receiver and head
        np.testing.assert_allclose(np_(edge_softmax(scores + shift, recv, 3)), np_(edge_softmax(scores, recv, 3)), atol=1e-9)

    def test_locality(self):
        torch.manual_seed(8)
        layer = GATLayer(3, 2, 2)
        g = _graph(4, [(0, 1), (1, 2), (2, 3)], ["x"] * 4)
        h = torch.randn(4, 3, requires_grad=True)
        (grad,) = torch.autograd.grad(layer(h, g)[0].sum(), h)
        # node 0 sees only itself and node 1
        assert torch.count_nonzero(grad[2:]) == 0
        assert torch.count_nonzero(grad[:2]) > 0

    def test_shape_errors(self):
        layer = GATLayer(3, 2, 2)
        with pytest.raises(ShapeMismatch):
            layer(torch.randn(4, 3), _graph(3, [], ["x"] * 3))
        with pytest.raises(ShapeMismatch):
            layer(torch.randn(3, 2), _graph(3, [], ["x"] * 3))


class TestLoss:
    def test_certain_prediction(self):
        logits = torch.tensor([[100.0, -100.0], [-100.0, 100.0]])
        assert cross_entropy_loss(logits, torch.tensor([0, 1])).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        assert cross_entropy_loss(torch.zeros(3, 7), torch.tensor([0, 3, 6])).item() == pytest.approx(math.log(7))

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(9)
        logits, gold = rng.normal(size=(4, 5)), np.array([0, 4, 2, 2])
        want = -np.log(oracles.softmax(logits)[np.arange(4), gold]).sum()
        assert nll_sum(torch.tensor(logits), torch.tensor(gold)).item() == pytest.approx(want, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            nll_sum(torch.zeros(2, 3), torch.tensor([0]))
        with pytest.raises(ShapeMismatch):
            nll_sum(torch.zeros(1, 3), torch.tensor([3]))


class TestGradCheck:
    def test_linear_is_exact(self):
        torch.manual_seed(10)
        lin = torch.nn.Linear(4, 3)
        x = torch.randn(5, 4)
        assert grad_check(lambda: lin(x).sum(), lin.parameters()) <= 1e-8

    def test_detects_wrong_gradient(self):
        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return x**2

            @staticmethod
            def backward(ctx, g):
                (x,) = ctx.saved_tensors
                return g * x  # should be 2x

        w = torch.nn.Parameter(torch.randn(3))
        assert grad_check(lambda: Wrong.apply(w).sum(), [w]) > 0.1

    def test_needs_float64(self):
        w = torch.nn.Parameter(torch.randn(3, dtype=torch.float32))
        with pytest.raises(ConfigError):
            grad_check(lambda: w.sum(), [w])

    def test_gat_layer(self):
        torch.manual_seed(11)
        layer = GATLayer(3, 2, 2)
        g = random_graph(np.random.default_rng(11), 5, 0.5)
        h = torch.randn(5, 3)
        assert grad_check(lambda: (layer(h, g) ** 2).sum(), layer.parameters()) <= 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tensors = {"a.weight": torch.randn(2, 3), "b": torch.arange(4.0)}
        save_checkpoint(tmp_path / "c.npz", tensors, {"mode": "x"})
        loaded, meta = load_checkpoint(tmp_path / "c.npz")
        assert meta["mode"] == "x" and meta["format_version"] == 1
        for k, v in tensors.items():
            assert torch.equal(loaded[k], v)

    def test_version_check(self, tmp_path):
        import json

        np.savez(tmp_path / "c.npz", __meta__=np.array(json.dumps({"format_version": 99})))
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "c.npz")
