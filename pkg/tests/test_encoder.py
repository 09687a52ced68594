import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from htencoder import nn
from htencoder.config import HtEncoderConfig, ModelConfig, ModelVariant, tiny
from htencoder.corpus import Example, Vocab, RESERVED, make_batch
from htencoder.encoder import (
    convert_standard_encoder,
    encode,
    init_encoder,
    init_standard_encoder,
    standard_encode,
)
from htencoder.equivalence import encode_alone, equivalence_case, run_equivalence
from htencoder.errors import ConfigError, ConversionError, DimensionError
from htencoder.masking import CtScheme, build_layout, global_pe
from htencoder.models import DialogModel
from htencoder.nn import ParameterStore
from htencoder.tensor import Tensor, no_grad


def enc_cfg(m, n, h=8, scheme=CtScheme.HIER, reinject=True, embed=None):
    return HtEncoderConfig(m_shared=m, n_context=n, hidden=h, heads=2, embed=embed or h, ffn_inner=2 * h,
                           dropout=0.0, ct_scheme=scheme, pe_reinjection=reinject)


def run(x, lengths, cfg, store):
    with no_grad():
        return encode(Tensor(x), build_layout(lengths), cfg, store, capture=True)


def standard(num_layers, h=8, seed=0):
    store = ParameterStore()
    init_standard_encoder(store, num_layers, h, 2 * h, np.random.default_rng(seed))
    return store


class TestHierarchicalEquivalence:
    def test_random_layouts(self):
        assert run_equivalence(cases=25, seed=1) < 1e-9

    def test_n_zero_whole_output(self):
        rng = np.random.default_rng(2)
        cfg = enc_cfg(2, 0)
        store = ParameterStore()
        init_encoder(store, cfg, rng)
        lengths = [3, 1, 4]
        x = rng.normal(size=(8, 8))
        out = run(x, lengths, cfg, store).hidden.data
        start = 0
        for n in lengths:
            with no_grad():
                alone = encode_alone(x[start : start + n], cfg, store)
            assert np.abs(out[start : start + n] - alone).max() < 1e-9
            start += n

    def test_zero_length_utterance(self):
        assert equivalence_case(np.random.default_rng(3), [0, 1, 2], 8, 2, 1) < 1e-9

    def test_corruption_is_detected(self):
        assert run_equivalence(cases=3, seed=0, corrupt=True) > 1e-3


class TestReductions:
    def test_m_zero_full_equals_standard(self):
        rng = np.random.default_rng(4)
        std = standard(2)
        conv = convert_standard_encoder(std, 0, 2)
        x = rng.normal(size=(7, 8))
        out = run(x, [2, 3, 2], enc_cfg(0, 2, scheme=CtScheme.FULL), conv).hidden.data
        with no_grad():
            ref = standard_encode(Tensor(x), 2, 2, std).data
        assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_single_utterance_without_reinjection_equals_standard(self):
        rng = np.random.default_rng(5)
        std = standard(2)
        conv = convert_standard_encoder(std, 1, 1)
        x = rng.normal(size=(5, 8))
        with no_grad():
            ref = standard_encode(Tensor(x), 2, 2, std).data
        for scheme in (CtScheme.HIER, CtScheme.FULL):
            out = run(x, [5], enc_cfg(1, 1, scheme=scheme, reinject=False), conv).hidden.data
            assert_allclose(out, ref, rtol=0, atol=1e-12)
        # the CLS row may only see CLS positions, i.e. itself; every other row matches
        out = run(x, [5], enc_cfg(1, 1, scheme=CtScheme.HIER_CLS, reinject=False), conv).hidden.data
        assert_allclose(out[1:], ref[1:], rtol=0, atol=1e-12)
        assert np.abs(out[0] - ref[0]).max() > 1e-6

    def test_single_utterance_with_reinjection(self):
        # global PE is added again between the two phases
        rng = np.random.default_rng(6)
        std = standard(2)
        conv = convert_standard_encoder(std, 1, 1)
        x = rng.normal(size=(5, 8))
        ones = np.ones((5, 5), bool)
        pe = global_pe(5, 8)
        with no_grad():
            h = nn.encoder_layer(Tensor(x + pe), ones, 2, std, "enc.layer0")
            ref = nn.encoder_layer(h + Tensor(pe), ones, 2, std, "enc.layer1").data
        out = run(x, [5], enc_cfg(1, 1), conv).hidden.data
        assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_masks_bind_with_two_utterances(self):
        rng = np.random.default_rng(7)
        std = standard(2)
        conv = convert_standard_encoder(std, 1, 1)
        x = rng.normal(size=(6, 8))
        with no_grad():
            ref = standard_encode(Tensor(x), 2, 2, std).data
        out = run(x, [3, 3], enc_cfg(1, 1, scheme=CtScheme.FULL, reinject=False), conv).hidden.data
        assert np.abs(out - ref).max() > 1e-3

    def test_hier_without_context_equals_set(self):
        a = DialogModel(tiny("HIER", n_context=0), seed=3)
        b = DialogModel(tiny("SET"), seed=3)
        batch = small_batch("HIER")
        with no_grad():
            assert_array_equal(a.encode(batch).hidden.data, b.encode(batch).hidden.data)

    def test_hier_without_shared_equals_mat(self):
        a = DialogModel(tiny("HIER", m_shared=0), seed=3)
        b = DialogModel(tiny("MAT"), seed=3)
        batch = small_batch("HIER")
        with no_grad():
            assert_array_equal(a.encode(batch).hidden.data, b.encode(batch).hidden.data)


def small_batch(variant, context=(("a", "b", "c"), ("d", "e"), ("f",))):
    vocab = Vocab(list(RESERVED) + list("abcdefghijklmno"))
    ex = Example("d", 5, [list(u) for u in context], ["a", "b"], ["c"], ["inform"])
    return make_batch([ex], vocab, variant, act_labels=["inform", "request", "food", "area", "hotel", "bye"])


class TestConversion:
    def test_relabel_only(self):
        std = standard(2)
        conv = convert_standard_encoder(std, 1, 1)
        assert sorted(conv.names()) == sorted(
            n.replace("enc.layer0", "enc.shared.layer0").replace("enc.layer1", "enc.context.layer0") for n in std.names()
        )
        for name, p in std.items():
            new = name.replace("enc.layer0", "enc.shared.layer0").replace("enc.layer1", "enc.context.layer0")
            assert conv[new] is p

    @pytest.mark.parametrize("m,n", [(1, 2), (3, 0), (0, 1)])
    def test_layer_count_mismatch(self, m, n):
        with pytest.raises(ConversionError):
            convert_standard_encoder(standard(2), m, n)


class TestEncoderLayer:
    def layer(self, seed=0):
        store = ParameterStore()
        nn.init_encoder_layer(store, "l", 8, 16, np.random.default_rng(seed))
        return store

    def test_identity_mask_locality(self):
        store = self.layer()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 8))
        base = nn.encoder_layer(Tensor(x), np.eye(4, dtype=bool), 2, store, "l").data
        x2 = x.copy()
        x2[2] += 5.0
        moved = nn.encoder_layer(Tensor(x2), np.eye(4, dtype=bool), 2, store, "l").data
        assert_array_equal(np.delete(moved, 2, axis=0), np.delete(base, 2, axis=0))
        assert not np.allclose(moved[2], base[2])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**31 - 1))
    def test_permutation_equivariance(self, n, seed):
        store = self.layer(seed % 7)
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 8))
        mask = rng.random((n, n)) < 0.5
        mask[np.arange(n), np.arange(n)] = True
        p = rng.permutation(n)
        out = nn.encoder_layer(Tensor(x), mask, 2, store, "l").data
        perm = nn.encoder_layer(Tensor(x[p]), mask[np.ix_(p, p)], 2, store, "l").data
        assert_allclose(perm, out[p], rtol=0, atol=1e-12)

    def test_degenerate_weights_give_normalised_residual(self):
        store = self.layer()
        for name, t in store.items():
            if ".attn." in name or ".ffn." in name:
                t.data[...] = 0.0
        x = np.random.default_rng(2).normal(size=(3, 8))
        out = nn.encoder_layer(Tensor(x), np.ones((3, 3), bool), 2, store, "l").data
        mu, sd = x.mean(1, keepdims=True), x.std(1, keepdims=True)
        assert_allclose(out, (x - mu) / sd, atol=1e-4)


class TestEncoderProperties:
    def setup_model(self, m=1, n=1, seed=0, scheme=CtScheme.HIER):
        cfg = enc_cfg(m, n, scheme=scheme)
        store = ParameterStore()
        init_encoder(store, cfg, np.random.default_rng(seed))
        return cfg, store

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=2, max_size=4), st.integers(0, 2**31 - 1))
    def test_no_cross_utterance_leakage(self, lengths, seed):
        cfg, store = self.setup_model(m=2, seed=seed % 5)
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(sum(lengths), 8))
        lay = build_layout(lengths)
        j = int(rng.integers(len(lengths)))
        x2 = x.copy()
        x2[lay.utt_index == j] += rng.normal(size=(lengths[j], 8))
        a = run(x, lengths, cfg, store).phase1.data
        b = run(x2, lengths, cfg, store).phase1.data
        keep = lay.utt_index != j
        assert_array_equal(a[keep], b[keep])

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=2, max_size=4), st.integers(0, 2**31 - 1))
    def test_utterance_reordering_permutes_phase1(self, lengths, seed):
        cfg, store = self.setup_model(m=2, seed=seed % 5)
        rng = np.random.default_rng(seed)
        blocks = [rng.normal(size=(n, 8)) for n in lengths]
        order = rng.permutation(len(lengths))
        a = run(np.concatenate(blocks), lengths, cfg, store).phase1.data
        b = run(np.concatenate([blocks[i] for i in order]), [lengths[i] for i in order], cfg, store).phase1.data
        starts = np.concatenate([[0], np.cumsum(lengths)])
        new_starts = np.concatenate([[0], np.cumsum([lengths[i] for i in order])])
        for k, i in enumerate(order):
            assert_allclose(b[new_starts[k] : new_starts[k + 1]], a[starts[i] : starts[i + 1]], rtol=0, atol=1e-12)

    def test_hier_versus_full_witness(self):
        cfg_h, store = self.setup_model()
        cfg_f = enc_cfg(1, 1, scheme=CtScheme.FULL)
        x = np.random.default_rng(8).normal(size=(6, 8))
        assert np.abs(run(x, [2, 2, 2], cfg_h, store).hidden.data
                      - run(x, [2, 2, 2], cfg_f, store).hidden.data).max() > 1e-6
        assert_array_equal(run(x, [6], cfg_h, store).hidden.data, run(x, [6], cfg_f, store).hidden.data)

    def test_set_model_encodes_utterances_independently(self):
        model = DialogModel(tiny("SET"), seed=1)
        ctx = (("a", "b", "c"), ("d", "e"))
        with no_grad():
            together = model.encode(small_batch("SET", ctx)).hidden.data[0]
            first = model.encode(small_batch("SET", ctx[:1])).hidden.data[0]
            second = model.encode(small_batch("SET", ctx[1:])).hidden.data[0]
        assert_allclose(together[:3], first, rtol=0, atol=1e-12)
        assert_allclose(together[3:], second, rtol=0, atol=1e-12)

    def test_input_projection_when_widths_differ(self):
        cfg = enc_cfg(1, 1, embed=6)
        store = ParameterStore()
        init_encoder(store, cfg, np.random.default_rng(0))
        assert store["enc.in_proj.W"].shape == (6, 8)
        out = run(np.ones((3, 6)), [1, 2], cfg, store)
        assert out.hidden.shape == (3, 8)

    def test_length_mismatch(self):
        cfg, store = self.setup_model()
        with pytest.raises(DimensionError):
            run(np.ones((4, 8)), [2, 3], cfg, store)
        with pytest.raises(DimensionError):
            run(np.ones((5, 6)), [2, 3], cfg, store)


class TestConfigValidation:
    def test_needs_a_layer(self):
        with pytest.raises(ConfigError):
            enc_cfg(0, 0).validate()

    def test_heads_divide_hidden(self):
        with pytest.raises(ConfigError):
            HtEncoderConfig(1, 1, hidden=10, heads=4, embed=10, ffn_inner=8).validate()

    def test_negative_layers(self):
        with pytest.raises(ConfigError):
            enc_cfg(-1, 2).validate()
