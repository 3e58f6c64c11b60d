import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeatconv import neuron, spk
from spikeatconv import tensor as tn
from spikeatconv.errors import ConfigError, ShapeError
from spikeatconv.neuron import LIFParams
from spikeatconv.tensor import Tensor


def block(variant, channels=4, spatial=True, seed=0, **kwargs):
    cfg = spk.make_config(variant, channels, **kwargs)
    return spk.SpkBlock(cfg, np.random.default_rng(seed), spatial=spatial)


def spatial_input(r, T=2, N=2, C=4, H=4, W=4, scale=2.0):
    return Tensor(r.normal(0.3, scale, (T, N, C, H, W)))


class TestConfig:
    def test_mbpl_duplicate_thresholds(self):
        with pytest.raises(ConfigError):
            spk.make_config("mbpl", 4, thresholds=(1.0, 1.0))

    def test_mbpl_must_increase(self):
        with pytest.raises(ConfigError):
            spk.make_config("mbpl", 4, thresholds=(2.0, 1.0))

    def test_branch_limit(self):
        with pytest.raises(ConfigError):
            spk.make_config("mbpl", 4, thresholds=tuple(0.5 * i for i in range(1, 10)))

    @pytest.mark.parametrize("variant", ["hsl", "dcl"])
    def test_odd_channels(self, variant):
        with pytest.raises(ConfigError):
            spk.make_config(variant, 5)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            spk.make_config("xyz", 4)

    def test_branch_counts(self):
        with pytest.raises(ConfigError):
            spk.SpkBlockConfig("rl", (LIFParams(),), 4)

    def test_paper_best_setting(self):
        cfg = spk.make_config("mbpl", 8)
        assert [b.v_threshold for b in cfg.branches] == [0.2, 1.0, 2.0, 4.0]
        assert all(b.tau == 2.0 for b in cfg.branches)

    def test_dcl_on_tokens_rejected(self):
        with pytest.raises(ConfigError):
            block("dcl", spatial=False)


class TestBinarity:
    """1000 randomized inputs per variant."""

    @pytest.mark.parametrize("variant,allowed", [
        ("sl", {0.0, 1.0}), ("hsl", {0.0, 1.0}), ("dcl", {0.0, 1.0}), ("rl", {0.0, 1.0, 2.0})])
    def test_value_sets(self, variant, allowed):
        r = np.random.default_rng(11)
        b = block(variant)
        for i in range(1000):
            T = int(r.integers(1, 4))
            x = spatial_input(r, T=T, N=1, scale=float(r.uniform(0.5, 5)))
            assert set(np.unique(b(x).data)) <= allowed

    def test_mbpl_sum_mode_counts_branches(self):
        r = np.random.default_rng(12)
        b = block("mbpl", convnext_inner=False)
        n = len(b.cfg.branches)
        for _ in range(1000):
            x = spatial_input(r, T=int(r.integers(1, 4)), N=1, scale=float(r.uniform(0.5, 5)))
            out = b(x).data
            assert set(np.unique(out)) <= set(float(k) for k in range(n + 1))
            brute = sum(neuron.lif_sequence(p, x).data for p in b.cfg.branches)
            np.testing.assert_array_equal(out, brute)


class TestForwardForms:
    def test_zero_input_gives_zero(self):
        x = Tensor(np.zeros((2, 1, 4, 3, 3)))
        for variant in ("sl", "rl", "hsl"):
            assert not block(variant)(x).data.any()
        assert not block("mbpl", convnext_inner=False)(x).data.any()

    def test_dcl_zero_input_zero_weights(self):
        b = block("dcl")
        b.conv3.weight.data[...] = 0
        b.conv5.weight.data[...] = 0
        assert not b(Tensor(np.zeros((1, 1, 4, 5, 5)))).data.any()

    def test_sl_equals_lif_sequence(self, rng):
        x = spatial_input(rng)
        cfg = spk.make_config("sl", 4)
        np.testing.assert_array_equal(spk.sl_forward(cfg, x).data,
                                      neuron.lif_sequence(cfg.branches[0], x).data)

    def test_rl_decomposition(self, rng):
        cfg = spk.make_config("rl", 4)
        x = spatial_input(rng, T=4)
        out = spk.rl_forward(cfg, x).data
        s1 = neuron.lif_sequence(cfg.branches[0], x).data
        assert set(np.unique(out - s1)) <= {0.0, 1.0}

    def test_rl_case_enumeration(self):
        # tau=1 makes H equal the input, so the second neuron (threshold 0.5) fires on every s1 spike.
        cfg = spk.make_config("rl", 1, thresholds=(1.0, 0.5), tau=1.0)
        x = Tensor(np.array([[0.0, 0.5, 1.0, 3.0]]))
        np.testing.assert_array_equal(spk.rl_forward(cfg, x).data, [[0.0, 0.0, 2.0, 2.0]])
        cfg = spk.make_config("rl", 1, thresholds=(1.0, 1.5), tau=1.0)
        np.testing.assert_array_equal(spk.rl_forward(cfg, x).data, [[0.0, 0.0, 1.0, 1.0]])

    def test_rl_default_second_neuron_silent_at_t1(self, rng):
        # Binary input can lift H to at most 1/tau = 0.5 in one step, below threshold 2.
        cfg = spk.make_config("rl", 4)
        x = spatial_input(rng, T=1, scale=10.0)
        np.testing.assert_array_equal(spk.rl_forward(cfg, x).data, spk.sl_forward(spk.make_config("sl", 4), x).data)

    def test_hsl_degenerate_equals_sl(self, rng):
        x = spatial_input(rng)
        hsl = spk.make_config("hsl", 4, thresholds=(1.0, 1.0))
        sl = spk.make_config("sl", 4)
        np.testing.assert_array_equal(spk.hsl_forward(hsl, x, 2).data, spk.sl_forward(sl, x).data)

    def test_hsl_first_half(self, rng):
        x = spatial_input(rng)
        cfg = spk.make_config("hsl", 4)
        out = spk.hsl_forward(cfg, x, 2).data
        ref = neuron.lif_sequence(cfg.branches[0], Tensor(x.data[:, :, :2])).data
        np.testing.assert_array_equal(out[:, :, :2], ref)

    def test_hsl_odd_channels(self):
        with pytest.raises(ShapeError):
            spk.hsl_forward(spk.make_config("hsl", 0), Tensor(np.zeros((1, 3))), -1)

    def test_dcl_needs_spatial(self):
        cfg = spk.make_config("dcl", 4)
        b = block("dcl")
        with pytest.raises(ShapeError):
            spk.dcl_forward(cfg, Tensor(np.zeros((1, 2, 4))), b.conv3, b.conv5)

    def test_variant_mismatch(self, rng):
        with pytest.raises(ConfigError):
            spk.rl_forward(spk.make_config("sl", 4), spatial_input(rng))

    @pytest.mark.parametrize("variant", spk.VARIANTS)
    def test_shape_preserved(self, rng, variant):
        x = spatial_input(rng)
        assert block(variant)(x).shape == x.shape

    @pytest.mark.parametrize("variant", ["sl", "rl", "mbpl", "hsl"])
    def test_token_inputs(self, rng, variant):
        x = Tensor(rng.normal(0, 2, (2, 3, 5, 4)))
        assert block(variant, spatial=False)(x).shape == x.shape

    def test_channel_check(self, rng):
        with pytest.raises(ShapeError):
            block("sl", channels=8)(spatial_input(rng))

    def test_rate_recorded(self, rng):
        b = block("mbpl")
        b(spatial_input(rng))
        assert 0.0 <= b.last_rate <= 1.0


class TestGradientFlow:
    @pytest.mark.parametrize("variant", spk.VARIANTS)
    def test_upstream_gradient_nonzero(self, rng, variant):
        x = spatial_input(rng)
        w = Tensor(np.ones((4, 4, 1, 1)) * 0.5 + rng.standard_normal((4, 4, 1, 1)) * 0.1, requires_grad=True)
        pre = tn.conv2d(x.reshape(-1, 4, 4, 4), w).reshape(x.shape)
        tn.backward(tn.sum(block(variant)(pre)))
        assert w.grad is not None and np.abs(w.grad).sum() > 0

    def test_spike_free_is_gelu(self, rng):
        act = spk.build(spk.make_config("sl", 4), rng, spike_free=True)
        x = spatial_input(rng)
        np.testing.assert_array_equal(act(x).data, tn.gelu(x).data)


@given(st.integers(0, 2**31 - 1))
def test_mbpl_threshold_ordering_gives_nested_spikes(seed):
    x = spatial_input(np.random.default_rng(seed), T=1)
    cfg = spk.make_config("mbpl", 4)
    spikes = [neuron.lif_sequence(p, x).data for p in cfg.branches]
    for lo, hi in zip(spikes, spikes[1:]):
        assert (hi <= lo).all()
