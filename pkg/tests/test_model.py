import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeatconv import model, spk, train
from spikeatconv import tensor as tn
from spikeatconv.errors import ConfigError, GeometryError
from spikeatconv.tensor import Tensor


@pytest.fixture(scope="module")
def nano():
    return model.build(model.preset("nano"))


def images(n=2, seed=0, res=64):
    return np.random.default_rng(seed).normal(size=(n, 3, res, res)).astype(np.float32)


class TestPresets:
    def test_paper_sizes(self):
        assert model.preset("tiny").dims == (64, 128, 256, 512)
        assert model.preset("tiny").depths == (1, 3, 6, 1)
        assert model.preset("base").dims == (128, 256, 512, 1024)
        assert model.preset("base").depths == (2, 6, 12, 2)
        assert model.preset("large").dims == (160, 320, 640, 1280)
        assert model.preset("large").depths == (2, 6, 16, 2)

    def test_nano(self):
        cfg = model.preset("nano")
        assert (cfg.dims, cfg.depths, cfg.resolution, cfg.window, cfg.grid) == (
            (16, 32, 64, 128), (1, 1, 2, 1), 64, 2, 2)
        assert cfg.stage_sizes == (16, 8, 4, 2)

    def test_param_count_ordering(self):
        counts = [model.param_count(model.preset(n)) for n in ("tiny", "base", "large")]
        assert counts[0] < counts[1] < counts[2]

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            model.preset("huge")


class TestConfig:
    @pytest.mark.parametrize("changes", [
        dict(resolution=48), dict(dims=(16, 32, 64)), dict(T=0), dict(classes=1), dict(depths=(1, 0, 1, 1)),
        dict(head_dim=6), dict(window=3), dict(spk="xyz"), dict(spk="mbpl", thresholds=(2.0, 1.0)),
        dict(attn="linear"), dict(tau=0.0),
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            model.preset("nano", **changes)

    @settings(max_examples=25)
    @given(T=st.integers(1, 8), tau=st.floats(0.1, 10), spk_variant=st.sampled_from(["sl", "mbpl", "hsl"]),
           attn=st.sampled_from(["sisa", "bdsa"]), seed=st.integers(0, 2**31), softmax=st.booleans())
    def test_text_round_trip(self, T, tau, spk_variant, attn, seed, softmax):
        cfg = model.preset("nano", T=T, tau=tau, spk=spk_variant, attn=attn, seed=seed, use_softmax=softmax)
        assert model.ModelConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            model.ModelConfig.from_text("[model]\nwidth = 3\n")


class TestForward:
    def test_logits_finite(self, nano):
        with tn.no_grad():
            logits = nano(images())
        assert logits.shape == (2, 10)
        assert np.isfinite(logits.data).all()

    def test_rates_in_unit_interval(self, nano):
        rows = model.spike_rate_report(nano, images())
        assert len(rows) == len(model.spike_sites(nano))
        assert all(0.0 <= r <= 1.0 for _, r in rows)
        assert model.format_rate_report(rows).splitlines()[0].startswith("site")

    def test_resolution_mismatch(self, nano):
        with pytest.raises(GeometryError):
            nano(images(res=32))

    def test_forward_is_read_only(self, nano):
        before = nano.state_dict()
        with tn.no_grad():
            nano(images())
        for k, v in nano.state_dict().items():
            np.testing.assert_array_equal(v, before[k])

    def test_forward_deterministic(self, nano):
        with tn.no_grad():
            a, b = nano(images()).data, nano(images()).data
        np.testing.assert_array_equal(a, b)


class TestBuild:
    def test_same_seed_identical(self):
        a = model.build(model.preset("nano", seed=3)).state_dict()
        b = model.build(model.preset("nano", seed=3)).state_dict()
        c = model.build(model.preset("nano", seed=4)).state_dict()
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_parameter_names(self, nano):
        names = [n for n, _ in nano.named_parameters()]
        assert "stage2.block1.convnext.pw2.weight" in names
        assert "stage0.block0.grid_attn.qkv.weight" in names
        assert "stage3.down.conv.weight" in names
        assert "head.fc.weight" in names
        assert all(n.split(".")[0] in {"stem", "stage0", "stage1", "stage2", "stage3", "head"} for n in names)

    @pytest.mark.parametrize("changes", [dict(spike_free=True), dict(spk="dcl"), dict(attn="bdsa"),
                                         dict(spk="rl", T=2), dict(spk="hsl", attn_spk="mbpl")])
    def test_variants_run(self, changes):
        net = model.build(model.preset("nano", **changes))
        with tn.no_grad():
            assert np.isfinite(net(images(1)).data).all()
        if changes.get("spike_free"):
            assert not model.spike_sites(net)

    def test_zero_grad_fraction(self):
        net = model.build(model.preset("nano", zero_init_residual=False))
        loss = train.smoothed_ce(net(images(4)), np.array([0, 1, 2, 3]), 0.1)
        tn.backward(loss)
        total = sum(p.size for p in net.parameters())
        zero = sum(int((p.grad == 0).sum()) if p.grad is not None else p.size for p in net.parameters())
        assert zero / total < 0.5
