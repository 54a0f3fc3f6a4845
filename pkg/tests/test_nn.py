import numpy as np
import pytest

from nightvis import tensor as T
from nightvis.errors import ConfigError, ShapeError, StateError
from nightvis.nn import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    SEBlock,
    attention_weights,
    discriminator_forward,
    generator_forward,
    se_forward,
)


def zero_se(se):
    for p in se.parameters():
        p.value[...] = 0


def small_gen(cin=5, **kw):
    kw.setdefault("filters", (4, 8))
    return Generator(GeneratorConfig(cin, **kw), seed=0)


# ----------------------------------------------------------------- SEBlock


def test_se_zero_weights_halve_input():
    se = SEBlock(6, reduction=2)
    zero_se(se)
    x = np.random.default_rng(0).normal(size=(2, 6, 4, 4)).astype(np.float32)
    out, w = se_forward(se, x)
    np.testing.assert_array_equal(w.value, np.full((2, 6), 0.5, dtype=np.float32))
    np.testing.assert_array_equal(out.value, x / 2)


def test_se_constant_channel_descriptor():
    x = np.random.default_rng(0).normal(size=(1, 3, 5, 5))
    x[0, 2] = 4.25
    pooled = T.global_avg_pool(T.Tensor(x)).value
    assert pooled[0, 2, 0, 0] == 4.25


def test_se_83_channels():
    se = SEBlock(83, reduction=4)
    assert se.hidden == 20
    x = np.random.default_rng(0).normal(size=(1, 83, 8, 8)).astype(np.float32)
    out, w = se(T.Tensor(x))
    assert w.shape == (1, 83)
    assert se.last_weights.shape == (1, 83)


def test_se_output_is_input_times_weights():
    se = SEBlock(7, reduction=2, rng=np.random.default_rng(3))
    for p in se.parameters():
        p.value[...] = np.random.default_rng(4).normal(size=p.shape)
    x = np.random.default_rng(1).normal(size=(3, 7, 4, 4)).astype(np.float32)
    out, w = se(T.Tensor(x))
    assert np.all((w.value >= 0) & (w.value <= 1))
    np.testing.assert_allclose(out.value, x * w.value[:, :, None, None], atol=1e-6)


def test_se_channel_mismatch():
    with pytest.raises(ShapeError):
        SEBlock(4)(T.Tensor(np.zeros((1, 5, 2, 2))))


def test_se_single_layer_variant():
    se = SEBlock(5, single_layer=True)
    names = [n for n, _ in se.named_parameters()]
    assert names == ["fc.weight", "fc.bias"]
    zero_se(se)
    _, w = se(T.Tensor(np.ones((1, 5, 2, 2))))
    np.testing.assert_array_equal(w.value, 0.5)


def test_se_reduction_bounds():
    with pytest.raises(ConfigError):
        SEBlock(4, reduction=0)
    assert 1 <= SEBlock(3, reduction=4).hidden <= 3


# --------------------------------------------------------------- generator


def test_generator_default_shape_contract():
    g = Generator(GeneratorConfig(83), seed=0)
    x = np.random.default_rng(0).normal(size=(2, 83, 64, 64)).astype(np.float32)
    out = generator_forward(g, x, training=False)
    assert out.shape == (2, 3, 64, 64)
    assert np.all(np.abs(out.value) < 1)


def test_generator_inference_deterministic():
    g = small_gen()
    x = np.random.default_rng(0).normal(size=(2, 5, 8, 8)).astype(np.float32)
    a = generator_forward(g, x, training=False).value
    b = generator_forward(g, x, training=False).value
    assert a.tobytes() == b.tobytes()


def test_generator_training_dropout_is_stochastic():
    g = Generator(GeneratorConfig(5, filters=(4, 8, 8), dropout_rate=0.5), seed=0)
    x = np.random.default_rng(0).normal(size=(2, 5, 16, 16)).astype(np.float32)
    rng = np.random.default_rng(1)
    a = generator_forward(g, x, training=True, rng=rng).value
    b = generator_forward(g, x, training=True, rng=rng).value
    assert not np.array_equal(a, b)


def test_generator_rejects_indivisible_extent():
    g = small_gen()
    with pytest.raises(ConfigError):
        g.eval()(np.zeros((1, 5, 6, 8), dtype=np.float32))


def test_generator_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        small_gen().eval()(np.zeros((1, 4, 8, 8), dtype=np.float32))


def test_skip_symmetry_default():
    g = Generator(GeneratorConfig(21), seed=0)
    f = g.config.filters
    n = g.depth
    for j, (concat_in, upsampled, mirrored) in enumerate(g.skip_table):
        level = j + 1  # decoder level receiving the concatenation
        conv, _ = g.decoders[level]
        assert conv.weight.shape[0] == concat_in == upsampled + mirrored
        enc_conv, _ = g.encoders[n - 1 - level]
        assert mirrored == enc_conv.weight.shape[0] == f[n - 1 - level]
    # output head
    assert g.decoders[-1][0].weight.shape[1] == 3


def test_generator_noise_channel_option():
    g = Generator(GeneratorConfig(5, filters=(4, 8), noise_channel=True), seed=0)
    assert g.se.channels == 6
    x = np.zeros((1, 5, 8, 8), dtype=np.float32)
    a = g.eval()(x).value
    b = g.eval()(x).value
    assert np.array_equal(a, b)
    rep = attention_weights(g, [f"c{i}" for i in range(5)])
    assert rep.channels[-1][0] == "z-noise"


def test_gradient_reaches_every_generator_parameter():
    from nightvis.training import LossConfig, generator_loss

    g = Generator(GeneratorConfig(4, filters=(4, 8, 8)), seed=0)
    d = Discriminator(DiscriminatorConfig(4, filters=(4, 8)), seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 4, 16, 16)).astype(np.float32)
    y = rng.uniform(-1, 1, size=(2, 3, 16, 16)).astype(np.float32)
    fake = generator_forward(g, x, training=True, rng=rng)
    loss = generator_loss(d(x, fake), y, fake, LossConfig())
    loss.backward()
    for name, p in g.named_parameters():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name


# ----------------------------------------------------------- discriminator


def test_discriminator_shape_and_codomain():
    d = Discriminator(DiscriminatorConfig(83), seed=0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 83, 64, 64)).astype(np.float32)
    y = rng.normal(size=(4, 3, 64, 64)).astype(np.float32)
    out = discriminator_forward(d, x, y)
    assert out.shape == (4, 1)
    assert np.all((out.value > 0) & (out.value < 1))
    assert d.input_channels == 86
    assert d.layers[0][0].weight.shape[1] == 86


def test_discriminator_shape_mismatch():
    d = Discriminator(DiscriminatorConfig(2, filters=(4,)), seed=0)
    with pytest.raises(ShapeError):
        d(np.zeros((2, 2, 8, 8)), np.zeros((2, 3, 4, 4)))
    with pytest.raises(ShapeError):
        d(np.zeros((2, 2, 8, 8)), np.zeros((1, 3, 8, 8)))


def test_discriminator_learns_separable_toy_data():
    from nightvis.training import Adam, discriminator_loss

    d = Discriminator(DiscriminatorConfig(1, filters=(4, 8)), seed=0)
    opt = Adam(d.parameters())
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 1, 8, 8)).astype(np.float32)
    real = np.tile(np.linspace(-1, 1, 8, dtype=np.float32), (8, 3, 8, 1))
    fake = rng.uniform(-1, 1, size=(8, 3, 8, 8)).astype(np.float32)
    for _ in range(60):
        d.zero_grad()
        discriminator_loss(d(x, real), d(x, fake)).backward()
        opt.step()
    d.eval()
    assert d(x, real).value.mean() > d(x, fake).value.mean()


# ------------------------------------------------------------ attention


def test_attention_report_requires_forward():
    with pytest.raises(StateError):
        attention_weights(small_gen(), [f"c{i}" for i in range(5)])


def test_attention_report_zero_weights_and_grouping():
    g = small_gen(cin=5)
    zero_se(g.se)
    g.eval()(np.random.default_rng(0).normal(size=(1, 5, 8, 8)).astype(np.float32))
    names = ["Temperature@850hPa", "Temperature@500hPa", "Skin temperature", "CH11", "CH12"]
    cats = ["nwp_multilevel", "nwp_multilevel", "nwp_singlelevel", "infrared", "infrared"]
    rep = attention_weights(g, names, cats)
    assert [n for n, _, _ in rep.channels] == names
    assert all(w == 0.5 for _, _, w in rep.channels)
    assert [e for _, e, _ in rep.elements] == ["Temperature", "Skin temperature", "CH11", "CH12"]
    assert rep.rows()[0] == ("Temperature", 0.5)
    assert set(rep.categories) == {"nwp_multilevel", "nwp_singlelevel", "infrared"}
    text = rep.to_text()
    assert "CH11\t0.5000" in text


def test_attention_report_label_count_mismatch():
    g = small_gen()
    g.eval()(np.zeros((1, 5, 8, 8), dtype=np.float32))
    with pytest.raises(ShapeError):
        attention_weights(g, ["a", "b"])
