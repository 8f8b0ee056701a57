import numpy as np
import pytest

from vfl.data import DatasetConfig, generate_dataset, to_batch
from vfl.models import (AttentionSystem, AutoencoderClassifier, ClassifierSystem, CoAttention,
                        Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
                        assign_parameters, autoencoder_forward, coattention_forward,
                        discriminator_forward, generator_forward, load_checkpoint,
                        save_checkpoint)
from vfl.nn import InitMode, ShapeError


def _zero(params):
    for p in params:
        p.data = np.zeros_like(p.data)


def _gen(arch="simp", noise="N0", noise_dim=4, d_f=8, K=5, seed=0):
    spec = GeneratorSpec(arch, noise, noise_dim, K, InitMode("I2", seed), hidden=(6, 6, 6))
    return Generator(spec, d_f, np.random.default_rng(seed))


# --------------------------------------------------------------- generator
def test_simp_zero_weights_gives_bias():
    gen = _gen()
    layer = gen.net.layers[0]
    layer.weight.data[:] = 0
    layer.bias.data = np.arange(5.0)
    out = generator_forward(gen, np.random.default_rng(0).standard_normal((3, 8))).data
    assert np.array_equal(out, np.tile(np.arange(5.0), (3, 1)))


def test_n1_input_dim():
    assert _gen(noise="N1", noise_dim=4, d_f=8).in_dim == 12
    assert _gen(noise="N2", d_f=8).in_dim == 8


def test_n2_determinism_and_noise_sensitivity():
    gen = _gen("full", "N2")
    fused = np.ones((2, 8))
    a = generator_forward(gen, fused, np.random.default_rng(1)).data
    b = generator_forward(gen, fused, np.random.default_rng(1)).data
    c = generator_forward(gen, fused, np.random.default_rng(2)).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_generator_dim_mismatch_and_missing_rng():
    with pytest.raises(ShapeError):
        generator_forward(_gen(), np.ones(7))
    with pytest.raises(ValueError):
        generator_forward(_gen(noise="N1"), np.ones(8))


def test_bad_generator_spec():
    with pytest.raises(ValueError):
        GeneratorSpec(arch="deep")
    with pytest.raises(ValueError):
        GeneratorSpec(noise_mode="N3")


# ----------------------------------------------------------- discriminator
def _disc(std=0.1, seed=0):
    spec = DiscriminatorSpec((6, 4), input_noise_std=std, init=InitMode("I2", seed))
    return Discriminator(spec, 5, 3, np.random.default_rng(seed))


def test_zero_final_layer_gives_half():
    d = _disc()
    final = d.net.layers[-1]
    final.weight.data[:] = 0
    final.bias.data[:] = 0
    out = discriminator_forward(d, np.ones((4, 5)), np.ones((4, 3))).data
    assert out.shape == (4,)
    assert np.allclose(out, 0.5)


def test_eval_mode_is_deterministic():
    d = _disc()
    a, c = np.random.default_rng(1).standard_normal((2, 5)), np.ones((2, 3))
    assert np.array_equal(d.forward(a, c).data, d.forward(a, c).data)


def test_train_noise_variance_shrinks_with_sigma():
    d = _disc(seed=3)
    a, c = np.random.default_rng(1).standard_normal((1, 5)), np.ones((1, 3))
    spreads = []
    for std in (1.0, 0.1, 0.01):
        rng = np.random.default_rng(4)
        outs = [discriminator_forward(d, a, c, rng, train=True, noise_std=std).data[0]
                for _ in range(200)]
        spreads.append(np.std(outs))
    assert spreads[0] > spreads[1] > spreads[2] > 0


def test_discriminator_output_strictly_inside_unit_interval():
    d = _disc()
    d.net.layers[-1].bias.data[:] = 1e6
    out = d.forward(np.ones((1, 5)), np.ones((1, 3))).data
    assert 0 < out[0] < 1


def test_discriminator_dim_mismatch():
    with pytest.raises(ShapeError):
        _disc().forward(np.ones((1, 4)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        DiscriminatorSpec(input_noise_std=-1)


# ------------------------------------------------------------- autoencoder
def test_autoencoder_zero_weights():
    ae = AutoencoderClassifier(6, 3, 4, (5,), "I2", np.random.default_rng(0))
    _zero(ae.parameters())
    ae.decoder.bias.data = np.arange(6.0)
    code, recon, scores = autoencoder_forward(ae, np.ones((2, 6)))
    assert np.array_equal(code.data, np.zeros((2, 3)))
    assert np.array_equal(recon.data, np.tile(np.arange(6.0), (2, 1)))
    assert scores.shape == (2, 4)


@pytest.mark.parametrize("code_dim", [0, 6, 9])
def test_autoencoder_code_dim_must_be_a_bottleneck(code_dim):
    with pytest.raises(ValueError):
        AutoencoderClassifier(6, code_dim, 4)


# ------------------------------------------------------------ co-attention
def test_singleton_weights():
    m = CoAttention(3, 4, 5, 2, rng=np.random.default_rng(0))
    qw, vw, scores = coattention_forward(m, [np.ones(3)], [np.ones(4)])
    assert np.allclose(qw.data, [1.0]) and np.allclose(vw.data, [1.0])
    assert scores.shape == (2,)


@pytest.mark.parametrize("combiner", ["addition", "mcb"])
def test_identical_regions_get_uniform_weights(combiner):
    rng = np.random.default_rng(1)
    m = CoAttention(3, 4, 4, 2, combiner, d_s=8, rng=rng)
    region = rng.standard_normal(4)
    _, vw, _ = coattention_forward(m, rng.standard_normal((3, 3)), [region] * 5)
    assert np.allclose(vw.data, 0.2, atol=1e-12)


def test_empty_inputs_rejected():
    m = CoAttention(3, 4, 5, 2)
    with pytest.raises(ShapeError):
        coattention_forward(m, np.zeros((0, 3)), np.ones((2, 4)))
    with pytest.raises(ShapeError):
        coattention_forward(m, np.ones((2, 3)), np.zeros((0, 4)))


def test_combiner_mismatch_rejected():
    m = CoAttention(3, 4, 5, 2, "addition")
    with pytest.raises(ValueError):
        coattention_forward(m, np.ones((1, 3)), np.ones((1, 4)), combiner="mcb")


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def test_addition_hand_trace_two_by_two():
    rng = np.random.default_rng(7)
    m = CoAttention(2, 2, 2, 3, "addition", head_hidden=2, init="I2", rng=rng)
    for p in m.parameters():
        p.data = rng.standard_normal(p.shape)
    Q, V = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    lin = lambda layer, x: layer.weight.data @ x + layer.bias.data
    qh = [np.tanh(lin(m.word_proj, q)) for q in Q]
    vh = [np.tanh(lin(m.region_proj, v)) for v in V]
    C = np.array([[np.tanh(qh[t] + vh[r]) @ m.affinity.data for r in range(2)] for t in range(2)])
    a_q, a_v = _softmax(C.mean(axis=1)), _softmax(C.mean(axis=0))
    q_att = a_q[0] * qh[0] + a_q[1] * qh[1]
    v_att = a_v[0] * vh[0] + a_v[1] * vh[1]
    hidden = np.maximum(lin(m.head.layers[0], np.tanh(q_att + v_att)), 0)
    expected = lin(m.head.layers[2], hidden)
    qw, vw, scores = coattention_forward(m, Q, V)
    assert np.allclose(qw.data, a_q, atol=1e-12)
    assert np.allclose(vw.data, a_v, atol=1e-12)
    assert np.allclose(scores.data, expected, atol=1e-12)


def test_word_mask_matches_truncated_question():
    rng = np.random.default_rng(8)
    m = CoAttention(3, 4, 5, 2, rng=rng)
    words, regions = rng.standard_normal((4, 3)), rng.standard_normal((2, 4))
    qw, vw, s = coattention_forward(m, words, regions, word_mask=[True, True, False, False])
    qw2, vw2, s2 = coattention_forward(m, words[:2], regions)
    assert np.allclose(qw.data[:2], qw2.data) and np.all(qw.data[2:] == 0)
    assert np.allclose(vw.data, vw2.data) and np.allclose(s.data, s2.data)


# ----------------------------------------------------------------- systems
def _batch():
    cfg = DatasetConfig(n_records=6, d_i=8, vocab=12, K=8, n_regions=2, number_answers=2, seed=0)
    return to_batch(generate_dataset(cfg))


def test_systems_produce_scores_for_every_record():
    b = _batch()
    spec = GeneratorSpec("full", "N2", K=8, hidden=(8, 8, 8))
    gan = ClassifierSystem(8, 12, spec, "mcb", d_f=8, d_s=16,
                           disc_spec=DiscriminatorSpec((4, 4)), seed=1)
    assert gan.predict(b, np.random.default_rng(0)).shape == (6, 8)
    assert AttentionSystem(8, 12, 8, 2, "mcb", d_s=16).predict(b).shape == (6, 8)


def test_attention_system_rejects_uneven_regions():
    with pytest.raises(ValueError):
        AttentionSystem(10, 12, 8, n_regions=4)


# ------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip(tmp_path):
    spec = GeneratorSpec("full", "N1", K=5, hidden=(4, 4, 4))
    system = ClassifierSystem(6, 9, spec, "full", d_f=4, disc_spec=DiscriminatorSpec((3, 3)),
                              seed=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, system.parameters(), "gan-full", [6, 9, 5], "I1", 2, "seed = 2\n")
    ck = load_checkpoint(path)
    assert (ck.arch, ck.dims, ck.init, ck.seed, ck.config_text) == \
        ("gan-full", [6, 9, 5], "I1", 2, "seed = 2\n")
    other = ClassifierSystem(6, 9, spec, "full", d_f=4, disc_spec=DiscriminatorSpec((3, 3)),
                             seed=3)
    assign_parameters(other.parameters(), ck.tensors)
    for a, b in zip(system.parameters(), other.parameters()):
        assert np.array_equal(a.data, b.data)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, [], "x", [1], "I1", 0)
    good.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(ValueError):
        load_checkpoint(good)


def test_assign_parameters_checks_shapes():
    gen = _gen()
    with pytest.raises(ValueError):
        assign_parameters(gen.parameters(), [np.zeros((1, 1))] * len(gen.parameters()))
    with pytest.raises(ValueError):
        assign_parameters(gen.parameters(), [])
