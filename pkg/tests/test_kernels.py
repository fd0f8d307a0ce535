import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wmspot.errors import ConfigError, ContractError, NumericError, ParameterError, ShapeError
from wmspot.geometry import RotatedBox
from wmspot.kernels import (
    BOS,
    EOW,
    LETTERS,
    VOCAB_SIZE,
    AttentionConfig,
    AttentionWeights,
    Linear,
    LossWeights,
    encode,
    encode_target,
    fuse,
    global_attend,
    greedy_decode,
    local_embed,
    project_local,
    scaled_dot_attention,
    sequence_cross_entropy,
    sequence_cross_entropy_logits,
    softmax,
    total_loss,
    variance_loss,
    variance_loss_grad,
)
from wmspot.sampling import Rng
from wmspot.selfcheck import central_difference, random_boxes, relative_error

CONFIG = AttentionConfig()


@pytest.fixture(scope="module")
def weights():
    return AttentionWeights.init(CONFIG, Rng(17))


def naive_attention(q, k, v):
    """Row-by-row loop reference for softmax(QK^T/sqrt(d))V."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = [float(np.dot(q[i], k[j])) / math.sqrt(q.shape[1]) for j in range(k.shape[0])]
        m = max(logits)
        e = [math.exp(x - m) for x in logits]
        s = sum(e)
        for j in range(k.shape[0]):
            out[i] += e[j] / s * v[j]
    return out


# variance loss

def test_variance_loss_examples():
    one = [RotatedBox(0.1, 0.2, 0.4, 0.3, 0.5)]
    assert variance_loss(one) == 0.0
    same = [RotatedBox(0.1 + 0.0625 * i, 0.2, 0.4 + 0.0625 * i, 0.3, 0.5) for i in range(9)]
    assert variance_loss(same) == 0.0
    # widths equal only up to rounding
    nearly = [RotatedBox(0.1 + 0.07 * i, 0.2, 0.4 + 0.07 * i, 0.3, 0.5) for i in range(9)]
    assert variance_loss(nearly) < 1e-30
    pair = [RotatedBox(0.0, 0.0, 0.1, 0.1), RotatedBox(0.5, 0.0, 0.8, 0.1)]
    assert variance_loss(pair) == pytest.approx(0.01, abs=1e-15)


def test_variance_grad_examples():
    same = np.tile([0.1, 0.2, 0.4, 0.3, 0.5], (4, 1))
    assert np.array_equal(variance_loss_grad(same), np.zeros_like(same))
    pair = [RotatedBox(0.0, 0.0, 0.1, 0.1), RotatedBox(0.5, 0.0, 0.8, 0.1)]
    g = variance_loss_grad(pair)
    assert g[0, 2] == pytest.approx(-0.1, abs=1e-15)
    assert g[0, 0] == pytest.approx(0.1, abs=1e-15)
    assert g[1, 2] == pytest.approx(0.1, abs=1e-15)


def test_variance_loss_matches_numpy_var():
    arr = random_boxes(np.random.default_rng(1), 7)
    expected = np.var(arr[:, 2] - arr[:, 0]) + np.var(arr[:, 3] - arr[:, 1]) + np.var(arr[:, 4])
    assert variance_loss(arr) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_variance_grad_finite_difference(seed):
    boxes = random_boxes(np.random.default_rng(seed), 5)
    num = central_difference(variance_loss, boxes.copy())
    assert relative_error(variance_loss_grad(boxes), num) < 1e-4


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-1, 1)), st.floats(-3, 3), st.floats(-3, 3))
def test_variance_loss_translation_invariant(arr, dx, dy):
    shifted = arr + np.array([dx, dy, dx, dy, 0.0])
    assert variance_loss(shifted) == pytest.approx(variance_loss(arr), abs=1e-9)
    assert variance_loss(arr) >= 0.0


# total loss

def test_total_loss():
    assert total_loss(0, 0, 0, 0, 0).total == 0.0
    assert total_loss(1, 1, 1, 1, 1).total == 5.0
    assert total_loss(0, 0, 0, 0.01, 0).total == 0.01
    weighted = total_loss(1, 1, 1, 1, 1, LossWeights(var=0.0, txt=2.0))
    assert weighted.total == 5.0 and weighted.l_var == 1.0
    with pytest.raises(NumericError):
        total_loss(0, float("nan"), 0, 0, 0)


# attention primitives

def test_attention_singleton_returns_v():
    v = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(scaled_dot_attention(np.ones((1, 4)), np.ones((1, 4)), v), v)


def test_attention_identical_keys_average_values():
    gen = np.random.default_rng(0)
    k = np.tile(gen.normal(size=(1, 8)), (6, 1))
    v = gen.normal(size=(6, 5))
    out = scaled_dot_attention(gen.normal(size=(6, 8)), k, v)
    assert np.max(np.abs(out - v.mean(axis=0))) < 1e-9


def test_attention_matches_loop_reference():
    gen = np.random.default_rng(1)
    q, k, v = gen.normal(size=(5, 6)), gen.normal(size=(5, 6)), gen.normal(size=(5, 3))
    assert np.allclose(scaled_dot_attention(q, k, v), naive_attention(q, k, v), atol=1e-12)
    two = scaled_dot_attention(q, k, gen.normal(size=(5, 4)), heads=2)
    assert two.shape == (5, 4)


def test_attention_shape_errors():
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.ones((3, 4)), np.ones((3, 5)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.ones((3, 4)), np.ones((3, 4)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.ones((3, 4)), np.ones((3, 4)), np.ones((3, 3)), heads=3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
def test_softmax_rows(x):
    p = softmax(x)
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-9


def test_config_validation():
    assert CONFIG.channels_per_column == 32
    assert CONFIG.fused_input == 7 * 224 + 256
    with pytest.raises(ConfigError):
        AttentionConfig(d_local=100)
    with pytest.raises(ConfigError):
        AttentionConfig(heads=3)


# local / global / fuse

def test_local_embed_shape(weights):
    desc = np.random.default_rng(2).normal(size=(7, 7, 256))
    assert local_embed(desc, weights).shape == (7, 224)
    with pytest.raises(ShapeError):
        local_embed(np.zeros((7, 6, 256)), weights)


def test_local_embed_zero_input(weights):
    zero = AttentionWeights(*(replace(getattr(weights, f), bias=np.zeros_like(getattr(weights, f).bias))
                              for f in ("local_q", "local_k", "local_v", "global_q", "global_k", "global_v", "fuse")))
    assert np.array_equal(local_embed(np.zeros((7, 7, 256)), zero), np.zeros((7, 224)))


def test_local_embed_uniform_logits_average_rows(weights):
    desc = np.random.default_rng(3).normal(size=(7, 7, 256))
    uniform = replace(weights, local_q=Linear.zeros(256, 32), local_k=Linear.zeros(256, 32))
    v = project_local(desc, weights.local_v, CONFIG)
    out = local_embed(desc, uniform)
    assert np.max(np.abs(out - v.mean(axis=0))) < 1e-9


def test_local_embed_matches_loop_reference(weights):
    desc = np.random.default_rng(4).normal(size=(7, 7, 256))
    q, k, v = (project_local(desc, getattr(weights, r), CONFIG) for r in ("local_q", "local_k", "local_v"))
    # 1x1 convolution applied pixel by pixel
    assert np.allclose(v[2, 32 * 3:32 * 4], desc[2, 3] @ weights.local_v.weight, atol=1e-12)
    assert np.allclose(local_embed(desc, weights), naive_attention(q, k, v), atol=1e-10)


def test_global_attend_cases(weights):
    gen = np.random.default_rng(5)
    row = gen.normal(size=(1, 256))
    assert np.allclose(global_attend(row, weights), weights.global_v(row), atol=1e-12)
    same = np.tile(row, (4, 1))
    out = global_attend(same, weights)
    assert np.max(np.abs(out - out[0])) == 0.0
    assert global_attend(np.zeros((0, 256)), weights).shape == (0, 256)
    with pytest.raises(ShapeError):
        global_attend(np.zeros((3, 10)), weights)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_global_attend_permutation_equivariant(n, seed):
    weights = AttentionWeights.init(CONFIG, Rng(17))
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, 256))
    perm = gen.permutation(n)
    assert np.max(np.abs(global_attend(x[perm], weights) - global_attend(x, weights)[perm])) <= 1e-12


def test_fuse_shapes_and_zero(weights):
    gen = np.random.default_rng(6)
    local = [gen.normal(size=(7, 224)) for _ in range(3)]
    out = fuse(local, gen.normal(size=(3, 256)), weights.fuse)
    assert out.shape == (3, 256)
    zero = fuse([np.zeros((7, 224))] * 2, np.zeros((2, 256)), Linear(weights.fuse.weight, np.zeros(256)))
    assert np.array_equal(zero, np.zeros((2, 256)))
    with pytest.raises(ShapeError):
        fuse(local, gen.normal(size=(2, 256)), weights.fuse)


def test_encode_end_to_end(weights):
    gen = np.random.default_rng(7)
    theta = encode([gen.normal(size=(7, 7, 256)) for _ in range(4)], gen.normal(size=(4, 256)), weights)
    assert theta.shape == (4, 256) and np.all(np.isfinite(theta))


def test_weight_file_round_trip(tmp_path, weights):
    path = tmp_path / "w.json"
    weights.save(path)
    loaded = AttentionWeights.load(path)
    assert np.array_equal(loaded.fuse.weight, weights.fuse.weight)
    assert np.array_equal(loaded.local_q.bias, weights.local_q.bias)
    path.write_text('{"format": "other"}')
    with pytest.raises(ConfigError):
        AttentionWeights.load(path)


# decoding

def onehot(token):
    d = np.zeros(VOCAB_SIZE)
    d[token] = 1.0
    return d


def test_decode_eow_immediately():
    assert greedy_decode(None, lambda th, pre: onehot(EOW)) == ""


def test_decode_scripted_word():
    script = [LETTERS.index(c) for c in "draft"] + [EOW]
    assert greedy_decode(None, lambda th, pre: onehot(script[len(pre) - 1])) == "draft"


def test_decode_length_cap_and_prefix():
    seen = []

    def never_stop(th, pre):
        seen.append(list(pre))
        return onehot(LETTERS.index("z"))

    assert greedy_decode(None, never_stop) == "z" * 15
    assert seen[0] == [BOS] and len(seen) == 15


def test_decode_never_emits_bos():
    d = np.full(VOCAB_SIZE, 0.01)
    d[BOS] = 1 - 0.01 * 27
    out = greedy_decode(None, lambda th, pre: d, max_len=3)
    assert out == "aaa"


def test_decode_rejects_bad_distribution():
    with pytest.raises(ContractError):
        greedy_decode(None, lambda th, pre: np.ones(VOCAB_SIZE))
    with pytest.raises(ContractError):
        greedy_decode(None, lambda th, pre: np.ones(5) / 5)


# cross entropy

def test_cross_entropy_examples():
    ids = encode_target("draft")
    assert list(ids) == [3, 17, 0, 5, 19, EOW]
    exact = np.stack([onehot(i) for i in ids])
    assert sequence_cross_entropy(exact, "draft") == 0.0
    uniform = np.full((6, VOCAB_SIZE), 1 / VOCAB_SIZE)
    assert sequence_cross_entropy(uniform, "draft") == pytest.approx(math.log(28), abs=1e-12)
    assert math.log(28) == pytest.approx(3.332, abs=1e-3)
    with pytest.raises(NumericError):
        sequence_cross_entropy(np.stack([onehot(0)] * 6), "draft")
    with pytest.raises(ParameterError):
        encode_target("Draft")
    with pytest.raises(ShapeError):
        sequence_cross_entropy(uniform[:3], "draft")


def test_cross_entropy_logits_consistent():
    logits = np.random.default_rng(8).normal(size=(4, VOCAB_SIZE))
    loss, _ = sequence_cross_entropy_logits(logits, "abc")
    assert loss == pytest.approx(sequence_cross_entropy(softmax(logits), "abc"), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_finite_difference(seed):
    logits = np.random.default_rng(seed).normal(0, 2, size=(4, VOCAB_SIZE))
    _, grad = sequence_cross_entropy_logits(logits, "wmk")
    num = central_difference(lambda z: sequence_cross_entropy_logits(z, "wmk")[0], logits.copy())
    assert relative_error(grad, num) < 1e-4
