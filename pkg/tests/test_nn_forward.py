import math

import numpy as np
import pytest

from dpmask import nn

from oracles import scalar_cross_entropy, scalar_forward


def test_lenet_layer_shapes():
    shapes = nn.param_shapes(nn.architecture("lenet"))
    assert shapes[0] == (3, 3, 1, 6)
    assert shapes[4] == (7744, 120)  # 22x22x16 flattened
    assert shapes[-2] == (84, 10)


def test_custom_layer_shapes():
    shapes = nn.param_shapes(nn.architecture("custom"))
    assert shapes[0] == (8, 8, 1, 16)
    assert shapes[4] == (512, 32)  # 4x4x32 flattened
    assert shapes[-2] == (32, 10)


def test_unknown_architecture():
    with pytest.raises(ValueError):
        nn.architecture("resnet")


def test_build_model_deterministic():
    a = nn.build_model(nn.architecture("custom"), seed=3)
    b = nn.build_model(nn.architecture("custom"), seed=3)
    for pa, pb in zip(a.params, b.params):
        np.testing.assert_array_equal(pa, pb)
    c = nn.build_model(nn.architecture("custom"), seed=4)
    assert any(not np.array_equal(pa, pc) for pa, pc in zip(a.params, c.params))


def test_zero_weight_model_gives_zero_logits(custom_model):
    model = nn.Model(custom_model.arch, [np.zeros_like(p) for p in custom_model.params])
    x = np.random.default_rng(0).uniform(0, 1, (2, 28, 28, 1))
    np.testing.assert_array_equal(nn.forward(model, x), np.zeros((2, 10)))


def test_duplicate_rows_identical_logits(lenet_model):
    x = np.random.default_rng(1).uniform(0, 1, (1, 28, 28, 1))
    batch = np.concatenate([x, x], axis=0)
    logits = nn.forward(lenet_model, batch)
    np.testing.assert_array_equal(logits[0], logits[1])


def test_wrong_input_shape_errors(custom_model):
    with pytest.raises(ValueError):
        nn.forward(custom_model, np.zeros((2, 27, 28, 1)))
    with pytest.raises(ValueError):
        nn.forward(custom_model, np.zeros((28, 28, 1)))


def test_forward_deterministic(custom_model):
    x = np.random.default_rng(2).uniform(0, 1, (4, 28, 28, 1))
    np.testing.assert_array_equal(nn.forward(custom_model, x), nn.forward(custom_model, x))


@pytest.mark.parametrize("arch_name", ["lenet", "custom"])
def test_forward_matches_scalar_loop_oracle(arch_name):
    model = nn.build_model(nn.architecture(arch_name), seed=23)
    x = np.random.default_rng(23).uniform(0, 1, (1, 28, 28, 1))
    fast = nn.forward(model, x)[0]
    slow = scalar_forward(model, x[0])
    np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("pool_stride", [1, 2])
def test_pool_stride_configurable(pool_stride):
    model = nn.build_model(nn.architecture("custom", pool_stride=pool_stride), seed=5)
    x = np.random.default_rng(3).uniform(0, 1, (1, 28, 28, 1))
    fast = nn.forward(model, x)[0]
    slow = scalar_forward(model, x[0])
    np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = np.ones((4, 10)) * 3.3
        assert nn.cross_entropy_loss(logits, np.zeros(4, dtype=int)) == pytest.approx(math.log(10), rel=1e-12)

    def test_dominant_correct_logit(self):
        logits = np.zeros((2, 10))
        logits[:, 4] = 1000.0
        assert nn.cross_entropy_loss(logits, np.array([4, 4])) == pytest.approx(0.0, abs=1e-12)

    def test_matches_scalar_formula(self):
        gen = np.random.default_rng(17)
        logits = gen.normal(scale=5.0, size=(8, 10))
        labels = gen.integers(0, 10, 8)
        expected = np.mean([scalar_cross_entropy(list(row), int(l)) for row, l in zip(logits, labels)])
        assert nn.cross_entropy_loss(logits, labels) == pytest.approx(expected, rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nn.cross_entropy_loss(np.zeros((1, 10)), np.array([10]))

    def test_shift_invariance(self):
        gen = np.random.default_rng(19)
        logits = gen.normal(size=(5, 10))
        labels = gen.integers(0, 10, 5)
        base = nn.cross_entropy_loss(logits, labels)
        shifted = nn.cross_entropy_loss(logits + 123.456, labels)
        assert abs(base - shifted) < 1e-10


class TestPredict:
    def test_tie_breaks_to_lowest_index(self):
        assert nn.logits_predict(np.zeros((1, 10)))[0] == 0

    def test_unique_max(self):
        logits = np.zeros((1, 10))
        logits[0, 7] = 2.0
        assert nn.logits_predict(logits)[0] == 7

    def test_matches_scalar_argmax(self, custom_model):
        x = np.random.default_rng(5).uniform(0, 1, (6, 28, 28, 1))
        logits = nn.forward(custom_model, x)
        expected = [max(range(10), key=lambda i: (logits[n, i], -i)) for n in range(6)]
        np.testing.assert_array_equal(nn.predict(custom_model, x), expected)

    def test_positive_rescale_invariance(self):
        gen = np.random.default_rng(21)
        logits = gen.normal(size=(10, 10))
        np.testing.assert_array_equal(nn.logits_predict(logits), nn.logits_predict(logits * 3.7))


class TestAccuracy:
    def test_self_labeled_is_perfect(self, custom_model):
        x = np.random.default_rng(6).uniform(0, 1, (20, 28, 28, 1))
        labels = nn.predict(custom_model, x)
        assert nn.accuracy(custom_model, (x, labels)) == 1.0

    def test_shifted_labels_all_wrong(self, custom_model):
        x = np.random.default_rng(6).uniform(0, 1, (20, 28, 28, 1))
        labels = (nn.predict(custom_model, x) + 1) % 10
        assert nn.accuracy(custom_model, (x, labels)) == 0.0

    def test_matches_manual_count(self, custom_model):
        gen = np.random.default_rng(8)
        x = gen.uniform(0, 1, (100, 28, 28, 1))
        labels = gen.integers(0, 10, 100)
        manual = float(np.mean(nn.predict(custom_model, x) == labels))
        assert nn.accuracy(custom_model, (x, labels)) == pytest.approx(manual)

    def test_empty_dataset_errors(self, custom_model):
        with pytest.raises(ValueError):
            nn.accuracy(custom_model, (np.zeros((0, 28, 28, 1)), np.zeros(0, dtype=int)))
