import numpy as np
import pytest

from backdoorlab.classifier import (
    Model,
    TrainConfig,
    TrainingDiverged,
    features,
    input_gradient,
    load_model,
    logits,
    loss,
    predict,
    predict_batch,
    save_model,
    softmax,
    train,
)
from backdoorlab.images import Dataset, Image, LabeledSample, gen_synthetic_identities


def img_from(rng, shape=(4, 4, 3)):
    return Image(rng.random(shape, dtype=np.float32))


def random_model(rng, arch="mlp1", dims=(4, 4, 3), K=3, hidden=16, scale=0.5):
    d = int(np.prod(dims))
    if arch == "linear":
        w = {"w": rng.standard_normal((d, K)) * scale, "b": rng.standard_normal(K) * scale}
    else:
        w = {
            "w1": rng.standard_normal((d, hidden)) * scale,
            "b1": rng.standard_normal(hidden) * scale,
            "w2": rng.standard_normal((hidden, K)) * scale,
            "b2": rng.standard_normal(K) * scale,
        }
    return Model(arch, dims, K, w)


class TestPredictAndLoss:
    def test_zero_model_ties_to_class_zero(self):
        m = Model.zeros("linear", (2, 2, 1), 4)
        x = Image(np.full((2, 2, 1), 0.3, dtype=np.float32))
        assert predict(m, x) == 0

    def test_zero_model_loss_is_log_k(self):
        x = Image(np.full((2, 2, 1), 0.3, dtype=np.float32))
        for K, expect in ((2, np.log(2)), (10, np.log(10))):
            m = Model.zeros("linear", (2, 2, 1), K)
            assert loss(m, x, 0) == pytest.approx(expect, abs=1e-9)

    def test_predict_matches_recomputed_logits(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = random_model(rng)
            x = img_from(rng)
            # independent forward pass in plain loops over float64 copies
            xin = x.data.reshape(-1).astype(np.float64)
            w1 = m.weights["w1"].astype(np.float64)
            b1 = m.weights["b1"].astype(np.float64)
            w2 = m.weights["w2"].astype(np.float64)
            b2 = m.weights["b2"].astype(np.float64)
            hid = np.maximum(xin @ w1 + b1, 0.0)
            z = hid @ w2 + b2
            assert predict(m, x) == int(np.argmax(z))
            assert np.allclose(logits(m, x), z)

    def test_loss_matches_naive_softmax_log(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = random_model(rng, scale=0.3)
            x = img_from(rng)
            z = logits(m, x)
            naive = np.exp(z) / np.exp(z).sum()
            assert loss(m, x, 1) == pytest.approx(-np.log(naive[1]), abs=1e-5)

    def test_softmax_normalizes(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = rng.standard_normal(5) * 10
            assert softmax(z).sum() == pytest.approx(1.0, abs=1e-6)

    def test_invalid_label(self):
        m = Model.zeros("linear", (2, 2, 1), 3)
        x = Image(np.zeros((2, 2, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            loss(m, x, 3)
        with pytest.raises(ValueError):
            input_gradient(m, x, -1)

    def test_dimension_mismatch(self):
        m = Model.zeros("linear", (2, 2, 1), 3)
        x = Image(np.zeros((3, 3, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            predict(m, x)

    def test_predict_invariant_under_logit_shift(self):
        rng = np.random.default_rng(3)
        m = random_model(rng, arch="linear")
        shifted = Model(
            "linear",
            m.input_dims,
            m.num_classes,
            {"w": m.weights["w"], "b": m.weights["b"] + np.float32(7.5)},
        )
        for _ in range(20):
            x = img_from(rng)
            assert predict(m, x) == predict(shifted, x)


class TestInputGradient:
    def test_zero_weight_model_zero_gradient(self):
        m = Model.zeros("linear", (2, 2, 1), 3)
        x = Image(np.full((2, 2, 1), 0.4, dtype=np.float32))
        assert np.all(input_gradient(m, x, 1) == 0.0)

    def test_linear_binary_closed_form(self):
        # 1-pixel image, 2 classes: grad = (softmax(Wx+b) - onehot(y)) pushed through W
        m = Model("linear", (1, 1, 1), 2, {"w": np.array([[0.7, -0.4]]), "b": np.array([0.1, -0.2])})
        x = Image(np.array([[[0.6]]], dtype=np.float32))
        # derive from the stored (float32) weights, the same numbers the model sees
        w0, w1 = (float(v) for v in m.weights["w"][0])
        b0, b1 = (float(v) for v in m.weights["b"])
        xv = float(x.data.ravel()[0])
        z = np.array([w0 * xv + b0, w1 * xv + b1])
        p = np.exp(z) / np.exp(z).sum()
        expected = (p[0] - 1.0) * w0 + p[1] * w1
        got = input_gradient(m, x, 0)
        assert got.shape == (1, 1, 1)
        assert got.ravel()[0] == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_matches_central_finite_differences(self, arch):
        rng = np.random.default_rng(17)
        h = 1e-3
        for _ in range(5):
            m = random_model(rng, arch=arch, dims=(3, 3, 1), K=3, hidden=8)
            x = img_from(rng, (3, 3, 1))
            y = int(rng.integers(3))
            grad = input_gradient(m, x, y).ravel()
            base = x.data.reshape(-1).astype(np.float64)
            fd = np.empty_like(grad)
            for i in range(base.size):
                plus, minus = base.copy(), base.copy()
                plus[i] += h
                minus[i] -= h
                lp = _loss_raw(m, plus, y)
                lm = _loss_raw(m, minus, y)
                fd[i] = (lp - lm) / (2 * h)
            mask = np.abs(grad) > 1e-6
            assert np.all(np.abs(grad[mask] - fd[mask]) / np.abs(grad[mask]) < 1e-4)


def _loss_raw(model, flat, y):
    from backdoorlab.classifier import logits_batch

    z = logits_batch(model, flat[None, :])[0]
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[y])


class TestFeatures:
    def test_linear_features_are_logits(self):
        rng = np.random.default_rng(4)
        m = random_model(rng, arch="linear")
        x = img_from(rng)
        assert np.allclose(features(m, x), logits(m, x))

    def test_mlp_features_are_hidden_relu(self):
        rng = np.random.default_rng(5)
        m = random_model(rng)
        x = img_from(rng)
        xin = x.data.reshape(-1).astype(np.float64)
        hid = np.maximum(xin @ m.weights["w1"].astype(np.float64) + m.weights["b1"], 0.0)
        assert np.allclose(features(m, x), hid)


class TestTraining:
    def test_memorizes_single_sample(self):
        rng = np.random.default_rng(6)
        im = Image(rng.random((3, 3, 1), dtype=np.float32))
        data = Dataset((LabeledSample(im, 1),), 3)
        result = train(data, TrainConfig(epochs=50, learning_rate=0.5, seed=0))
        assert predict(result.model, im) == 1
        assert result.train_accuracy == 1.0

    def test_deterministic(self):
        data = gen_synthetic_identities(3, 20, (4, 4, 1), 0.05, seed=1)
        cfg = TrainConfig(epochs=5, seed=42)
        a = train(data, cfg).model
        b = train(data, cfg).model
        for k in a.weights:
            assert np.array_equal(a.weights[k], b.weights[k])

    def test_linear_reaches_99_on_synthetic(self):
        data = gen_synthetic_identities(3, 50, (6, 6, 3), 0.05, seed=9)
        result = train(data, TrainConfig(epochs=30, learning_rate=0.5, architecture="linear", seed=0))
        assert result.train_accuracy >= 0.99

    def test_loss_decreases_over_epochs(self):
        data = gen_synthetic_identities(3, 30, (4, 4, 3), 0.05, seed=3)
        result = train(data, TrainConfig(epochs=12, learning_rate=0.3, seed=2))
        losses = result.epoch_losses
        assert losses[-1] < losses[0]
        assert np.mean(losses[-3:]) < np.mean(losses[:3])

    def test_divergence_raises(self):
        # an absurd L2 penalty multiplies weights past float range
        data = gen_synthetic_identities(2, 10, (4, 4, 1), 0.05, seed=4)
        with pytest.raises(TrainingDiverged), np.errstate(over="ignore", invalid="ignore"):
            train(data, TrainConfig(epochs=60, learning_rate=0.5, l2_penalty=1e6, seed=0))

    def test_batch_prediction_agrees(self):
        data = gen_synthetic_identities(3, 10, (4, 4, 1), 0.05, seed=5)
        model = train(data, TrainConfig(epochs=10, seed=1)).model
        imgs = [s.image for s in data]
        batch = predict_batch(model, imgs)
        assert list(batch) == [predict(model, im) for im in imgs]


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_roundtrip(self, tmp_path, arch):
        rng = np.random.default_rng(11)
        m = random_model(rng, arch=arch, dims=(3, 2, 3), K=4, hidden=5)
        p = tmp_path / "model.bfm1"
        save_model(m, p)
        back = load_model(p)
        assert back.architecture == m.architecture
        assert back.input_dims == m.input_dims
        assert back.num_classes == m.num_classes
        for k in m.weights:
            assert np.array_equal(back.weights[k], m.weights[k].astype(np.float32))

    def test_magic(self, tmp_path):
        m = Model.zeros("linear", (2, 2, 1), 2)
        p = tmp_path / "m.bfm1"
        save_model(m, p)
        assert p.read_bytes()[:4] == b"BFM1"

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.bfm1"
        p.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ValueError):
            load_model(p)
