import numpy as np
import pytest

from backdoorlab.images import (
    Dataset,
    DimensionMismatch,
    Image,
    LabeledSample,
    Provenance,
    class_means,
    gen_synthetic_identities,
    l2_distance,
    linf_distance,
    project_ball_and_range,
    synthetic_prototypes,
)


def img(arr):
    return Image(np.asarray(arr, dtype=np.float32))


def rand_img(rng, shape=(4, 4, 3)):
    return Image(rng.random(shape, dtype=np.float32))


class TestImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            img(np.full((2, 2, 1), 1.5))
        with pytest.raises(ValueError):
            img(np.full((2, 2, 1), -0.1))

    def test_rejects_bad_channels(self):
        with pytest.raises(ValueError):
            img(np.zeros((2, 2, 2)))

    def test_rejects_nan(self):
        arr = np.zeros((2, 2, 1), dtype=np.float32)
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(arr)

    def test_from_array_clips(self):
        im = Image.from_array(np.full((2, 2, 3), 1.7), clip=True)
        assert im.data.max() == 1.0

    def test_immutable(self):
        im = img(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            im.data[0, 0, 0] = 0.5

    def test_equality(self):
        a = img(np.full((2, 2, 1), 0.25))
        b = img(np.full((2, 2, 1), 0.25))
        assert a == b and hash(a) == hash(b)


class TestDistances:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        a = rand_img(rng)
        assert linf_distance(a, a) == 0.0
        assert l2_distance(a, a) == 0.0

    def test_single_pixel_linf(self):
        a = img(np.full((3, 3, 1), 0.2))
        arr = np.full((3, 3, 1), 0.2, dtype=np.float32)
        arr[1, 2, 0] += np.float32(0.3)
        b = Image(arr)
        assert linf_distance(a, b) == pytest.approx(0.3, abs=1e-7)

    def test_l2_four_elements(self):
        # sqrt(4 * 0.3^2) = 0.6
        a = img(np.zeros((2, 2, 1)))
        b = img(np.full((2, 2, 1), 0.3))
        assert l2_distance(a, b) == pytest.approx(0.6, abs=1e-7)

    def test_linf_matches_bruteforce_scan(self):
        rng = np.random.default_rng(7)
        a, b = rand_img(rng), rand_img(rng)
        best = 0.0
        for i in range(4):
            for j in range(4):
                for k in range(3):
                    best = max(best, abs(float(a.data[i, j, k]) - float(b.data[i, j, k])))
        assert linf_distance(a, b) == pytest.approx(best, abs=0)

    def test_l2_matches_naive_accumulation(self):
        rng = np.random.default_rng(8)
        a, b = rand_img(rng), rand_img(rng)
        acc = 0.0
        for va, vb in zip(a.data.ravel(), b.data.ravel()):
            acc += (float(va) - float(vb)) ** 2
        assert l2_distance(a, b) == pytest.approx(acc**0.5, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linf_distance(img(np.zeros((2, 2, 1))), img(np.zeros((3, 2, 1))))
        with pytest.raises(DimensionMismatch):
            l2_distance(img(np.zeros((2, 2, 1))), img(np.zeros((2, 2, 3))))

    def test_norm_axioms_on_random_triples(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            a, b, c = rand_img(rng), rand_img(rng), rand_img(rng)
            for dist in (linf_distance, l2_distance):
                assert dist(a, b) >= 0.0
                assert dist(a, b) == dist(b, a)
                assert dist(a, a) == 0.0
                assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12
        # identity of indiscernibles: zero distance only for equal images
        a = rand_img(rng)
        bumped = a.data.copy()
        bumped[0, 0, 0] = min(1.0, bumped[0, 0, 0] + 0.01)
        b = Image(bumped)
        assert linf_distance(a, b) > 0.0
        assert l2_distance(a, b) > 0.0


class TestProjection:
    def test_fixed_point_inside(self):
        x = img(np.full((2, 2, 1), 0.5))
        c = img(np.full((2, 2, 1), 0.55))
        out = project_ball_and_range(x, c, 0.2)
        assert out == x

    def test_clamp_to_upper_face(self):
        x = img(np.ones((2, 2, 3)))
        c = img(np.full((2, 2, 3), 0.5))
        out = project_ball_and_range(x, c, 0.1)
        assert np.allclose(out.data, 0.6, atol=1e-7)

    def test_range_clip_dominates(self):
        # center 0, eps 0.3, raw input -0.2: ball would allow -0.2 but [0,1] clips to 0
        c = img(np.zeros((2, 2, 1)))
        raw = np.full((2, 2, 1), -0.2, dtype=np.float32)
        from backdoorlab.images import clip_to_ball_and_range

        out = clip_to_ball_and_range(raw, c.data, 0.3)
        assert np.all(out == 0.0)

    def test_negative_eps_rejected(self):
        x = img(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            project_ball_and_range(x, x, -0.1)

    def test_idempotent_and_in_constraints(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            x, c = rand_img(rng), rand_img(rng)
            eps = float(rng.random()) * 0.5
            out = project_ball_and_range(x, c, eps)
            again = project_ball_and_range(out, c, eps)
            assert out == again
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0
            # float32 bound arithmetic can overshoot by half an ulp
            assert linf_distance(out, c) <= eps + 1e-6


class TestDataset:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Dataset((), 2)

    def test_rejects_label_out_of_range(self):
        s = LabeledSample(img(np.zeros((2, 2, 1))), 3)
        with pytest.raises(ValueError):
            Dataset((s,), 2)

    def test_rejects_mixed_shapes(self):
        a = LabeledSample(img(np.zeros((2, 2, 1))), 0)
        b = LabeledSample(img(np.zeros((3, 2, 1))), 0)
        with pytest.raises(DimensionMismatch):
            Dataset((a, b), 2)


class TestSyntheticGenerator:
    def test_sigma_zero_gives_prototypes(self):
        data = gen_synthetic_identities(3, 5, (4, 4, 3), 0.0, seed=11)
        protos = synthetic_prototypes(3, (4, 4, 3), seed=11)
        for s in data:
            assert s.image == protos[s.label]

    def test_deterministic(self):
        a = gen_synthetic_identities(2, 4, (4, 4, 1), 0.05, seed=5)
        b = gen_synthetic_identities(2, 4, (4, 4, 1), 0.05, seed=5)
        for sa, sb in zip(a, b):
            assert sa.image == sb.image and sa.label == sb.label

    def test_rejects_zero_counts(self):
        with pytest.raises(ValueError):
            gen_synthetic_identities(0, 5, (4, 4, 1), 0.1, seed=0)
        with pytest.raises(ValueError):
            gen_synthetic_identities(3, 0, (4, 4, 1), 0.1, seed=0)

    def test_linearly_separable(self):
        # train-and-measure oracle: classes are separable by construction
        from backdoorlab.classifier import TrainConfig, train

        data = gen_synthetic_identities(3, 50, (6, 6, 3), 0.05, seed=9)
        result = train(data, TrainConfig(epochs=30, learning_rate=0.5, architecture="linear", seed=1))
        assert result.train_accuracy >= 0.99

    def test_class_means_close_to_prototypes(self):
        data = gen_synthetic_identities(3, 60, (4, 4, 3), 0.05, seed=2)
        protos = synthetic_prototypes(3, (4, 4, 3), seed=2)
        means = class_means(data)
        for k in range(3):
            # clipping at [0,1] biases edge pixels, so the tolerance is loose
            assert linf_distance(means[k], protos[k]) < 0.1

    def test_provenance_defaults_clean(self):
        data = gen_synthetic_identities(2, 2, (2, 2, 1), 0.0, seed=0)
        assert all(s.provenance is Provenance.CLEAN for s in data)
