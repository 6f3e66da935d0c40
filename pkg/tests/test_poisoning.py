import numpy as np
import pytest

from backdoorlab.classifier import Model, features
from backdoorlab.images import Dataset, Image, LabeledSample, Provenance, linf_distance
from backdoorlab.poisoning import (
    HiddenTriggerConfig,
    MakeupSpec,
    PatchTrigger,
    apply_patch,
    blend_makeup,
    checker_pattern,
    hidden_trigger_poison,
    poison_with_hidden_trigger,
    poison_with_patch,
    replay_plan,
    save_plan,
    select_poison_indices,
)


def img(arr):
    return Image(np.asarray(arr, dtype=np.float32))


def rand_img(rng, shape=(6, 6, 3)):
    return Image(rng.random(shape, dtype=np.float32))


class TestApplyPatch:
    def test_opaque_white_corner(self):
        x = img(np.full((4, 4, 1), 0.2))
        trig = PatchTrigger(img(np.ones((2, 2, 1))), (0, 0), opacity=1.0)
        out = apply_patch(x, trig)
        assert np.all(out.data[:2, :2, 0] == 1.0)
        assert np.all(out.data[2:, :, 0] == np.float32(0.2))
        assert np.all(out.data[:2, 2:, 0] == np.float32(0.2))

    def test_half_opacity_fixed_point(self):
        x = img(np.full((4, 4, 1), 0.3))
        trig = PatchTrigger(img(np.full((2, 2, 1), 0.3)), (1, 1), opacity=0.5)
        assert apply_patch(x, trig) == x

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        x = rand_img(rng)
        pat = rand_img(rng, (3, 2, 3))
        trig = PatchTrigger(pat, (2, 1), opacity=0.7)
        out = apply_patch(x, trig)
        o = np.float32(0.7)
        for i in range(6):
            for j in range(6):
                for k in range(3):
                    if 2 <= i < 5 and 1 <= j < 3:
                        expect = (np.float32(1.0) - o) * x.data[i, j, k] + o * pat.data[i - 2, j - 1, k]
                        expect = min(np.float32(1.0), max(np.float32(0.0), expect))
                    else:
                        expect = x.data[i, j, k]
                    assert out.data[i, j, k] == expect

    def test_touches_only_footprint(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rand_img(rng)
            r, c = int(rng.integers(4)), int(rng.integers(4))
            trig = PatchTrigger(rand_img(rng, (2, 2, 3)), (r, c), opacity=float(rng.random() * 0.9 + 0.1))
            out = apply_patch(x, trig)
            mask = np.zeros((6, 6, 3), dtype=bool)
            mask[r : r + 2, c : c + 2, :] = True
            assert np.array_equal(out.data[~mask], x.data[~mask])

    def test_out_of_bounds(self):
        x = img(np.zeros((4, 4, 1)))
        with pytest.raises(ValueError):
            apply_patch(x, PatchTrigger(img(np.ones((3, 3, 1))), (2, 2)))


class TestBlendMakeup:
    def test_all_zero_mask_is_identity(self):
        rng = np.random.default_rng(2)
        x = rand_img(rng)
        spec = MakeupSpec(img(np.zeros((6, 6, 3))), rand_img(rng))
        assert blend_makeup(x, spec) == x

    def test_all_one_mask_is_pattern(self):
        rng = np.random.default_rng(3)
        x, pat = rand_img(rng), rand_img(rng)
        spec = MakeupSpec(img(np.ones((6, 6, 3))), pat)
        assert blend_makeup(x, spec) == pat

    def test_checkerboard_selection_matches_oracle(self):
        rng = np.random.default_rng(4)
        x, pat = rand_img(rng), rand_img(rng)
        ii, jj = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
        mask = ((ii + jj) % 2 == 0).astype(np.float32)[:, :, None].repeat(3, axis=2)
        out = blend_makeup(x, MakeupSpec(img(mask), pat))
        for i in range(6):
            for j in range(6):
                expect = pat.data[i, j] if (i + j) % 2 == 0 else x.data[i, j]
                assert np.array_equal(out.data[i, j], expect)

    def test_unmasked_pixels_bit_identical_random_masks(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            x, pat = rand_img(rng, (4, 4, 1)), rand_img(rng, (4, 4, 1))
            mask = (rng.random((4, 4, 1)) < 0.5).astype(np.float32)
            out = blend_makeup(x, MakeupSpec(img(mask), pat))
            keep = mask == 0.0
            assert np.array_equal(out.data[keep], x.data[keep])

    def test_rejects_non_binary_mask(self):
        with pytest.raises(ValueError):
            MakeupSpec(img(np.full((2, 2, 1), 0.5)), img(np.zeros((2, 2, 1))))


def small_model(rng, dims=(4, 4, 1), K=2, arch="mlp1", hidden=6):
    d = int(np.prod(dims))
    if arch == "linear":
        w = {"w": rng.standard_normal((d, K)) * 0.4, "b": np.zeros(K)}
    else:
        w = {
            "w1": rng.standard_normal((d, hidden)) * 0.4,
            "b1": rng.standard_normal(hidden) * 0.1,
            "w2": rng.standard_normal((hidden, K)) * 0.4,
            "b2": np.zeros(K),
        }
    return Model(arch, dims, K, w)


def feature_gap(model, a, b_feats):
    diff = features(model, a) - b_feats
    return float(diff @ diff)


class TestHiddenTrigger:
    def test_zero_steps_returns_target(self):
        rng = np.random.default_rng(6)
        m = small_model(rng)
        t, s = rand_img(rng, (4, 4, 1)), rand_img(rng, (4, 4, 1))
        trig = PatchTrigger(img(np.ones((2, 2, 1))), (0, 0))
        z = hidden_trigger_poison(m, t, s, trig, HiddenTriggerConfig(steps=0))
        assert z == t

    def test_zero_budget_returns_target(self):
        rng = np.random.default_rng(7)
        m = small_model(rng)
        t, s = rand_img(rng, (4, 4, 1)), rand_img(rng, (4, 4, 1))
        trig = PatchTrigger(img(np.ones((2, 2, 1))), (0, 0))
        z = hidden_trigger_poison(m, t, s, trig, HiddenTriggerConfig(pixel_budget=0.0, steps=20))
        assert z == t

    def test_single_step_matches_hand_computation(self):
        # 1-pixel image, linear features: objective is an explicit quadratic
        m = Model("linear", (1, 1, 1), 2, {"w": np.array([[1.0, -2.0]]), "b": np.array([0.0, 0.0])})
        t = img([[[0.5]]])
        s = img([[[0.2]]])
        trig = PatchTrigger(img([[[1.0]]]), (0, 0), opacity=1.0)  # patched source = 1.0
        eta, eps = 0.01, 0.3
        cfg = HiddenTriggerConfig(pixel_budget=eps, steps=1, step_size=eta)
        z = hidden_trigger_poison(m, t, s, trig, cfg)
        # by hand: phi(v) = (w0*v, w1*v); anchor = phi(1.0); grad at t of
        # ||phi(z)-anchor||^2 is 2*(w0^2 + w1^2)*(t - 1.0)
        w0, w1 = float(m.weights["w"][0, 0]), float(m.weights["w"][0, 1])
        grad = 2.0 * (w0 * w0 + w1 * w1) * (0.5 - 1.0)
        expect = np.float32(0.5) - np.float32(eta) * np.float32(grad)
        expect = min(np.float32(0.5 + eps), max(np.float32(0.5 - eps), expect))
        assert z.data[0, 0, 0] == pytest.approx(float(expect), abs=1e-7)

    def test_budget_and_monotonicity_random_instances(self):
        rng = np.random.default_rng(8)
        for trial in range(30):
            arch = "linear" if trial % 2 else "mlp1"
            m = small_model(rng, arch=arch)
            t, s = rand_img(rng, (4, 4, 1)), rand_img(rng, (4, 4, 1))
            trig = PatchTrigger(rand_img(rng, (2, 2, 1)), (1, 1))
            eps = float(rng.random() * 0.2 + 0.02)
            cfg = HiddenTriggerConfig(pixel_budget=eps, steps=25, step_size=0.05)
            anchor = features(m, apply_patch(s, trig))
            before = feature_gap(m, t, anchor)
            z = hidden_trigger_poison(m, t, s, trig, cfg)
            after = feature_gap(m, z, anchor)
            assert linf_distance(z, t) <= eps + 1e-6
            assert z.data.min() >= 0.0 and z.data.max() <= 1.0
            assert after <= before


class TestDatasetPoisoning:
    def build(self, n_per=10, K=3):
        rng = np.random.default_rng(9)
        samples = []
        for k in range(K):
            for _ in range(n_per):
                samples.append(LabeledSample(rand_img(rng, (6, 6, 3)), k))
        return Dataset(tuple(samples), K)

    def test_select_first_ceil(self):
        data = self.build()
        idx = select_poison_indices(data, 1, 0.25)
        assert idx == [10, 11, 12]  # ceil(0.25 * 10) = 3, first of class 1

    def test_patch_poisoning_relabels_to_target_and_marks(self):
        data = self.build()
        trig = PatchTrigger(checker_pattern(2, 2, 3), (0, 0))
        poisoned, plan = poison_with_patch(data, source_class=1, target_class=0, rate=0.3, trig=trig)
        assert len(poisoned) == len(data)
        hit = [i for i, s in enumerate(poisoned) if s.provenance is Provenance.POISONED]
        assert hit == [10, 11, 12]
        for i in hit:
            assert poisoned[i].label == 0
            # the op itself only altered the footprint
            assert np.array_equal(poisoned[i].image.data[2:, :, :], data[i].image.data[2:, :, :])
        for i in range(len(data)):
            if i not in hit:
                assert poisoned[i] == data[i]
        assert plan.method == "patch" and len(plan.entries) == 3

    def test_plan_replay_is_exact(self, tmp_path):
        data = self.build()
        trig = PatchTrigger(checker_pattern(2, 2, 3), (1, 1), opacity=0.8)
        poisoned, plan = poison_with_patch(data, 2, 0, 0.2, trig)
        save_plan(plan, tmp_path, pattern=trig.pattern)
        replayed = replay_plan(data, tmp_path)
        for a, b in zip(poisoned, replayed):
            assert a.image == b.image and a.label == b.label and a.provenance == b.provenance

    def test_hidden_trigger_plan_replay(self, tmp_path):
        rng = np.random.default_rng(10)
        data = self.build(n_per=4)
        m = small_model(rng, dims=(6, 6, 3), K=3)
        trig = PatchTrigger(checker_pattern(2, 2, 3), (0, 0))
        cfg = HiddenTriggerConfig(pixel_budget=0.1, steps=5, step_size=0.02)
        poisoned, plan = poison_with_hidden_trigger(data, m, 1, 0, 0.5, trig, cfg)
        hit = [i for i, s in enumerate(poisoned) if s.provenance is Provenance.POISONED]
        assert all(poisoned[i].label == 0 for i in hit)
        assert all(linf_distance(poisoned[i].image, data[i].image) <= 0.1 + 1e-6 for i in hit)
        save_plan(plan, tmp_path, pattern=trig.pattern)
        replayed = replay_plan(data, tmp_path, model=m)
        for a, b in zip(poisoned, replayed):
            assert a.image == b.image

    def test_same_class_rejected(self):
        data = self.build()
        trig = PatchTrigger(checker_pattern(2, 2, 3), (0, 0))
        with pytest.raises(ValueError):
            poison_with_patch(data, 1, 1, 0.3, trig)
