import math

import numpy as np
import pytest

from regretgroup.geometry import LabeledCloud, SampledSegment, Segment
from regretgroup.predictor import (
    AdamState,
    HeuristicPredictor,
    NetPredictor,
    OraclePredictor,
    PredictorModel,
    adam_step,
    bce_loss,
    encode_segment,
    heuristic_predict,
    load_model,
    loss_gradients,
    predict_pair,
    save_model,
)


def small_model(seed=0, n=16):
    return PredictorModel.create(encoder_widths=(8, 16), mlp_widths=(16, 8), sample_n=n, seed=seed)


def random_sample(rng, n=16, valid=None):
    valid = n if valid is None else valid
    pts = np.zeros((n, 3))
    pts[:valid] = rng.normal(size=(valid, 3))
    return SampledSegment(pts, valid)


class TestEncodeSegment:
    def test_permutation_invariant(self, rng):
        model = small_model()
        s = random_sample(rng)
        perm = rng.permutation(16)
        shuffled = SampledSegment(s.points[perm], 16)
        np.testing.assert_array_equal(encode_segment(model, s), encode_segment(model, shuffled))

    def test_zero_input_zero_biases_gives_zero(self):
        model = small_model()
        for b in model.encoder_biases:
            b[:] = 0
        s = SampledSegment(np.zeros((16, 3)), 0)
        np.testing.assert_array_equal(encode_segment(model, s), np.zeros(16))

    def test_duplicating_rows_changes_nothing(self, rng):
        model = small_model()
        base = rng.normal(size=(8, 3))
        s1 = SampledSegment(np.vstack([base, np.zeros((8, 3))]), 8)
        s2 = SampledSegment(np.vstack([base, base]), 16)
        np.testing.assert_array_equal(encode_segment(model, s1), encode_segment(model, s2))

    def test_shape_mismatch(self, rng):
        model = small_model()
        with pytest.raises(ValueError):
            encode_segment(model, random_sample(rng, n=8))


class TestPredictPair:
    def test_zero_network_gives_half(self):
        model = small_model()
        for p in model.parameters().values():
            p[:] = 0
        r = np.random.default_rng(0)
        g = predict_pair(model, random_sample(r), random_sample(r))
        assert g == 0.5

    def test_output_in_open_interval(self, rng):
        for seed in range(5):
            model = small_model(seed)
            g = predict_pair(model, random_sample(rng), random_sample(rng))
            assert 0.0 < g < 1.0

    def test_deterministic(self, rng):
        model = small_model(3)
        a, b = random_sample(rng), random_sample(rng)
        assert predict_pair(model, a, b) == predict_pair(model, a, b)


class TestBceLoss:
    def test_half_prediction(self):
        assert bce_loss([0.5], [1]) == pytest.approx(math.log(2), rel=1e-12)

    def test_perfect_prediction_limit(self):
        assert bce_loss([1.0 - 1e-9], [1]) == pytest.approx(0.0, abs=1e-6)

    def test_hand_computed(self):
        want = (-math.log(0.8) - math.log(0.7)) / 2
        assert bce_loss([0.8, 0.3], [1, 0], [1, 1]) == pytest.approx(want, rel=1e-12)
        assert bce_loss([0.8, 0.3], [1, 0]) == pytest.approx(0.28991, abs=1e-5)

    def test_non_negative(self, rng):
        g = rng.uniform(0.01, 0.99, 20)
        y = rng.integers(0, 2, 20)
        assert bce_loss(g, y) >= 0.0

    def test_clamps_extremes(self):
        assert math.isfinite(bce_loss([1.0], [0]))

    def test_validates_labels(self):
        with pytest.raises(ValueError):
            bce_loss([0.5], [2])


def finite_difference_check(model, xa, xb, y, w, weight_decay, h=1e-4):
    """Max relative error between analytic and central-difference gradients."""
    _, _, grads = loss_gradients(model, xa, xb, y, w, weight_decay=weight_decay)
    params = model.parameters()
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _, _ = loss_gradients(model, xa, xb, y, w, weight_decay=weight_decay)
            flat[j] = orig - h
            lm, _, _ = loss_gradients(model, xa, xb, y, w, weight_decay=weight_decay)
            flat[j] = orig
            numeric = (lp - lm) / (2 * h)
            analytic = grads[name].reshape(-1)[j]
            scale = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


class TestLossGradients:
    def test_matches_finite_differences(self):
        r = np.random.default_rng(7)
        model = PredictorModel.create((4, 6), (6,), sample_n=8, seed=1)
        for b in model.encoder_biases + model.mlp_biases:
            b[:] = r.normal(scale=0.1, size=b.shape)
        xa = r.normal(size=(3, 8, 3))
        xb = r.normal(size=(3, 8, 3))
        y = np.array([1.0, 0.0, 1.0])
        w = np.array([1.0, 2.0, 0.5])
        worst = finite_difference_check(model, xa, xb, y, w, weight_decay=1e-3)
        assert worst < 1e-4

    def test_duplicate_batch_element_mean_semantics(self, rng):
        model = small_model(5, n=8)
        xa = rng.normal(size=(1, 8, 3))
        xb = rng.normal(size=(1, 8, 3))
        y = np.array([1.0])
        _, _, g1 = loss_gradients(model, xa, xb, y)
        _, _, g2 = loss_gradients(model, np.repeat(xa, 2, 0), np.repeat(xb, 2, 0), np.array([1.0, 1.0]))
        for name in g1:
            np.testing.assert_allclose(g1[name], g2[name], atol=1e-12)

    def test_saturated_correct_prediction_has_tiny_gradient(self, rng):
        model = small_model(2, n=8)
        model.mlp_biases[-1][:] = 40.0  # force g ~ 1
        xa = rng.normal(size=(1, 8, 3))
        xb = rng.normal(size=(1, 8, 3))
        _, bce, grads = loss_gradients(model, xa, xb, np.array([1.0]))
        assert bce < 1e-6
        assert max(np.abs(g).max() for g in grads.values()) < 1e-6

    def test_l2_term_only_on_weights(self):
        model = small_model(1, n=8)
        xa = np.zeros((1, 8, 3))
        xb = np.zeros((1, 8, 3))
        t0, b0, g0 = loss_gradients(model, xa, xb, np.array([1.0]), weight_decay=0.0)
        t1, b1, g1 = loss_gradients(model, xa, xb, np.array([1.0]), weight_decay=0.1)
        assert b1 == pytest.approx(b0)
        expected = 0.1 * sum(float((m * m).sum()) for m in model.encoder_weights + model.mlp_weights)
        assert t1 - t0 == pytest.approx(expected, rel=1e-9)
        np.testing.assert_allclose(g1["enc_b0"], g0["enc_b0"], atol=1e-12)
        np.testing.assert_allclose(
            g1["mlp_w0"] - g0["mlp_w0"], 0.2 * model.mlp_weights[0], atol=1e-12
        )


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        model = small_model(4)
        before = {k: v.copy() for k, v in model.parameters().items()}
        state = AdamState.for_model(model)
        grads = {k: np.zeros_like(v) for k, v in model.parameters().items()}
        adam_step(model, grads, state)
        assert state.step == 1
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_constant_gradient_approaches_lr_step(self):
        # scalar Adam recurrence: with constant gradient the step tends to lr
        m = v = 0.0
        theta = 0.0
        lr, b1, b2, eps = 0.001, 0.9, 0.999, 1e-8
        steps = []
        for t in range(1, 2001):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            step = lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            theta -= step
            steps.append(step)
        assert steps[-1] == pytest.approx(lr, rel=1e-3)

    def test_deterministic(self, rng):
        g = {k: rng.normal(size=v.shape) for k, v in small_model(6).parameters().items()}
        results = []
        for _ in range(2):
            model = small_model(6)
            state = AdamState.for_model(model)
            adam_step(model, g, state)
            results.append({k: v.copy() for k, v in model.parameters().items()})
        for k in results[0]:
            np.testing.assert_array_equal(results[0][k], results[1][k])


def labeled_cloud():
    pts = np.vstack(
        [
            np.random.default_rng(0).uniform(0, 1, (30, 3)),
            np.random.default_rng(1).uniform(2, 3, (30, 3)),
            np.random.default_rng(2).uniform(5, 6, (10, 3)),
        ]
    )
    labels = np.array([3] * 30 + [7] * 30 + [0] * 10)
    return LabeledCloud(pts, labels)


class TestOracle:
    def test_same_object(self):
        cloud = labeled_cloud()
        oracle = OraclePredictor(cloud)
        a = Segment(0, np.arange(0, 15))
        b = Segment(1, np.arange(15, 30))
        assert oracle.predict(cloud, a, b) == 1.0

    def test_different_objects(self):
        cloud = labeled_cloud()
        oracle = OraclePredictor(cloud)
        assert oracle.predict(cloud, Segment(0, np.arange(0, 30)), Segment(1, np.arange(30, 60))) == 0.0

    def test_majority_rule(self):
        cloud = labeled_cloud()
        oracle = OraclePredictor(cloud)
        mixed = Segment(0, np.arange(0, 25).tolist() + np.arange(30, 46).tolist())  # 25 of 3, 16 of 7
        pure = Segment(1, np.arange(25, 30))
        assert oracle.majority_label(mixed) == 3
        assert oracle.predict(cloud, mixed, pure) == 1.0

    def test_background_majority_is_never_groupable(self):
        cloud = labeled_cloud()
        oracle = OraclePredictor(cloud)
        bg = Segment(0, np.arange(60, 70))
        assert oracle.predict(cloud, bg, bg) == 0.0

    def test_requires_labels(self):
        with pytest.raises(ValueError):
            OraclePredictor(LabeledCloud(np.zeros((3, 3))))


class TestHeuristic:
    def test_identical_segments_score_high(self):
        cloud = labeled_cloud()
        seg = Segment(0, np.arange(0, 30))
        assert heuristic_predict(cloud, seg, seg) > 0.5

    def test_distant_segments_score_low(self):
        r = np.random.default_rng(3)
        pts = np.vstack([r.uniform(0, 0.2, (20, 3)), r.uniform(10, 10.2, (20, 3))])
        cloud = LabeledCloud(pts)
        a = Segment(0, np.arange(20))
        b = Segment(1, np.arange(20, 40))
        assert heuristic_predict(cloud, a, b) < 0.5

    def test_monotone_under_rigid_separation(self):
        r = np.random.default_rng(4)
        base = r.uniform(0, 0.1, (25, 3))
        prev = 1.0
        for shift in np.linspace(0.0, 1.0, 8):
            pts = np.vstack([base, base + np.array([shift + 0.02, 0, 0])])
            cloud = LabeledCloud(pts)
            score = heuristic_predict(cloud, Segment(0, np.arange(25)), Segment(1, np.arange(25, 50)))
            assert score <= prev + 1e-12
            prev = score


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        model = small_model(9)
        path = tmp_path / "model.txt"
        save_model(model, path)
        back = load_model(path)
        assert back.sample_n == model.sample_n
        assert back.encoder_widths == model.encoder_widths
        assert back.mlp_widths == model.mlp_widths
        for k, v in model.parameters().items():
            np.testing.assert_allclose(back.parameters()[k], v, rtol=1e-8, atol=1e-12)

    def test_header_format(self, tmp_path):
        path = tmp_path / "model.txt"
        save_model(small_model(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "RGMODEL 1"
        assert lines[1] == "sample_n 16"
        assert lines[2].startswith("tensor enc_w0 3 8")

    def test_rejects_bad_version(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("RGMODEL 2\nsample_n 4\n")
        with pytest.raises(ValueError):
            load_model(path)

    def test_predictions_survive_roundtrip(self, tmp_path, rng):
        model = small_model(11)
        path = tmp_path / "model.txt"
        save_model(model, path)
        back = load_model(path)
        pts = rng.uniform(0, 1, (40, 3))
        cloud = LabeledCloud(pts)
        a, b = Segment(0, np.arange(20)), Segment(1, np.arange(20, 40))
        g1 = NetPredictor(model).predict(cloud, a, b)
        g2 = NetPredictor(back).predict(cloud, a, b)
        assert g1 == pytest.approx(g2, abs=1e-6)
