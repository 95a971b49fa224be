import numpy as np
import numpy.testing as npt
import pytest

from latticeseg.config import Config
from latticeseg.errors import DegenerateInputError, TrainingError
from latticeseg.loss import cross_entropy
from latticeseg.model import backward_full, forward_full, init_params, load_model, save_model
from latticeseg.tensor import softmax_channels
from latticeseg.training import GradCheckReport, OptimizerState, grad_check, sgd_step, train
from oracles import fd_gradient, max_rel_err

TINY = Config(
    class_count=3,
    image_channels=1,
    backbone_filters=(4, 6),
    taps=(1, 2),
    attention_filters=5,
    precision="double",
)


class Sample:
    def __init__(self, image, labels, sample_id="s"):
        self.image = image
        self.labels = labels
        self.sample_id = sample_id


def tiny_sample(rng, size=16, classes=3):
    image = rng.uniform(0.1, 0.9, size=(size, size, 1))
    labels = rng.integers(0, classes, size=(size, size)).astype(np.uint8)
    return Sample(image, labels)


class TestCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        probs = np.zeros((2, 2, 3))
        labels = np.array([[0, 1], [2, 0]], dtype=np.uint8)
        for r in range(2):
            for c in range(2):
                probs[r, c, labels[r, c]] = 1.0
        assert cross_entropy(probs, labels).loss == pytest.approx(0.0)

    def test_uniform_prediction_log_c(self):
        probs = np.full((3, 3, 4), 0.25)
        labels = np.zeros((3, 3), dtype=np.uint8)
        assert cross_entropy(probs, labels).loss == pytest.approx(np.log(4.0), rel=1e-12)
        assert cross_entropy(probs, labels).loss == pytest.approx(1.386294, abs=1e-6)

    def test_matches_scalar_summation(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((4, 5, 3))
        probs = softmax_channels(logits)
        labels = rng.integers(0, 3, size=(4, 5)).astype(np.uint8)
        labels[0, 0] = 255
        report = cross_entropy(probs, labels)
        acc = 0.0
        n = 0
        for r in range(4):
            for c in range(5):
                if labels[r, c] == 255:
                    continue
                acc -= np.log(probs[r, c, labels[r, c]])
                n += 1
        assert report.loss == pytest.approx(acc / n, rel=1e-12)
        assert report.pixel_count == n

    def test_logit_gradient_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((3, 4, 3))
        labels = rng.integers(0, 3, size=(3, 4)).astype(np.uint8)
        labels[1, 1] = 255

        def loss():
            return cross_entropy(softmax_channels(logits), labels).loss

        report = cross_entropy(softmax_channels(logits), labels)
        assert max_rel_err(report.d_logits, fd_gradient(loss, logits, step=1e-6)) < 1e-6

    def test_ignored_pixels_inert(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((3, 3, 2))
        labels = rng.integers(0, 2, size=(3, 3)).astype(np.uint8)
        labels[2, 2] = 255
        base = cross_entropy(softmax_channels(logits), labels)
        bumped = logits.copy()
        bumped[2, 2] += 5.0
        after = cross_entropy(softmax_channels(bumped), labels)
        assert base.loss == after.loss
        npt.assert_array_equal(base.d_logits, after.d_logits)
        assert not base.d_logits[2, 2].any()

    def test_all_ignored_rejected(self):
        probs = np.full((2, 2, 2), 0.5)
        labels = np.full((2, 2), 255, dtype=np.uint8)
        with pytest.raises(DegenerateInputError):
            cross_entropy(probs, labels)


class TestSgd:
    def test_zero_momentum_is_vanilla(self):
        cfg = TINY.replace(momentum=0.0, learning_rate=0.1)
        params = init_params(cfg, seed=0)
        before = {k: v.copy() for k, v in params.array_dict().items()}
        grads = {k: np.ones_like(v) for k, v in params.array_dict().items()}
        state = OptimizerState.from_config(cfg)
        sgd_step(params, grads, state)
        for k, v in params.array_dict().items():
            npt.assert_allclose(v, before[k] - 0.1, rtol=1e-12)

    def test_two_momentum_steps_hand_expanded(self):
        cfg = TINY.replace(momentum=0.9, learning_rate=0.01)
        params = init_params(cfg, seed=0)
        name = "level0/b_y"
        w0 = params.array_dict()[name].copy()
        g = np.full_like(w0, 2.0)
        state = OptimizerState.from_config(cfg)
        sgd_step(params, {name: g}, state)
        sgd_step(params, {name: g}, state)
        # v1 = -eta*g; v2 = 0.9*v1 - eta*g => w2 = w0 - eta*g*(1 + 1.9)
        npt.assert_allclose(params.array_dict()[name], w0 - 0.01 * 2.0 * (1.0 + 1.9), rtol=1e-12)

    def test_learning_rate_schedule(self):
        state = OptimizerState(base_lr=1e-3, decay=0.9, constant_epochs=10)
        state.epoch = 1
        assert state.learning_rate() == pytest.approx(1e-3)
        state.epoch = 10
        assert state.learning_rate() == pytest.approx(1e-3)
        state.epoch = 11
        assert state.learning_rate() == pytest.approx(9e-4, rel=1e-12)
        state.epoch = 13
        assert state.learning_rate() == pytest.approx(1e-3 * 0.9**3, rel=1e-12)

    def test_non_finite_gradient_names_parameter(self):
        cfg = TINY
        params = init_params(cfg, seed=0)
        grads = {"level0/b_y": np.array([np.nan, 0.0, 0.0])}
        with pytest.raises(TrainingError, match="level0/b_y"):
            sgd_step(params, grads, OptimizerState.from_config(cfg))

    def test_clip_norm(self):
        cfg = TINY.replace(momentum=0.0, learning_rate=1.0, clip_norm=1.0)
        params = init_params(cfg, seed=0)
        name = "level0/b_y"
        w0 = params.array_dict()[name].copy()
        g = np.array([3.0, 0.0, 4.0])  # norm 5 -> scaled by 1/5
        sgd_step(params, {name: g}, OptimizerState.from_config(cfg))
        npt.assert_allclose(params.array_dict()[name], w0 - g / 5.0, rtol=1e-12)


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TINY, seed=3)
        b = init_params(TINY, seed=3)
        for (na, va), (nb, vb) in zip(a.named_arrays(), b.named_arrays()):
            assert na == nb
            npt.assert_array_equal(va, vb)

    def test_biases_zero(self):
        params = init_params(TINY, seed=0)
        for name, arr in params.named_arrays():
            if "bias" in name or name.endswith("b_h") or name.endswith("b_y"):
                assert not arr.any(), name

    def test_weight_bounds(self):
        params = init_params(TINY, seed=1)
        checks = {
            "backbone/stage0/kernels": np.sqrt(6.0 / (9 * 1 + 9 * 4)),
            "level0/w_in": np.sqrt(6.0 / (4 + 4)),
            "level0/w_out": np.sqrt(6.0 / (4 + 3)),
            "level0/w_global": np.sqrt(6.0 / (36 + 4)),
        }
        arrays = params.array_dict()
        for name, bound in checks.items():
            arr = arrays[name]
            assert np.abs(arr).max() <= bound
            assert np.abs(arr).max() > 0.5 * bound  # actually fills the interval

    def test_flat_enumeration_unique_and_complete(self):
        params = init_params(TINY, seed=0)
        names = [n for n, _ in params.named_arrays()]
        assert len(names) == len(set(names))
        ids = [id(a) for _, a in params.named_arrays()]
        assert len(ids) == len(set(ids))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(TINY, seed=5)
        path = tmp_path / "params.bin"
        save_model(path, params)
        loaded = load_model(path, TINY)
        for (na, va), (nb, vb) in zip(params.named_arrays(), loaded.named_arrays()):
            assert na == nb
            npt.assert_array_equal(va, vb)

    def test_single_precision_round_trip(self, tmp_path):
        cfg = TINY.replace(precision="single")
        params = init_params(cfg, seed=5)
        path = tmp_path / "params.bin"
        save_model(path, params)
        loaded = load_model(path, cfg)
        for (_, va), (_, vb) in zip(params.named_arrays(), loaded.named_arrays()):
            assert va.dtype == vb.dtype == np.float32
            npt.assert_array_equal(va, vb)


class TestGradCheck:
    def test_linear_degenerate_model_near_exact(self):
        # Zeroed recurrent/context matrices leave an affine map into softmax.
        rng = np.random.default_rng(3)
        cfg = TINY.replace(fusion="average")
        params = init_params(cfg, seed=2)
        for name, arr in params.named_arrays():
            if "w_rec" in name or "w_global" in name or "w_topic" in name:
                arr[...] = 0.0
        image = rng.uniform(0.1, 0.9, size=(16, 16, 1))
        labels = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
        report = grad_check(
            params, image, labels, cfg, per_family=4, seed=0,
            families=("w_out", "b_y"), include_input=False,
        )
        # Affine paths leave only softmax curvature: bias probes sit at
        # rounding level, the rest at FD truncation level.
        assert report.per_family["level0/b_y"] < 1e-8
        assert report.max_error < 1e-6

    def test_full_tiny_model(self):
        rng = np.random.default_rng(4)
        params = init_params(TINY, seed=2)
        image = rng.uniform(0.1, 0.9, size=(16, 16, 1))
        labels = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
        report = grad_check(params, image, labels, TINY, per_family=4, seed=0)
        assert report.max_error < 1e-5
        assert "input/image" in report.per_family

    def test_corrupted_gradient_detected(self):
        # Doubling the analytic value makes |a - n| / max(|a|, |n|) = 1/2.
        assert abs(2.0 - 1.0) / max(2.0, 1.0, 1e-8) == pytest.approx(0.5)
        rng = np.random.default_rng(5)
        params = init_params(TINY, seed=2)
        image = rng.uniform(0.1, 0.9, size=(16, 16, 1))
        labels = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
        result = forward_full(image, params, TINY, labels=labels)
        grads, _ = backward_full(result.cache, params, TINY, result.report.d_logits)
        honest = grads["level0/w_out"].copy()

        from latticeseg.context import topic_feature
        from latticeseg.training import _relative_error

        topic = topic_feature(image, TINY.topic)
        arr = params.array_dict()["level0/w_out"]
        flat = arr.reshape(-1)
        idx = int(np.argmax(np.abs(honest)))
        corrupted = 2.0 * honest.reshape(-1)[idx]
        s = flat[idx]
        flat[idx] = s + 1e-5
        up = forward_full(image, params, TINY, labels=labels, topic=topic).report.loss
        flat[idx] = s - 1e-5
        down = forward_full(image, params, TINY, labels=labels, topic=topic).report.loss
        flat[idx] = s
        numeric = (up - down) / 2e-5
        assert _relative_error(corrupted, numeric) == pytest.approx(0.5, abs=0.01)

    def test_report_formatting(self):
        report = GradCheckReport({"a": 1e-7, "b": 3e-6}, 1e-5)
        assert report.max_error == 3e-6
        assert "max" in report.format_table()


class TestTrainLoop:
    def test_zero_learning_rate_keeps_params(self):
        rng = np.random.default_rng(6)
        cfg = TINY.replace(learning_rate=0.0, epochs=3)
        samples = [tiny_sample(rng) for _ in range(2)]
        params = init_params(cfg, seed=1)
        before = {k: v.copy() for k, v in params.array_dict().items()}
        result = train(samples, cfg, params=params)
        for k, v in result.params.array_dict().items():
            npt.assert_array_equal(v, before[k])
        losses = [row["loss"] for row in result.log]
        assert losses[0] == losses[1] == losses[2]

    def test_fixed_seed_bit_identical_trace(self):
        rng = np.random.default_rng(7)
        samples = [tiny_sample(rng) for _ in range(3)]
        cfg = TINY.replace(epochs=3, seed=11)
        first = train(samples, cfg)
        second = train(samples, cfg)
        assert [r["loss"] for r in first.log] == [r["loss"] for r in second.log]

    def test_empty_dataset_rejected(self):
        with pytest.raises(TrainingError):
            train([], TINY)

    def test_log_columns_and_checkpoint(self, tmp_path):
        rng = np.random.default_rng(8)
        samples = [tiny_sample(rng) for _ in range(2)]
        cfg = TINY.replace(epochs=2)
        result = train(samples, cfg, out_dir=str(tmp_path))
        assert (tmp_path / "log.csv").exists()
        assert (tmp_path / "params.bin").exists()
        header = (tmp_path / "log.csv").read_text().splitlines()[0]
        assert header == "epoch,loss,pixel_acc,class_acc,lr"
        assert len(result.log) == 2
        loaded = load_model(tmp_path / "params.bin", cfg)
        for (_, va), (_, vb) in zip(result.params.named_arrays(), loaded.named_arrays()):
            npt.assert_array_equal(va, vb)

    def test_freeze_zeroes_and_pins(self):
        rng = np.random.default_rng(9)
        samples = [tiny_sample(rng)]
        cfg = TINY.replace(epochs=2)
        result = train(samples, cfg, freeze=("w_rec", "w_global", "w_topic"))
        for name, arr in result.params.named_arrays():
            if any(tag in name for tag in ("w_rec", "w_global", "w_topic")):
                assert not arr.any(), name

    def test_summed_gradients_order_invariant(self):
        rng = np.random.default_rng(10)
        samples = [tiny_sample(rng) for _ in range(3)]
        cfg = TINY
        params = init_params(cfg, seed=4)

        def batch_grads(order):
            total = None
            for idx in order:
                s = samples[idx]
                result = forward_full(s.image, params, cfg, labels=s.labels)
                grads, _ = backward_full(result.cache, params, cfg, result.report.d_logits)
                if total is None:
                    total = {k: v.copy() for k, v in grads.items()}
                else:
                    for k in total:
                        total[k] += grads[k]
            return total

        a = batch_grads([0, 1, 2])
        b = batch_grads([2, 0, 1])
        for k in a:
            npt.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)
