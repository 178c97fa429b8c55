"""Optimizer, augmentation, and epoch-loop tests.

Hand-worked optimizer steps, an independent scalar AdamW oracle, masking
count identities, and bit-level reproducibility of the training loop.
"""

import json
import math

import numpy as np
import pytest

from lhgnn import model as M
from lhgnn import tensor as T
from lhgnn.checkpoint import load_checkpoint
from lhgnn.errors import ConfigError, DimensionError, NumericsError, ParameterError
from lhgnn.training import (
    AdamW,
    AugmentConfig,
    OptimConfig,
    TrainConfig,
    compute_loss,
    cosine_lr,
    evaluate_arrays,
    mixup,
    spec_augment,
    train_arrays,
)


def scalar_store(**values):
    params = T.ParamStore()
    for name, value in values.items():
        params.add(name, np.asarray(value, dtype=np.float64), dtype=np.float64)
    return params


class TestAdamW:
    def test_first_step_unit_gradient(self):
        # theta=0, g=1, lr=0.1: bias-corrected m_hat=v_hat=1, decay term 0
        params = scalar_store(w=[0.0])
        opt = AdamW(params, OptimConfig(lr=0.1))
        opt.step({"w": np.array([1.0])})
        assert params["w"].data[0] == pytest.approx(-0.1, abs=1e-6)

    def test_decay_only_path(self):
        # g=0 keeps both moments at 0, so only decoupled decay acts
        params = scalar_store(w=[1.0])
        opt = AdamW(params, OptimConfig(lr=0.1, weight_decay=0.05))
        opt.step({"w": np.array([0.0])})
        assert params["w"].data[0] == pytest.approx(0.995, abs=1e-12)

    def test_zero_grad_zero_decay_is_identity(self):
        params = scalar_store(w=[0.3, -1.7])
        before = params["w"].data.copy()
        opt = AdamW(params, OptimConfig(lr=0.1, weight_decay=0.0))
        opt.step({"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"].data, before)

    def test_zero_lr_is_identity(self):
        params = scalar_store(w=[0.5])
        opt = AdamW(params, OptimConfig(lr=1e-3, weight_decay=0.05))
        opt.step({"w": np.array([2.0])}, lr=0.0)
        assert params["w"].data[0] == 0.5

    def test_matches_scalar_reference_over_steps(self):
        cfg = OptimConfig(lr=0.07, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.02)
        rng = np.random.default_rng(3)
        grads = rng.normal(size=12)

        theta, m, v = 0.4, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            theta -= cfg.lr * (m_hat / (math.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)

        params = scalar_store(w=[0.4])
        opt = AdamW(params, cfg)
        for g in grads:
            opt.step({"w": np.array([g])})
        assert params["w"].data[0] == pytest.approx(theta, rel=1e-12)

    def test_non_finite_gradient_aborts_before_any_mutation(self):
        params = scalar_store(a=[1.0], b=[2.0])
        opt = AdamW(params, OptimConfig(lr=0.1))
        with pytest.raises(NumericsError):
            opt.step({"a": np.array([0.5]), "b": np.array([np.nan])})
        assert params["a"].data[0] == 1.0
        assert params["b"].data[0] == 2.0
        assert opt.step_count == 0
        assert opt._m["a"][0] == 0.0
        with pytest.raises(NumericsError):
            opt.step({"a": np.array([np.inf]), "b": np.array([0.0])})
        opt.step({"a": np.array([0.1]), "b": np.array([0.1])})  # recovers
        assert opt.step_count == 1

    def test_missing_gradient_rejected(self):
        params = scalar_store(a=[1.0], b=[2.0])
        opt = AdamW(params)
        with pytest.raises(ParameterError):
            opt.step({"a": np.array([0.5])})

    def test_quadratic_bowl_monotone_descent(self):
        params = scalar_store(w=np.linspace(0.5, 2.0, 5))
        opt = AdamW(params, OptimConfig(lr=0.05, weight_decay=0.0))
        losses = [0.5 * float((params["w"].data ** 2).sum())]
        for _ in range(100):
            opt.step({"w": params["w"].data.copy()})
            losses.append(0.5 * float((params["w"].data ** 2).sum()))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_float32_params_stay_float32(self):
        params = T.ParamStore()
        params.add("w", np.ones(3))
        opt = AdamW(params, OptimConfig(lr=0.01))
        opt.step({"w": np.full(3, 0.5)})
        assert params["w"].data.dtype == np.float32


class TestCosineSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(1e-3, 0, 11) == pytest.approx(1e-3)
        assert cosine_lr(1e-3, 10, 11) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(1e-3, 5, 11) == pytest.approx(5e-4)

    def test_single_epoch_run_keeps_base(self):
        assert cosine_lr(2e-4, 0, 1) == 2e-4


class TestMixup:
    def test_lambda_one_returns_first_sample(self):
        rng = np.random.default_rng(0)
        x_a, x_b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        y_a, y_b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        mx, my = mixup(x_a, y_a, x_b, y_b, 1.0)
        np.testing.assert_array_equal(mx, x_a)
        np.testing.assert_array_equal(my, y_a)

    def test_halfway_between_constants(self):
        mx, _ = mixup(np.zeros((2, 2)), [1.0], np.full((2, 2), 2.0), [0.0], 0.5)
        np.testing.assert_array_equal(mx, np.ones((2, 2)))

    def test_one_hot_labels_blend(self):
        _, my = mixup(np.zeros(2), [1.0, 0.0], np.zeros(2), [0.0, 1.0], 0.3)
        np.testing.assert_allclose(my, [0.3, 0.7])

    def test_label_mass_preserved(self):
        rng = np.random.default_rng(1)
        y_a = rng.integers(0, 2, size=10).astype(float)
        y_b = rng.integers(0, 2, size=10).astype(float)
        lam = 0.37
        _, my = mixup(np.zeros(3), y_a, np.zeros(3), y_b, lam)
        assert my.sum() == pytest.approx(lam * y_a.sum() + (1 - lam) * y_b.sum())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mixup(np.zeros((2, 2)), [1.0], np.zeros((2, 3)), [0.0], 0.5)
        with pytest.raises(DimensionError):
            mixup(np.zeros(2), [1.0, 0.0], np.zeros(2), [1.0], 0.5)


class ScriptedRNG:
    """Deterministic integers() stand-in; checks each draw's bounds."""

    def __init__(self, draws):
        self.draws = list(draws)

    def integers(self, low, high):
        value = self.draws.pop(0)
        assert low <= value < high
        return value


class TestSpecAugment:
    def test_zero_width_config_is_identity(self):
        x = np.random.default_rng(0).normal(size=(32, 8))
        out = spec_augment(x, AugmentConfig(time_mask=0, freq_mask=0), np.random.default_rng(1))
        assert out.tobytes() == x.tobytes()
        assert out is not x

    def test_full_width_time_mask_zeroes_everything(self):
        x = np.ones((6, 5))
        out = spec_augment(x, AugmentConfig(time_mask=6, freq_mask=0), ScriptedRNG([6, 0, 0, 0]))
        np.testing.assert_array_equal(out, 0.0)

    def test_scripted_placement_and_count(self):
        x = np.ones((6, 5))
        # time: width 2 at row 3; freq: width 1 at col 4
        out = spec_augment(x, AugmentConfig(time_mask=4, freq_mask=3), ScriptedRNG([2, 3, 1, 4]))
        np.testing.assert_array_equal(out[3:5], 0.0)
        np.testing.assert_array_equal(out[:, 4], 0.0)
        assert int((out == 0).sum()) == 2 * 5 + 1 * 6 - 2 * 1
        untouched = np.ones((6, 5), dtype=bool)
        untouched[3:5] = False
        untouched[:, 4] = False
        np.testing.assert_array_equal(out[untouched], x[untouched])

    def test_inclusion_exclusion_count_at_full_extent(self):
        cfg = AugmentConfig()  # 192 frames, 48 bins
        base = np.random.default_rng(2).normal(size=(1024, 128)) + 5.0
        for seed in range(10):
            out = spec_augment(base, cfg, np.random.default_rng(seed))
            w_t = int((out == 0).all(axis=1).sum())
            w_f = int((out == 0).all(axis=0).sum())
            assert w_t <= 192 and w_f <= 48
            assert int((out == 0).sum()) == w_t * 128 + w_f * 1024 - w_t * w_f
            touched = (out == 0)
            np.testing.assert_array_equal(out[~touched], base[~touched])

    def test_masks_wider_than_input_rejected(self):
        with pytest.raises(ParameterError):
            spec_augment(np.ones((8, 4)), AugmentConfig(time_mask=9, freq_mask=0), np.random.default_rng(0))


class TestLossDispatch:
    def test_multilabel_and_multiclass(self):
        logits = T.constant(np.zeros((2, 3)))
        bce = compute_loss(logits, np.zeros((2, 3)), "multilabel")
        assert bce.item() == pytest.approx(math.log(2.0))
        ce = compute_loss(logits, np.array([0, 2]), "multiclass")
        assert ce.item() == pytest.approx(math.log(3.0))

    def test_validation(self):
        logits = T.constant(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            compute_loss(logits, np.zeros((2, 4)), "multilabel")
        with pytest.raises(DimensionError):
            compute_loss(logits, np.array([0, 3]), "multiclass")
        with pytest.raises(DimensionError):
            compute_loss(logits, np.array([[0], [1]]), "multiclass")
        with pytest.raises(ParameterError):
            compute_loss(logits, np.zeros((2, 3)), "ranking")


def tiny_train_config(**overrides):
    base = dict(
        model=M.tiny_config(num_classes=4),
        augment=AugmentConfig(mixup_alpha=0.5, time_mask=16, freq_mask=4),
        optimizer=OptimConfig(lr=1e-3),
        task="multilabel",
        batch_size=4,
        epochs=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_dataset(n=8, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 64, 16)).astype(np.float32)
    y = (rng.random((n, classes)) < 0.4).astype(np.float64)
    y[0, 0] = 1.0  # at least one positive overall
    return x, y


class TestConfigPlumbing:
    def test_round_trip(self):
        cfg = tiny_train_config()
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.update(warmup=5),
            lambda d: d["model"].update(dropout=0.1),
            lambda d: d["augment"].update(noise=0.2),
            lambda d: d["optimizer"].update(momentum=0.9),
        ],
    )
    def test_unknown_keys_rejected_at_every_level(self, mutate):
        raw = tiny_train_config().to_dict()
        mutate(raw)
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(raw)

    def test_from_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_train_config().to_dict()), encoding="utf-8")
        cfg = TrainConfig.from_json(path)
        assert cfg.model.channels == (8, 16, 32, 64)
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            TrainConfig.from_json(path)

    def test_validation_failures(self):
        with pytest.raises(ConfigError):
            tiny_train_config(task="regression").validate()
        with pytest.raises(ConfigError):
            tiny_train_config(batch_size=0).validate()
        with pytest.raises(ConfigError):
            tiny_train_config(augment=AugmentConfig(time_mask=65)).validate()
        with pytest.raises(ConfigError):
            tiny_train_config(augment=AugmentConfig(mixup_alpha=0.0)).validate()


class TestTrainLoop:
    def test_same_seed_bit_identical_logs_and_params(self):
        x, y = tiny_dataset()
        cfg = tiny_train_config()
        clock = lambda: 0.0
        params_a, lines_a = train_arrays(x, y, cfg, seed=7, clock=clock)
        params_b, lines_b = train_arrays(x, y, cfg, seed=7, clock=clock)
        assert lines_a == lines_b
        for name in params_a.names():
            assert params_a[name].data.tobytes() == params_b[name].data.tobytes()
        _, lines_c = train_arrays(x, y, cfg, seed=8, clock=clock)
        assert lines_a != lines_c

    def test_metric_line_shape(self):
        x, y = tiny_dataset()
        _, lines = train_arrays(x, y, tiny_train_config(), seed=0, val_x=x, val_y=y, clock=lambda: 0.25)
        assert len(lines) == 4  # train and val lines for 2 epochs
        for i, line in enumerate(lines):
            record = json.loads(line)
            assert list(record) == ["epoch", "split", "loss", "mAP", "wall_time_s"]
            assert record["epoch"] == i // 2
            assert record["split"] == ("train" if i % 2 == 0 else "val")
            assert record["wall_time_s"] == 0.0

    def test_multiclass_logs_accuracy(self):
        x, _ = tiny_dataset()
        labels = np.arange(8) % 4
        cfg = tiny_train_config(task="multiclass")
        _, lines = train_arrays(x, labels, cfg, seed=0, clock=lambda: 0.0)
        assert "accuracy" in json.loads(lines[0])

    def test_zero_lr_leaves_trainable_params_at_init(self):
        x, y = tiny_dataset()
        cfg = tiny_train_config(optimizer=OptimConfig(lr=0.0), epochs=1)
        cfg.augment.enabled = False
        params, _ = train_arrays(x, y, cfg, seed=3, clock=lambda: 0.0)
        reference = M.init_params(cfg.model, seed=3)
        for name, tensor in params.trainable():
            assert tensor.data.tobytes() == reference[name].data.tobytes(), name
        # norm buffers still move: training-mode forwards update them
        assert not np.array_equal(
            params["stem.norm0.running_mean"].data,
            reference["stem.norm0.running_mean"].data,
        )

    def test_out_dir_writes_checkpoints_and_log(self, tmp_path):
        x, y = tiny_dataset()
        cfg = tiny_train_config(out_dir=str(tmp_path / "run"))
        params, lines = train_arrays(x, y, cfg, seed=1, clock=lambda: 0.0)
        run = tmp_path / "run"
        assert (run / "epoch_000.ckpt").exists()
        assert (run / "epoch_001.ckpt").exists()
        assert (run / "metrics.jsonl").read_text(encoding="utf-8") == "\n".join(lines) + "\n"
        loaded, loaded_cfg = load_checkpoint(run / "epoch_001.ckpt")
        assert loaded_cfg == cfg.model
        for name in params.names():
            assert loaded[name].data.tobytes() == params[name].data.tobytes()

    def test_on_epoch_early_stop(self):
        x, y = tiny_dataset()
        cfg = tiny_train_config(epochs=5)
        _, lines = train_arrays(x, y, cfg, seed=0, clock=lambda: 0.0, on_epoch=lambda e, _: e < 1)
        assert [json.loads(l)["epoch"] for l in lines] == [0, 1]

    def test_empty_split_rejected(self):
        cfg = tiny_train_config()
        with pytest.raises(ConfigError):
            train_arrays(np.zeros((0, 64, 16)), np.zeros((0, 4)), cfg)


class TestEvaluateArrays:
    def test_batch_size_independence(self):
        x, y = tiny_dataset(n=10)
        cfg = M.tiny_config(num_classes=4)
        params = M.init_params(cfg, seed=0)
        loss_a, metric_a = evaluate_arrays(x, y, params, cfg, "multilabel", batch_size=4)
        loss_b, metric_b = evaluate_arrays(x, y, params, cfg, "multilabel", batch_size=8)
        assert loss_a == pytest.approx(loss_b, abs=1e-5)
        assert metric_a == pytest.approx(metric_b, abs=5e-3)

    def test_empty_rejected(self):
        cfg = M.tiny_config(num_classes=4)
        params = M.init_params(cfg, seed=0)
        with pytest.raises(ConfigError):
            evaluate_arrays(np.zeros((0, 64, 16)), np.zeros((0, 4)), params, cfg, "multilabel")
