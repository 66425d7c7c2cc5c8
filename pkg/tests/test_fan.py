import math

import numpy as np
import pytest

import kgdebias.fan as fan_mod
from kgdebias.fan import (
    FanDivergenceError,
    FanModel,
    FanTrainConfig,
    adversarial_train,
    apply_filter,
    discriminator_gradients,
    fan_loss,
    filter_gradients,
    load_fan,
    pretrain,
    save_fan,
    train_fan,
)
from kgdebias.nn import Mlp


def central_diff(f, arr, h=1e-5):
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))


def identity_filter(d):
    # relu(x) - relu(-x) == x exactly
    f = Mlp([d, 2 * d, d], "leaky_relu", "linear", 0.0, slope=0.0)
    f.weights[0][:] = np.hstack([np.eye(d), -np.eye(d)])
    f.weights[1][:] = np.vstack([np.eye(d), -np.eye(d)])
    f.biases[0][:] = 0
    f.biases[1][:] = 0
    return f


def blobs(n=600, d=8, sep=1.0, seed=0):
    """Binary labels carried by coordinate 0; other coordinates are noise."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    h = rng.normal(scale=0.3, size=(n, d))
    h[:, 0] += sep * (2 * y - 1)
    return h, y


class TestLoss:
    def test_decomposition_exact(self):
        rng = np.random.default_rng(0)
        for lam in (0.0, 0.05, 0.5, 7.0):
            m = FanModel.create(6, lam, seed=1, disc_dropout=0.0)
            h, y = rng.normal(size=(20, 6)), rng.integers(0, 2, 20)
            loss = fan_loss(m, h, y)
            assert abs(loss.total - (lam * loss.recon + loss.ce)) <= 1e-12
            fh = m.filter(h)
            p = m.discriminator(fh)[:, 0]
            assert loss.recon == pytest.approx(np.mean(np.sum((fh - h) ** 2, axis=1)), rel=1e-12)
            assert loss.ce == pytest.approx(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)), rel=1e-9)
            assert loss.ce <= 0

    def test_identity_filter_zero_recon(self):
        d = 5
        m = FanModel(identity_filter(d), FanModel.create(d, 1.0).discriminator, 3.0)
        h = np.random.default_rng(0).normal(size=(50, d)) * 10
        assert fan_loss(m, h, np.zeros(50)).recon == 0.0

    def test_half_discriminator_ln2(self):
        m = FanModel.create(4, 0.5, seed=0)
        m.discriminator.weights[-1][:] = 0
        m.discriminator.biases[-1][:] = 0
        loss = fan_loss(m, np.random.default_rng(0).normal(size=(9, 4)), np.arange(9) % 2)
        assert abs(loss.ce) == pytest.approx(math.log(2), abs=1e-12)
        assert abs(loss.ce) == pytest.approx(0.693147, abs=1e-6)

    def test_lambda_zero_is_ce_only(self):
        m = FanModel.create(4, 0.0, seed=2)
        loss = fan_loss(m, np.ones((3, 4)), [0, 1, 1])
        assert loss.total == loss.ce

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            fan_loss(FanModel.create(2, 1.0), np.zeros((2, 2)), [0, 2])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            fan_loss(FanModel.create(2, 1.0), np.zeros((2, 3)), [0, 1])


class TestGradients:
    @pytest.mark.parametrize("objective", ["minimax", "confusion"])
    def test_filter_gradient_through_discriminator(self, objective):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 20:
            m = FanModel.create(5, float(rng.uniform(0.05, 2)), disc_dropout=0.0, seed=int(rng.integers(1 << 30)))
            h, y = rng.normal(size=(4, 5)), rng.integers(0, 2, 4)
            _, cf = m.filter.forward(h)
            _, cd = m.discriminator.forward(m.filter(h))
            if min(np.abs(z).min() for z in cf.pre[:-1] + cd.pre[:-1]) < 1e-3:
                continue

            def objective_value():
                if objective == "minimax":
                    return fan_loss(m, h, y).total
                fh = m.filter(h)
                p = m.discriminator(fh)[:, 0]
                conf = -np.mean(0.5 * np.log(p) + 0.5 * np.log(1 - p))
                return m.lam * np.mean(np.sum((fh - h) ** 2, axis=1)) + conf

            _, grads = filter_gradients(m, h, y, objective=objective)
            for p, g in zip(m.filter.params, grads):
                assert rel_err(g, central_diff(objective_value, p)) < 1e-4
            checked += 1

    def test_discriminator_gradient(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 20:
            m = FanModel.create(4, 0.5, disc_dropout=0.0, seed=int(rng.integers(1 << 30)))
            h, y = rng.normal(size=(5, 4)), rng.integers(0, 2, 5)
            _, cd = m.discriminator.forward(m.filter(h))
            if min(np.abs(z).min() for z in cd.pre[:-1]) < 1e-3:
                continue
            _, _, grads = discriminator_gradients(m, h, y)
            for p, g in zip(m.discriminator.params, grads):
                num = central_diff(lambda: discriminator_gradients(m, h, y)[0], p)
                assert rel_err(g, num) < 1e-4
            checked += 1

    def test_filter_gradients_leave_discriminator_alone(self):
        m = FanModel.create(4, 0.5, seed=0)
        before = [p.copy() for p in m.discriminator.params]
        filter_gradients(m, np.ones((3, 4)), [0, 1, 0], train=True, rng=np.random.default_rng(0))
        for a, b in zip(before, m.discriminator.params):
            np.testing.assert_array_equal(a, b)


class TestPretrain:
    def test_identity_within_one_percent_held_out(self):
        rng = np.random.default_rng(0)
        centers = rng.normal(size=(12, 50))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        pts = centers[rng.integers(0, 12, 2500)] * 0.8 + rng.normal(scale=0.05, size=(2500, 50))
        h, held = pts[:2000], pts[2000:]
        y = rng.integers(0, 2, 2000)
        m = FanModel.create(50, 0.5, disc_dropout=0.0, seed=0)
        pretrain(m, h, y, FanTrainConfig())
        out = apply_filter(m, held)
        recon = np.mean(np.sum((out - held) ** 2, axis=1))
        assert recon < 0.01 * np.mean(np.sum(held**2, axis=1))

    def test_discriminator_on_separable(self):
        h, y = blobs(sep=1.0)
        m = FanModel.create(8, 0.5, seed=0)
        pretrain(m, h, y, FanTrainConfig())
        assert np.mean((m.discriminator(h)[:, 0] >= 0.5) == y) >= 0.95

    def test_zero_epochs_unchanged(self):
        h, y = blobs(n=50)
        m = FanModel.create(8, 0.5, seed=0)
        ref = m.copy()
        pretrain(m, h, y, FanTrainConfig(pretrain_epochs=0))
        for a, b in zip(ref.filter.params + ref.discriminator.params, m.filter.params + m.discriminator.params):
            np.testing.assert_array_equal(a, b)


class TestAdversarial:
    def test_discriminator_frozen_during_filter_steps(self, monkeypatch):
        h, y = blobs(n=128)
        m = FanModel.create(8, 0.5, seed=0)
        snapshots = []
        real_fg, real_dg = fan_mod.filter_gradients, fan_mod.discriminator_gradients

        def spy_filter(model, *a, **k):
            snapshots.append([p.copy() for p in model.discriminator.params])
            return real_fg(model, *a, **k)

        def spy_disc(model, *a, **k):
            if snapshots and snapshots[-1] is not None:
                for s, p in zip(snapshots[-1], model.discriminator.params):
                    np.testing.assert_array_equal(s, p)
                snapshots.append(None)
            return real_dg(model, *a, **k)

        monkeypatch.setattr(fan_mod, "filter_gradients", spy_filter)
        monkeypatch.setattr(fan_mod, "discriminator_gradients", spy_disc)
        adversarial_train(m, h, y, FanTrainConfig(epochs=2, batch_size=32))
        assert sum(s is None for s in snapshots) >= 7

    def test_schedule_and_trace_length(self, monkeypatch):
        h, y = blobs(n=100)
        calls = {"d": 0, "f": 0}
        real_fg, real_dg = fan_mod.filter_gradients, fan_mod.discriminator_gradients
        monkeypatch.setattr(fan_mod, "filter_gradients", lambda *a, **k: (calls.__setitem__("f", calls["f"] + 1), real_fg(*a, **k))[1])
        monkeypatch.setattr(fan_mod, "discriminator_gradients", lambda *a, **k: (calls.__setitem__("d", calls["d"] + 1), real_dg(*a, **k))[1])
        _, trace = adversarial_train(FanModel.create(8, 0.5, seed=0), h, y, FanTrainConfig(epochs=3, batch_size=25))
        assert calls == {"f": 12, "d": 60}
        assert len(trace.recon) == len(trace.ce) == len(trace.disc_accuracy) == 12
        assert all(c >= 0 for c in trace.ce)

    def test_deterministic(self):
        h, y = blobs(n=200)
        cfg = FanTrainConfig(pretrain_epochs=2, epochs=2, batch_size=32, seed=4)
        a, ta = train_fan(h, y, 0.5, cfg)
        b, tb = train_fan(h, y, 0.5, cfg)
        assert ta.recon == tb.recon and ta.ce == tb.ce
        for p, q in zip(a.filter.params + a.discriminator.params, b.filter.params + b.discriminator.params):
            np.testing.assert_array_equal(p, q)

    def test_divergence_raises(self):
        h, y = blobs(n=64)
        m = FanModel.create(8, 0.5, seed=0)
        with pytest.raises(FanDivergenceError, match="reconstruction"):
            adversarial_train(m, h * 1e-3, y, FanTrainConfig(epochs=1, batch_size=32, filter_learning_rate=1e-2))

    def test_huge_lambda_keeps_pretrained_identity(self):
        h, y = blobs(n=600)
        m = FanModel.create(8, 1e3, seed=0)
        pretrain(m, h, y, FanTrainConfig(pretrain_epochs=30))
        before = np.mean(np.sum((apply_filter(m, h) - h) ** 2, axis=1))
        adversarial_train(m, h, y, FanTrainConfig(epochs=5, batch_size=64))
        out = apply_filter(m, h)
        assert np.mean(np.sum((out - h) ** 2, axis=1)) <= before
        fresh = FanModel.create(8, 0.5, seed=9)
        pretrain(fresh, out, y, FanTrainConfig())
        assert np.mean((fresh.discriminator(out)[:, 0] >= 0.5) == y) >= 0.95

    def test_lambda_endpoints(self):
        h, y = blobs(n=600)
        cfg = FanTrainConfig(epochs=10, batch_size=64, seed=1)
        recon = {}
        for lam in (0.05, 50.0):
            m, _ = train_fan(h, y, lam, cfg)
            recon[lam] = np.mean(np.sum((apply_filter(m, h) - h) ** 2, axis=1))
        assert recon[50.0] < recon[0.05]

    def test_lambda_grid_trend(self):
        h, y = blobs(n=600)
        cfg = FanTrainConfig(epochs=10, batch_size=64, seed=1)
        recon = []
        for lam in (0.05, 0.5, 5.0, 50.0):
            m, _ = train_fan(h, y, lam, cfg)
            recon.append(np.mean(np.sum((apply_filter(m, h) - h) ** 2, axis=1)))
        assert sum(b > a for a, b in zip(recon, recon[1:])) <= 1


class TestApply:
    def test_exact_identity_filter_passes_through(self):
        m = FanModel(identity_filter(6), FanModel.create(6, 0.5).discriminator, 0.5)
        h = np.random.default_rng(1).normal(size=(40, 6))
        out = apply_filter(m, h)
        assert np.max(np.linalg.norm(out - h, axis=1) / np.linalg.norm(h, axis=1)) < 0.01

    def test_shape_preserved(self):
        h, y = blobs(n=100)
        m = FanModel.create(8, 0.5, seed=0)
        pretrain(m, h, y, FanTrainConfig(pretrain_epochs=1))
        assert apply_filter(m, h).shape == h.shape

    def test_twice_is_allowed(self):
        m = FanModel.create(3, 0.5, seed=0)
        x = np.ones((4, 3))
        assert apply_filter(m, apply_filter(m, x)).shape == (4, 3)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            apply_filter(FanModel.create(3, 0.5), np.ones((2, 4)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = FanModel.create(6, 0.05, hidden=9, seed=3)
        cfg = FanTrainConfig(epochs=7)
        save_fan(m, tmp_path / "f.txt", cfg)
        back, meta = load_fan(tmp_path / "f.txt")
        assert back.lam == 0.05 and meta["epochs"] == "7"
        for a, b in zip(m.filter.params + m.discriminator.params, back.filter.params + back.discriminator.params):
            np.testing.assert_array_equal(a, b)
        save_fan(back, tmp_path / "g.txt", cfg)
        assert (tmp_path / "f.txt").read_bytes() == (tmp_path / "g.txt").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "f.txt").write_text("other\n")
        with pytest.raises(ValueError):
            load_fan(tmp_path / "f.txt")


def test_model_validation():
    with pytest.raises(ValueError):
        FanModel(Mlp([3, 2]), Mlp([3, 1], head="sigmoid"), 1.0)
    with pytest.raises(ValueError):
        FanModel.create(3, -1.0)


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"filter_objective": "gradient_reversal"}, "objective"),
        ({"filter_learning_rate": 0.0}, "filter_learning_rate"),
        ({"epochs": -1}, "epoch"),
        ({"pretrain_batch_size": 0}, "FanTrainConfig"),
    ],
)
def test_train_config_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        FanTrainConfig(**kwargs)
