import numpy as np
import pytest

from hrtfxai.model import (
    CnnModel,
    ModelFormatError,
    NumericalError,
    TrainConfig,
    build_model,
    ce_grad_logits,
    cross_entropy,
    load,
    predict,
    save,
    softmax,
    train,
)


def model_loss(model, x, y):
    logits, _ = model.forward_batch(x)
    return cross_entropy(softmax(logits), y)


def structure_signature(model, x):
    """Hashable record of every ReLU sign and pool winner for input x.

    Used by finite-difference checks to detect probes that straddle a
    kink of the piecewise-linear network.
    """
    n, _, length = np.asarray(x).shape
    model.forward_batch(x, keep_cache=True)
    parts = []
    lengths = [length, length // 2, length // 4, length // 8]
    for conv, l in zip(model.convs, lengths):
        parts.append(conv._buffers[(n, l)]["mask"].tobytes())
    for pool in model.pools:
        parts.append(pool._cache[0].tobytes())
    return b"".join(parts)


def finite_difference_check(model, x, y, rng, per_tensor=5, step=1e-4):
    _, grads = model.loss_and_grads(x, y)
    worst = 0.0
    for name, arr in model.parameters():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = model_loss(model, x, y)
            sig_up = structure_signature(model, x)
            flat[i] = orig - step
            down = model_loss(model, x, y)
            sig_down = structure_signature(model, x)
            flat[i] = orig
            if sig_up != sig_down:
                continue  # probe straddles a ReLU/pool kink
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


class TestArchitecture:
    def test_layer_parameter_counts(self):
        model = build_model(0)
        assert model.layer_param_counts() == [2112, 32800, 8224, 4112, 153]
        assert model.n_params() == 47401

    def test_stage_lengths_at_257(self):
        model = build_model(0)
        x = np.random.default_rng(0).normal(size=(1, 2, 257))
        h = np.ascontiguousarray(x.transpose(0, 2, 1))
        lengths = []
        h = model.convs[0].forward(h, False); lengths.append(h.shape[1])
        h = model.pools[0].forward(h, False); lengths.append(h.shape[1])
        h = model.convs[1].forward(h, False); lengths.append(h.shape[1])
        h = model.pools[1].forward(h, False); lengths.append(h.shape[1])
        h = model.convs[2].forward(h, False); lengths.append(h.shape[1])
        h = model.pools[2].forward(h, False); lengths.append(h.shape[1])
        h = model.convs[3].forward(h, False); lengths.append(h.shape[1])
        assert lengths == [257, 128, 128, 64, 64, 32, 32]

    def test_erb_width_input(self):
        model = build_model(0)
        x = np.random.default_rng(0).normal(size=(1, 2, 255))
        logits, a = model.forward_batch(x)
        assert logits.shape == (1, 9)
        assert a.shape[2] == 31  # floor(floor(floor(255/2)/2)/2)

    def test_zero_input_uniform_softmax(self):
        model = build_model(0)  # biases start at zero
        trace = model.forward(np.zeros((2, 257)))
        assert np.allclose(trace.probs, 1.0 / 9.0, atol=1e-12)
        assert np.allclose(trace.last_conv, 0.0)

    def test_too_narrow_input_rejected(self):
        model = build_model(0)
        with pytest.raises(ValueError):
            model.forward_batch(np.zeros((1, 2, 8)))

    def test_softmax_normalized(self):
        model = build_model(1)
        rng = np.random.default_rng(2)
        for _ in range(10):
            trace = model.forward(rng.normal(size=(2, 64)))
            assert abs(trace.probs.sum() - 1.0) < 1e-9
            assert (trace.last_conv >= 0).all()

    def test_pooling_contract(self):
        model = build_model(0)
        x = np.array([[[3.0, 1.0, 2.0, 5.0, 4.0]]]).transpose(0, 2, 1)
        out = model.pools[0].forward(x, False)
        assert out[:, :, 0].ravel().tolist() == [3.0, 5.0]  # odd tail dropped


class TestGradients:
    @pytest.mark.parametrize("width", [32, 257])
    def test_finite_differences(self, width):
        rng = np.random.default_rng(width)
        model = build_model(5)
        x = rng.normal(size=(2, 2, width))
        y = rng.integers(0, 9, size=2)
        worst = finite_difference_check(model, x, y, rng, per_tensor=4)
        assert worst < 1e-4

    def test_ce_gradient_zero_at_onehot(self):
        logits = np.array([[50.0, -1e3, -1e3, -1e3, -1e3, -1e3, -1e3, -1e3, -1e3]])
        probs = softmax(logits)
        grad = ce_grad_logits(probs, np.array([0]))
        assert np.all(grad == 0.0)

    def test_dense_gradient_analytic(self):
        # d(CE)/d(dense weight) through softmax is (p - onehot) x gap.
        model = build_model(3)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 2, 32))
        y = np.array([4])
        logits, _ = model.forward_batch(x, keep_cache=True)
        probs = softmax(logits)
        grads = model.backward_batch(ce_grad_logits(probs, y))
        gap = model._gap_cache[0]
        expected = np.outer(gap[0], probs[0] - np.eye(9)[4])
        assert np.allclose(grads["dense.w"], expected, atol=1e-12)


class TestPredict:
    def test_confidence_bounds(self):
        model = build_model(2)
        rng = np.random.default_rng(1)
        for _ in range(5):
            cls, conf = predict(model, rng.normal(size=(2, 80)))
            assert 0 <= cls < 9
            assert 1.0 / 9.0 - 1e-12 <= conf <= 1.0

    def test_logit_shift_invariance(self):
        p1 = softmax(np.array([1.0, 2.0, 3.0, 0, 0, 0, 0, 0, 0]))
        p2 = softmax(np.array([1.0, 2.0, 3.0, 0, 0, 0, 0, 0, 0]) + 100.0)
        assert np.allclose(p1, p2, atol=1e-12)

    def test_argmax_tie_breaks_low(self):
        assert int(np.argmax(np.array([0.3, 0.3, 0.2]))) == 0


class TestTraining:
    def make_toy(self, rng, n_per_class=40, width=32):
        # Two well separated spectral prototypes among the nine labels.
        base = np.ones((2, width))
        a = base.copy(); a[:, 5:9] = 6.0
        b = base.copy(); b[:, 20:24] = 6.0
        xs, ys = [], []
        for proto, label in ((a, 2), (b, 7)):
            for _ in range(n_per_class):
                xs.append(proto + 0.05 * rng.normal(size=(2, width)))
                ys.append(label)
        order = rng.permutation(len(xs))
        x = np.stack(xs)[order]
        y = np.array(ys)[order]
        n_train = (3 * len(xs)) // 4
        return x[:n_train], y[:n_train], x[n_train:], y[n_train:]

    def test_separable_toy_reaches_full_accuracy(self):
        rng = np.random.default_rng(0)
        tx, ty, vx, vy = self.make_toy(rng)
        cfg = TrainConfig(seed=1, max_epochs=50, learning_rate=3e-3)
        model, hist = train(tx, ty, vx, vy, cfg)
        logits, _ = model.forward_batch(vx)
        assert (logits.argmax(axis=1) == vy).mean() == 1.0
        assert hist.stop_epoch <= 50

    def test_frozen_validation_halves_lr_on_schedule(self):
        # One constant training point and an unreachable validation point
        # freeze improvement, so the plateau rule fires at epochs 16, 31.
        x = np.ones((2, 2, 32))
        y = np.array([0, 0])
        vx = np.ones((1, 2, 32)) * 0.0
        vy = np.array([5])
        cfg = TrainConfig(seed=0, max_epochs=35, learning_rate=1e-12,
                          early_stop_patience=200)
        model, hist = train(x, y, vx, vy, cfg)
        assert hist.lr_changes[:2] == [16, 31]
        assert hist.learning_rate[16] == pytest.approx(0.5e-12)

    def test_early_stop_and_best_restore(self):
        x = np.ones((2, 2, 32))
        y = np.array([0, 0])
        vx = np.zeros((1, 2, 32))
        vy = np.array([5])
        cfg = TrainConfig(seed=0, max_epochs=200, learning_rate=1e-12)
        model, hist = train(x, y, vx, vy, cfg)
        assert hist.stop_epoch == 31  # best at 1, patience 30
        assert hist.best_epoch == 1

    def test_same_seed_identical_weights(self):
        rng = np.random.default_rng(3)
        tx, ty, vx, vy = self.make_toy(rng, n_per_class=10)
        cfg = TrainConfig(seed=11, max_epochs=3)
        m1, _ = train(tx, ty, vx, vy, cfg)
        m2, _ = train(tx, ty, vx, vy, cfg)
        for (_, a), (_, b) in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(a, b)

    def test_divergence_aborts(self):
        # Inputs large enough to overflow the conv stack to inf produce a
        # NaN softmax and must abort with a diagnostic.
        x = np.full((2, 2, 32), 1e308)
        y = np.array([0, 1])
        with np.errstate(all="ignore"), pytest.raises(NumericalError):
            train(x, y, x, y, TrainConfig(seed=0, max_epochs=3))

    def test_empty_sets_rejected(self):
        x = np.ones((0, 2, 32))
        with pytest.raises(ValueError):
            train(x, np.array([]), x, np.array([]), TrainConfig(seed=0))

    def test_loss_descends_on_fixed_batch(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(8, 2, 32)) + 1.0
        y = rng.integers(0, 9, 8)
        model = build_model(4)
        from hrtfxai.model import _Adam

        cfg = TrainConfig(seed=0, learning_rate=3e-3)
        params = [a for _, a in model.parameters()]
        names = [n for n, _ in model.parameters()]
        adam = _Adam([p.shape for p in params], cfg)
        losses = []
        for _ in range(100):
            loss, grads = model.loss_and_grads(x, y)
            losses.append(loss)
            adam.step(params, [grads[n] for n in names], cfg.learning_rate)
        after_warmup = np.array(losses[5:])
        assert (np.diff(after_warmup) <= 1e-9).all()


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        model = build_model(7)
        path = tmp_path / "m.bin"
        save(model, path)
        again = load(path)
        for (_, a), (_, b) in zip(model.parameters(), again.parameters()):
            assert np.array_equal(a, b)

    def test_saved_twice_identical_bytes(self, tmp_path):
        model = build_model(7)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save(model, a)
        save(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_rejected(self, tmp_path):
        model = build_model(0)
        path = tmp_path / "m.bin"
        save(model, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ModelFormatError):
            load(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        path.write_bytes(b"NOTAMODL" + b"\x00" * 100)
        with pytest.raises(ModelFormatError):
            load(path)

    def test_loaded_model_accepts_other_widths(self, tmp_path):
        # GAP head is length-agnostic: a model used at 255 bins still
        # answers at 257 and vice versa.
        model = build_model(1)
        x255 = np.random.default_rng(0).normal(size=(1, 2, 255))
        model.forward_batch(x255)
        path = tmp_path / "m.bin"
        save(model, path)
        again = load(path)
        logits, _ = again.forward_batch(
            np.random.default_rng(1).normal(size=(1, 2, 257)))
        assert logits.shape == (1, 9)
