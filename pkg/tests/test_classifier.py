import numpy as np
import pytest

from segqc import nn
from segqc.classifier import (QCNetConfig, build_qcnet, classify, load_qcnet,
                              predict, save_qcnet, train_qcnet)
from segqc.volume import DataFormatError, Volume3D

TINY = QCNetConfig(conv_units=(2, 2, 2, 2, 2, 2), dense_units=4)


def closed_form_count(cfg):
    k3 = cfg.kernel ** 3
    total = 0
    c_in = cfg.in_channels
    for units in cfg.conv_units:
        total += k3 * c_in * units + units      # conv kernel + bias
        total += 2 * units                      # batch norm gamma + beta
        c_in = units
    total += c_in * cfg.dense_units + cfg.dense_units
    total += cfg.dense_units * 1 + 1
    return total


def toy_dataset(n, dims=(8, 8, 8), seed=0, labels=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = (i % 2) if labels is None else labels[i]
        mri = rng.random(dims).astype(np.float32)
        scale = 0.9 if label == 1 else 0.05
        err = (rng.random(dims) * scale).astype(np.float32)
        out.append((Volume3D(mri), Volume3D(err), label))
    return out


class TestArchitecture:
    def test_default_parameter_count(self):
        net = build_qcnet(QCNetConfig(), seed=0)
        assert net.trainable_param_count() == 876_801

    def test_count_matches_closed_form(self):
        for cfg in (QCNetConfig(), TINY,
                    QCNetConfig(conv_units=(4, 4, 8, 8, 16, 16), dense_units=32)):
            net = build_qcnet(cfg, seed=1)
            assert net.trainable_param_count() == closed_form_count(cfg)

    def test_same_seed_same_weights(self):
        a = build_qcnet(TINY, seed=5)
        b = build_qcnet(TINY, seed=5)
        for pa, pb in zip(a.params(), b.params()):
            assert pa.value.tobytes() == pb.value.tobytes()

    def test_different_seed_different_weights(self):
        a = build_qcnet(TINY, seed=5)
        b = build_qcnet(TINY, seed=6)
        assert any(pa.value.tobytes() != pb.value.tobytes()
                   for pa, pb in zip(a.params(), b.params()))

    def test_layer_counts(self):
        net = build_qcnet(TINY, seed=0)
        kinds = [type(layer).__name__ for layer in net.net.layers]
        assert kinds.count("Conv") == 6
        assert kinds.count("BatchNorm") == 6
        assert kinds.count("Dense") == 2
        assert kinds[-1] == "Sigmoid"

    @pytest.mark.parametrize("bad", [
        dict(conv_units=(32, 32, 64, 64, 128)),
        dict(conv_units=(32, 32, 64, 64, 128, 128, 256)),
        dict(kernel=5),
        dict(padding=0),
        dict(strides=(1, 2, 1)),
        dict(threshold=1.5),
        dict(dense_units=0),
        dict(conv_units=(32, 0, 64, 64, 128, 128)),
    ])
    def test_invalid_configs_rejected(self, bad):
        with pytest.raises(ValueError):
            build_qcnet(QCNetConfig(**bad), seed=0)


class TestPredict:
    def test_probability_in_open_interval(self):
        net = build_qcnet(TINY, seed=2)
        rng = np.random.default_rng(0)
        p = predict(net, Volume3D(rng.random((8, 8, 8)).astype(np.float32)),
                    Volume3D(rng.random((8, 8, 8)).astype(np.float32)))
        assert 0.0 < p < 1.0

    def test_full_size_net_accepts_16_and_32(self):
        net = build_qcnet(QCNetConfig(), seed=3)
        rng = np.random.default_rng(1)
        for n in (16, 32):
            vol = Volume3D(rng.random((n, n, n)).astype(np.float32))
            err = Volume3D(rng.random((n, n, n)).astype(np.float32))
            p = predict(net, vol, err)
            assert 0.0 < p < 1.0

    def test_pooling_allows_anisotropic_dims(self):
        net = build_qcnet(TINY, seed=4)
        rng = np.random.default_rng(2)
        vol = Volume3D(rng.random((8, 12, 10)).astype(np.float32))
        err = Volume3D(rng.random((8, 12, 10)).astype(np.float32))
        assert 0.0 < predict(net, vol, err) < 1.0

    def test_eval_mode_is_deterministic(self):
        net = build_qcnet(TINY, seed=7)
        rng = np.random.default_rng(3)
        vol = Volume3D(rng.random((8, 8, 8)).astype(np.float32))
        err = Volume3D(rng.random((8, 8, 8)).astype(np.float32))
        assert predict(net, vol, err) == predict(net, vol, err)

    def test_dims_mismatch_rejected(self):
        net = build_qcnet(TINY, seed=2)
        with pytest.raises(ValueError, match="dims"):
            predict(net, Volume3D(np.zeros((8, 8, 8), dtype=np.float32)),
                    Volume3D(np.zeros((8, 8, 10), dtype=np.float32)))

    def test_too_small_rejected(self):
        net = build_qcnet(TINY, seed=2)
        small = Volume3D(np.zeros((6, 8, 8), dtype=np.float32))
        with pytest.raises(ValueError, match="too small"):
            predict(net, small, small)

    def test_unnormalized_input_rejected(self):
        net = build_qcnet(TINY, seed=2)
        bad = Volume3D(np.full((8, 8, 8), 1.5, dtype=np.float32))
        ok = Volume3D(np.zeros((8, 8, 8), dtype=np.float32))
        with pytest.raises(ValueError, match="normalized"):
            predict(net, bad, ok)


class TestClassify:
    def test_above_default_threshold_is_bad(self):
        assert classify(0.41, 0.4) == 1

    def test_below_default_threshold_is_good(self):
        assert classify(0.39, 0.4) == 0

    def test_boundary_inclusive(self):
        assert classify(0.4, 0.4) == 1
        assert classify(0.30, 0.3) == 1

    def test_default_threshold(self):
        assert classify(0.41) == 1
        assert classify(0.39) == 0

    def test_out_of_range_probability_rejected(self):
        with pytest.raises(ValueError):
            classify(1.2)
        with pytest.raises(ValueError):
            classify(-0.1)


class TestTraining:
    def test_loss_decreases(self):
        data = toy_dataset(8, seed=10)
        net, history = train_qcnet(data, TINY, epochs=12, seed=11, lr=1e-2,
                                   batch_size=4)
        assert len(history) == 12
        assert history[-1] < history[0]

    def test_training_is_deterministic(self):
        data = toy_dataset(6, seed=12)
        net_a, hist_a = train_qcnet(data, TINY, epochs=4, seed=13, batch_size=3)
        net_b, hist_b = train_qcnet(data, TINY, epochs=4, seed=13, batch_size=3)
        assert hist_a == hist_b
        for pa, pb in zip(net_a.params(), net_b.params()):
            assert pa.value.tobytes() == pb.value.tobytes()

    def test_all_good_labels_push_probability_down(self):
        data = toy_dataset(8, seed=14, labels=[0] * 8)
        net, _ = train_qcnet(data, TINY, epochs=25, seed=15, lr=1e-2, batch_size=4)
        probs = [predict(net, mri, err) for mri, err, _ in data]
        assert float(np.mean(probs)) < 0.2

    def test_separable_signal_is_learned(self):
        data = toy_dataset(12, seed=16)
        net, _ = train_qcnet(data, TINY, epochs=30, seed=17, lr=1e-2, batch_size=4)
        good = [predict(net, mri, err) for mri, err, lab in data if lab == 0]
        bad = [predict(net, mri, err) for mri, err, lab in data if lab == 1]
        assert float(np.mean(bad)) > float(np.mean(good))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_qcnet([], TINY, epochs=1, seed=0)

    def test_inconsistent_dims_rejected(self):
        data = toy_dataset(2, seed=18)
        rng = np.random.default_rng(0)
        data.append((Volume3D(rng.random((10, 8, 8)).astype(np.float32)),
                     Volume3D(rng.random((10, 8, 8)).astype(np.float32)), 1))
        with pytest.raises(ValueError, match="inconsistent"):
            train_qcnet(data, TINY, epochs=1, seed=0)


class TestGradients:
    def test_whole_net_gradcheck(self):
        net = build_qcnet(TINY, seed=20)
        # jitter weights so no relu preactivation sits exactly on its kink
        # (zero-init dense biases put dead samples there, where one-sided
        # analytic subgradients and central differences legitimately differ)
        jit = np.random.default_rng(99)
        for p in net.params():
            p.value = p.value.astype(np.float64)
            if p.trainable:
                p.value = p.value + jit.normal(scale=0.05, size=p.value.shape)
            p.grad = np.zeros_like(p.value)
        x = np.random.default_rng(21).random((3, 2, 4, 4, 4))

        h = x
        for layer in net.net.layers:
            nh = layer.forward(h, train=True)
            if type(layer).__name__ == "ReLU":
                assert float(np.abs(h).min()) > 1e-4  # margin before checking
            h = nh
        assert nn.finite_difference_check(net.net, x, eps=1e-5, train=True) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = build_qcnet(TINY, seed=30)
        path = tmp_path / "qc.ckpt"
        save_qcnet(net, path)
        back = load_qcnet(path)
        assert back.config == net.config
        assert back.seed == net.seed
        for pa, pb in zip(net.params(), back.params()):
            assert pa.value.tobytes() == pb.value.tobytes()

    def test_round_trip_preserves_predictions(self, tmp_path):
        data = toy_dataset(4, seed=31)
        net, _ = train_qcnet(data, TINY, epochs=2, seed=32, batch_size=2)
        path = tmp_path / "qc.ckpt"
        save_qcnet(net, path)
        back = load_qcnet(path)
        for mri, err, _ in data:
            assert predict(net, mri, err) == predict(back, mri, err)

    def test_wrong_kind_rejected(self, tmp_path):
        net = build_qcnet(TINY, seed=33)
        path = tmp_path / "other.ckpt"
        nn.save_checkpoint(path, net.params(), meta={"kind": "recon"})
        with pytest.raises(DataFormatError, match="qcnet"):
            load_qcnet(path)
