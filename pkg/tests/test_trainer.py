"""QAT trainer: separable toy problems, determinism, quantized export."""

import numpy as np
import pytest

from mixprec.activations import ActivationKind
from mixprec.data import Dataset
from mixprec.network import forward_batch_oracle
from mixprec.precision import FP8_E4M3, quantize
from mixprec.trainer import TrainConfig, TrainingDivergedError, train


def blob_dataset(seed=0, n=400, dim=784, separation=6.0):
    """Two linearly separable Gaussian blobs embedded in pixel space."""
    rng = np.random.default_rng(seed)
    half = n // 2
    centers = np.zeros((2, dim))
    centers[0, :10] = separation / 10
    centers[1, 10:20] = separation / 10
    X = np.concatenate([
        centers[0] + 0.02 * rng.standard_normal((half, dim)),
        centers[1] + 0.02 * rng.standard_normal((n - half, dim)),
    ])
    y = np.concatenate([np.zeros(half, np.int64), np.ones(n - half, np.int64)])
    order = rng.permutation(n)
    return Dataset(images=np.clip(X, 0, 1)[order], labels=y[order], split="train")


class TestTrain:
    def test_separable_blobs_one_layer(self):
        ds = blob_dataset()
        cfg = TrainConfig(learning_rate=0.5, epochs=5, batch_size=32, seed=0)
        net, history = train(ds, [784, 2], ActivationKind.RELU, cfg)
        out = forward_batch_oracle(net, ds.images)
        acc = float(np.mean(np.argmax(out, axis=1) == ds.labels))
        assert acc >= 0.99
        assert history[-1].accuracy >= 0.99

    def test_same_seed_identical_networks(self):
        ds = blob_dataset()
        cfg = TrainConfig(learning_rate=0.2, epochs=2, batch_size=64, seed=42)
        net_a, hist_a = train(ds, [784, 8, 2], ActivationKind.TANH, cfg)
        net_b, hist_b = train(ds, [784, 8, 2], ActivationKind.TANH, cfg)
        for la, lb in zip(net_a.layers, net_b.layers):
            assert np.array_equal(la.weights.data, lb.weights.data)
        assert [h.loss for h in hist_a] == [h.loss for h in hist_b]

    def test_exported_weights_are_low_format_fixed_points(self):
        ds = blob_dataset()
        cfg = TrainConfig(epochs=1, seed=3)
        net, _ = train(ds, [784, 4, 2], ActivationKind.RELU, cfg)
        for ly in net.layers:
            w = ly.weights.data
            assert np.array_equal(quantize(w, FP8_E4M3), w)

    def test_divergence_reported(self):
        # weight quantization saturates at +-448, so a huge learning rate
        # alone cannot produce a non-finite loss; a non-finite input can
        ds = blob_dataset()
        ds.images[5, 3] = np.nan
        cfg = TrainConfig(learning_rate=0.1, epochs=1, batch_size=32, seed=0)
        with pytest.raises(TrainingDivergedError):
            train(ds, [784, 8, 2], ActivationKind.RELU, cfg)

    def test_empty_dataset_rejected(self):
        ds = Dataset(images=np.zeros((0, 784)), labels=np.zeros(0, np.int64),
                     split="train")
        with pytest.raises(ValueError):
            train(ds, [784, 2], ActivationKind.RELU, TrainConfig(epochs=1))

    def test_dims_validated(self):
        ds = blob_dataset()
        with pytest.raises(ValueError):
            train(ds, [100, 2], ActivationKind.RELU, TrainConfig(epochs=1))
