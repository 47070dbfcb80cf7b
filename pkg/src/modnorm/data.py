"""Dataset construction: a deterministic synthetic classification task and a
reader for the standard binary CIFAR-10 batches."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def synthetic_task(n_classes: int, d_in: int, n_train: int, n_test: int, seed: int) -> Dataset:
    """Gaussian clusters with unit-RMS inputs and a fixed train/test split.

    Class means sit on a sphere; samples are mean + noise, rescaled so every
    example has root-mean-square norm exactly 1.
    """
    if min(n_classes, d_in, n_train, n_test) < 1:
        raise ValueError("synthetic_task arguments must all be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, d_in))
    # mean separation comparable to the noise radius: clusters overlap, the
    # loss floor stays away from zero, and learning-rate optima stay interior
    means *= 1.5 / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n, salt):
        r = np.random.default_rng([seed, salt])
        y = np.arange(n) % n_classes
        y = y[r.permutation(n)]
        x = means[y] + r.standard_normal((n, d_in))
        x /= np.sqrt(np.mean(np.square(x), axis=1, keepdims=True))
        return x, y.astype(np.int64)

    x_tr, y_tr = draw(n_train, 1)
    x_te, y_te = draw(n_test, 2)
    return Dataset(x_tr, y_tr, x_te, y_te)


def synthetic_token_task(vocab: int, context: int, n_train: int, n_test: int,
                         seed: int) -> Dataset:
    """Deterministic next-token prediction data from a sparse Markov chain.

    Each token has a handful of likely successors, so the task is learnable
    well below the uniform-guess loss but never saturates to zero.
    """
    if min(vocab, context, n_train, n_test) < 1:
        raise ValueError("synthetic_token_task arguments must all be >= 1")
    rng = np.random.default_rng(seed)
    fanout = min(3, vocab)
    successors = np.stack([rng.permutation(vocab)[:fanout] for _ in range(vocab)])

    def draw(n, salt):
        r = np.random.default_rng([seed, salt])
        seqs = np.empty((n, context + 1), dtype=np.int64)
        seqs[:, 0] = r.integers(0, vocab, n)
        for t in range(context):
            pick = r.integers(0, fanout, n)
            seqs[:, t + 1] = successors[seqs[:, t], pick]
        return seqs[:, :-1], seqs[:, 1:]

    x_tr, y_tr = draw(n_train, 3)
    x_te, y_te = draw(n_test, 4)
    return Dataset(x_tr, y_tr, x_te, y_te)


CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels
CIFAR_RECORDS_PER_FILE = 10000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


def _read_cifar_file(path: str):
    with open(path, "rb") as f:
        raw = f.read()
    expected = CIFAR_RECORD * CIFAR_RECORDS_PER_FILE
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD)
    labels = buf[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise ValueError(f"{path}: label {labels.max()} out of range (must be < 10)")
    pixels = buf[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    flat = pixels.reshape(len(pixels), -1)
    rms = np.sqrt(np.mean(np.square(flat), axis=1))
    rms[rms == 0] = 1.0
    pixels /= rms[:, None, None, None]
    return pixels, labels


def load_cifar10(path: str) -> Dataset:
    """Parse the binary-batch CIFAR-10 layout: channel-major 3x32x32 pixels
    scaled to [0, 1] then normalized to unit per-image RMS. No augmentation."""
    trains = [_read_cifar_file(os.path.join(path, name)) for name in CIFAR_TRAIN_FILES]
    x_te, y_te = _read_cifar_file(os.path.join(path, CIFAR_TEST_FILE))
    x_tr = np.concatenate([t[0] for t in trains])
    y_tr = np.concatenate([t[1] for t in trains])
    return Dataset(x_tr, y_tr, x_te, y_te)
