"""Synthetic inspection dataset and a small deterministic trainer.

The dataset stands in for real asset imagery: three grayscale pattern
classes (vertical bar, horizontal bar, centered block) under uniform
pixel noise, stored as genuine 8-bit images so they survive PGM
encode/decode byte-exactly.

Randomness comes from a SplitMix64-seeded xoshiro256** generator
implemented here in pure integer arithmetic. Unlike float-based
generators it produces identical streams on every platform and Python
build, so a seed pins the dataset down to the byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Dense, Flatten, ModelGraph, ReLU, Softmax, argmax, forward_fp32
from .vqi import CRITICAL, DEGRADED, OK

_MASK64 = (1 << 64) - 1

DEFAULT_LABELS = ("intact", "worn", "cracked")
DEFAULT_CONDITION_MAP = {"intact": OK, "worn": DEGRADED, "cracked": CRITICAL}


class Xoshiro256StarStar:
    """xoshiro256** with SplitMix64 state expansion; 64-bit wraparound."""

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        x = seed
        state = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & _MASK64
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
            state.append(z ^ (z >> 31))
        self._s = state

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) & _MASK64) | (x >> (64 - k))

    def next_u64(self) -> int:
        s = self._s
        result = (self._rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def random(self) -> float:
        # 53 high bits -> uniform double in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) by modulo; bias is negligible
        for the tiny n used here and the result is platform-stable."""
        if n < 1:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def fill_uniform(self, shape: tuple, lo: float, hi: float) -> np.ndarray:
        flat = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(flat.size):
            flat[i] = self.uniform(lo, hi)
        return flat.reshape(shape)


@dataclass(frozen=True)
class ToyDatasetSpec:
    seed: int = 42
    classes: int = 3
    train_per_class: int = 200
    test_per_class: int = 100
    image_shape: tuple = (1, 28, 28)
    noise_level: float = 0.15  # uniform pixel noise half-width, fraction of 255

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError("need at least one class")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("need at least one sample per class per split")
        if len(self.image_shape) != 3 or self.image_shape[0] != 1:
            raise ValueError("image_shape must be (1, H, W)")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level must lie in [0, 1]")


@dataclass
class ToyDataset:
    spec: ToyDatasetSpec
    labels: list
    train_images: np.ndarray  # uint8 [N, 1, H, W]
    train_labels: np.ndarray  # int64 [N]
    test_images: np.ndarray
    test_labels: np.ndarray


def _class_pattern(cls: int, height: int, width: int) -> np.ndarray:
    """Base image for one class: bright primitive on a dark background."""
    base = np.full((height, width), 30.0)
    kind = cls % 3
    shift = 2 * (cls // 3)  # distinct placement for class counts above 3
    thick = max(2, width // 7)
    if kind == 0:  # vertical bar
        c0 = (width // 3 + shift) % max(1, width - thick)
        base[:, c0 : c0 + thick] = 220.0
    elif kind == 1:  # horizontal bar
        r0 = (height // 3 + shift) % max(1, height - thick)
        base[r0 : r0 + thick, :] = 220.0
    else:  # centered block
        rh, rw = height // 4, width // 4
        base[rh + shift : height - rh + shift, rw : width - rw] = 220.0
    return base


def _render_split(
    spec: ToyDatasetSpec, rng: Xoshiro256StarStar, per_class: int
) -> tuple[np.ndarray, np.ndarray]:
    _, height, width = spec.image_shape
    count = spec.classes * per_class
    images = np.empty((count, 1, height, width), dtype=np.uint8)
    labels = np.empty(count, dtype=np.int64)
    amp = spec.noise_level * 255.0
    i = 0
    for cls in range(spec.classes):
        pattern = _class_pattern(cls, height, width)
        for _ in range(per_class):
            noise = rng.fill_uniform((height, width), -amp, amp)
            pixels = np.clip(np.rint(pattern + noise), 0, 255).astype(np.uint8)
            images[i, 0] = pixels
            labels[i] = cls
            i += 1
    return images, labels


def class_names(count: int) -> list:
    if count <= len(DEFAULT_LABELS):
        return list(DEFAULT_LABELS[:count])
    return list(DEFAULT_LABELS) + [f"class_{i}" for i in range(len(DEFAULT_LABELS), count)]


def generate_dataset(spec: ToyDatasetSpec) -> ToyDataset:
    """Deterministic dataset: one PRNG stream, train split drawn first."""
    rng = Xoshiro256StarStar(spec.seed)
    train_images, train_labels = _render_split(spec, rng, spec.train_per_class)
    test_images, test_labels = _render_split(spec, rng, spec.test_per_class)
    return ToyDataset(
        spec=spec,
        labels=class_names(spec.classes),
        train_images=train_images,
        train_labels=train_labels,
        test_images=test_images,
        test_labels=test_labels,
    )


def images_to_inputs(images: np.ndarray) -> np.ndarray:
    """uint8 [N,1,H,W] -> fp32 [N,1,H,W] scaled into [0,1]."""
    return (images.astype(np.float32) / np.float32(255.0)).astype(np.float32)


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class TrainingError(RuntimeError):
    """Training diverged; the caller should try a smaller learning rate."""


@dataclass
class TrainConfig:
    hidden_units: int = 128
    epochs: int = 250
    learning_rate: float = 0.3
    momentum: float = 0.9
    # keeps weights and activations in a narrow range; an unregularized
    # run on separable data grows logits past 800, which quantizes badly
    weight_decay: float = 0.01


def _init_dense(rng: Xoshiro256StarStar, n_out: int, n_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / n_in)
    return rng.fill_uniform((n_out, n_in), -bound, bound)


def train_model(dataset: ToyDataset, config: TrainConfig | None = None) -> ModelGraph:
    """Full-batch gradient descent with analytic gradients.

    Training math runs in float64 on the fast numpy path; the returned
    graph holds float32 parameters for the deterministic kernels. The
    parameter initialization comes from the dataset's own PRNG family,
    so a (seed, config) pair always yields the same starting point.
    """
    config = config or TrainConfig()
    spec = dataset.spec
    n_in = int(np.prod(spec.image_shape))
    n_hidden = config.hidden_units
    n_out = spec.classes

    rng = Xoshiro256StarStar(spec.seed ^ 0xA5A5A5A5A5A5A5A5)
    w1 = _init_dense(rng, n_hidden, n_in)
    b1 = np.zeros(n_hidden)
    w2 = _init_dense(rng, n_out, n_hidden)
    b2 = np.zeros(n_out)

    x = images_to_inputs(dataset.train_images).reshape(-1, n_in).astype(np.float64)
    y = np.zeros((x.shape[0], n_out))
    y[np.arange(x.shape[0]), dataset.train_labels] = 1.0
    n = x.shape[0]

    vel = [np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), np.zeros_like(b2)]
    for _ in range(config.epochs):
        # divergence produces inf/NaN intermediates here; the guard below
        # turns them into a TrainingError, so keep numpy quiet meanwhile
        with np.errstate(invalid="ignore", over="ignore"):
            h = x @ w1.T + b1
            a = np.maximum(h, 0.0)
            z = a @ w2.T + b2
            z -= z.max(axis=1, keepdims=True)
            e = np.exp(z)
            p = e / e.sum(axis=1, keepdims=True)
        if not np.isfinite(p).all():
            raise TrainingError(
                "training diverged (loss is NaN); lower the learning rate"
            )

        dz = (p - y) / n
        dw2 = dz.T @ a + config.weight_decay * w2
        db2 = dz.sum(axis=0)
        da = dz @ w2
        dh = da * (h > 0.0)
        dw1 = dh.T @ x + config.weight_decay * w1
        db1 = dh.sum(axis=0)

        for slot, (param, grad) in enumerate(
            [(w1, dw1), (b1, db1), (w2, dw2), (b2, db2)]
        ):
            vel[slot] = config.momentum * vel[slot] - config.learning_rate * grad
            param += vel[slot]

    return ModelGraph(
        layers=[
            Flatten(),
            Dense(weights=w1.astype(np.float32), bias=b1.astype(np.float32)),
            ReLU(),
            Dense(weights=w2.astype(np.float32), bias=b2.astype(np.float32)),
            Softmax(),
        ],
        input_shape=spec.image_shape,
        labels=list(dataset.labels),
    )


def evaluate_accuracy(model: ModelGraph, images: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy through the deterministic fp32 engine."""
    hits = 0
    for i in range(images.shape[0]):
        out, _ = forward_fp32(model, images_to_inputs(images[i : i + 1])[0])
        hits += int(argmax(out) == int(labels[i]))
    return hits / images.shape[0]


def calibration_samples(dataset: ToyDataset, count: int = 32) -> list:
    """First `count` train images, preprocessed like inference inputs."""
    inputs = images_to_inputs(dataset.train_images[:count])
    return [inputs[i] for i in range(inputs.shape[0])]
