"""Dense fp64 numerics with deterministic, replayable sampling.

Plain 2-D float64 numpy arrays are the only numeric container in this
project. This module wraps the handful of primitives everything else is
built from: matrix products, seeded Gaussian sampling, ReLU forward and
backward, per-coordinate magnitude (rms), and the softmax cross-entropy
head. Operations validate shapes loudly and reject non-finite results so
a diverging run fails at the op that produced the bad value.

All randomness flows through numpy Generators derived from an explicit
(seed, stream) pair, so any computation can be replayed bit for bit.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Fresh PCG64 generator for a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent child generator for (master seed, stream indices).

    Identical (seed, stream) always yields the identical sequence, and
    distinct streams are statistically independent, so parallel cells can
    each derive their own generator without coordinating.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream)))
    )


def _check_finite(x: Matrix, op: str) -> Matrix:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return x


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product with strict 2-D shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return _check_finite(a @ b, "matmul")


def gaussian(rows: int, cols: int, sigma: float, rng: np.random.Generator) -> Matrix:
    """i.i.d. N(0, sigma^2) matrix; sigma = 0 returns exact zeros.

    The zero-sigma case draws nothing from the generator, so it is
    deterministic regardless of call order.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian needs positive dims, got {rows}x{cols}")
    if sigma < 0:
        raise ValueError(f"gaussian needs sigma >= 0, got {sigma}")
    if sigma == 0.0:
        return np.zeros((rows, cols), dtype=np.float64)
    return _check_finite(rng.standard_normal((rows, cols)) * sigma, "gaussian")


def relu(x: Matrix) -> Matrix:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: Matrix, upstream: Matrix) -> Matrix:
    """Masks the upstream gradient where the forward input was <= 0."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError(f"relu_backward shape mismatch: {x.shape} vs {upstream.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def rms(x: Matrix) -> float:
    """Root-mean-square of the entries: the per-coordinate magnitude.

    Unlike the l2 norm this does not grow with the number of entries, so a
    vector whose coordinates are all O(1) has O(1) rms at any width.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms of an empty matrix is undefined")
    return float(np.sqrt(np.mean(np.square(x))))


def softmax_cross_entropy(logits: Matrix, label: int) -> tuple[float, Matrix]:
    """Loss and logit gradient for one sample.

    Returns (-log softmax(logits)[label], softmax(logits) - onehot(label)).
    Uses max subtraction so saturated logits do not overflow.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    k = z.size
    if not 0 <= int(label) < k:
        raise ValueError(f"label {label} out of range [0, {k})")
    m = z.max()
    e = np.exp(z - m)
    total = e.sum()
    loss = float(np.log(total) - (z[label] - m))
    d = e / total
    d[label] -= 1.0
    return loss, d.reshape(-1, 1)


def softmax_cross_entropy_batch(logits: Matrix, labels: np.ndarray) -> tuple[float, Matrix]:
    """Mean cross-entropy over a column batch plus the mean-loss gradient.

    logits is k x B with one column per sample; the returned gradient is
    already divided by B so it backpropagates the mean loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[1] != labels.size:
        raise ValueError(
            f"batched cross-entropy shape mismatch: logits {logits.shape}, "
            f"{labels.size} labels"
        )
    k, batch = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range [0, {k})")
    m = logits.max(axis=0, keepdims=True)
    e = np.exp(logits - m)
    total = e.sum(axis=0, keepdims=True)
    cols = np.arange(batch)
    losses = np.log(total[0]) - (logits[labels, cols] - m[0])
    d = e / total
    d[labels, cols] -= 1.0
    return float(losses.mean()), d / batch
