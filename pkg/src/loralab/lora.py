"""Low-rank adapter layers and the two-hidden-layer toy classifier.

A LoraLayer wraps a frozen weight W with a trainable low-rank product:
the effective weight is W + s*B@A, where A is r x n2, B is n1 x r, and s
is the scaling factor. Initialization schemes:

    INIT_A        A Gaussian at beta * Kaiming scale, B zero
    INIT_B        B Gaussian at scale beta / sqrt(r), A zero
    INIT_AB       A and B Gaussian with equal variance; the initial product
                  is subtracted so training starts at the frozen function
    INIT_AB_PLUS  like INIT_AB but nothing is subtracted, so training
                  starts from a randomly perturbed function

The subtraction is kept in factored form (copies of the initial A and B)
rather than as a dense n1 x n2 matrix: applying it as -s*B0@(A0@Z) makes
the step-0 forward pass cancel the adapter term bit for bit, and leaves
the frozen W shareable across adapters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .tensor import Matrix, gaussian, matmul, relu, relu_backward


class InitKind(str, Enum):
    INIT_A = "init_a"
    INIT_B = "init_b"
    INIT_AB = "init_ab"
    INIT_AB_PLUS = "init_ab_plus"


@dataclass(frozen=True)
class InitScheme:
    kind: InitKind
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass
class LoraLayer:
    """Frozen weight plus trainable low-rank factors.

    a0 and b0 hold the initialization snapshot when the scheme subtracts
    the initial product; they are never updated.
    """

    w: Matrix            # n1 x n2, frozen
    a: Matrix            # r x n2, trainable
    b: Matrix            # n1 x r, trainable
    s: float = 1.0
    a0: Optional[Matrix] = None
    b0: Optional[Matrix] = None

    @property
    def subtracts_init(self) -> bool:
        return self.a0 is not None

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    def w_correction(self) -> Optional[Matrix]:
        """Dense form of the stored correction, -s * b0 @ a0, if any."""
        if not self.subtracts_init:
            return None
        return -self.s * matmul(self.b0, self.a0)


def init_lora(
    scheme: InitScheme,
    w: Matrix,
    r: int,
    s: float,
    rng: np.random.Generator,
) -> LoraLayer:
    """Build an adapter on the frozen weight w per the scheme.

    The Kaiming reference scale is 1/sqrt(n2) where n2 is the fan-in of the
    adapted layer; INIT_B scales by 1/sqrt(r), the fan-in of its own factor.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"frozen weight must be 2-D, got shape {w.shape}")
    n1, n2 = w.shape
    if r < 1 or r > min(n1, n2) / 4:
        raise ValueError(
            f"rank {r} invalid for a {n1}x{n2} layer (need 1 <= r <= min/4)"
        )
    sigma_k = 1.0 / np.sqrt(n2)
    if scheme.kind == InitKind.INIT_A:
        a = gaussian(r, n2, scheme.beta * sigma_k, rng)
        b = np.zeros((n1, r))
        return LoraLayer(w=w, a=a, b=b, s=s)
    if scheme.kind == InitKind.INIT_B:
        a = np.zeros((r, n2))
        b = gaussian(n1, r, scheme.beta / np.sqrt(r), rng)
        return LoraLayer(w=w, a=a, b=b, s=s)
    if scheme.beta == 0:
        raise ValueError(f"{scheme.kind.value} with beta = 0 zeroes both factors")
    sigma = scheme.beta * sigma_k
    a = gaussian(r, n2, sigma, rng)
    b = gaussian(n1, r, sigma, rng)
    if scheme.kind == InitKind.INIT_AB:
        return LoraLayer(w=w, a=a, b=b, s=s, a0=a.copy(), b0=b.copy())
    return LoraLayer(w=w, a=a, b=b, s=s)


def lora_from_sigmas(
    w: Matrix,
    r: int,
    s: float,
    sigma_a: float,
    sigma_b: float,
    subtract: bool,
    rng: np.random.Generator,
) -> LoraLayer:
    """Adapter with explicitly chosen factor scales (used by the probes)."""
    w = np.asarray(w, dtype=np.float64)
    n1, n2 = w.shape
    a = gaussian(r, n2, sigma_a, rng)
    b = gaussian(n1, r, sigma_b, rng)
    if subtract:
        return LoraLayer(w=w, a=a, b=b, s=s, a0=a.copy(), b0=b.copy())
    return LoraLayer(w=w, a=a, b=b, s=s)


def forward_lora(layer: LoraLayer, z: Matrix) -> tuple[Matrix, Matrix, Matrix]:
    """Adapter features for a column batch z (n2 x batch).

    Returns (z_a, z_b, zbar): the rank-space feature A@z, the adapter
    output s*B@z_a, and the layer output W@z + z_b minus the stored
    initial product when the scheme subtracts it.
    """
    z_a = matmul(layer.a, z)
    z_b = layer.s * matmul(layer.b, z_a)
    zbar = matmul(layer.w, z) + z_b
    if layer.subtracts_init:
        zbar = zbar - layer.s * matmul(layer.b0, matmul(layer.a0, z))
    return z_a, z_b, zbar


def backward_lora(
    layer: LoraLayer, z: Matrix, z_a: Matrix, dzbar: Matrix
) -> tuple[Matrix, Matrix]:
    """Gradients (gA, gB) of a loss with upstream gradient dzbar.

    gA = s * B^T @ dzbar @ z^T,  gB = s * dzbar @ z_a^T. The subtracted
    initial product is a constant, so it contributes nothing here.
    """
    if dzbar.shape[0] != layer.b.shape[0] or dzbar.shape[1] != z.shape[1]:
        raise ValueError(
            f"upstream gradient shape {dzbar.shape} inconsistent with "
            f"layer output {layer.b.shape[0]} x batch {z.shape[1]}"
        )
    g_a = layer.s * matmul(matmul(layer.b.T, dzbar), z.T)
    g_b = layer.s * matmul(dzbar, z_a.T)
    return g_a, g_b


def delta_decompose(
    a_prev: Matrix,
    b_prev: Matrix,
    a_new: Matrix,
    b_new: Matrix,
    z: Matrix,
    s: float,
) -> tuple[Matrix, Matrix, Matrix]:
    """Split the adapter-output change between two snapshots into the
    B-held, A-held, and cross terms:

        d1 = s * B_prev @ (dA @ z)    update of A alone
        d2 = s * dB @ (A_prev @ z)    update of B alone
        d3 = s * dB @ (dA @ z)        joint term

    d1 + d2 + d3 equals the measured change of s*B@A@z exactly (up to
    fp rounding), since the decomposition is an algebraic identity.
    """
    if a_prev.shape != a_new.shape or b_prev.shape != b_new.shape:
        raise ValueError("snapshot shapes differ between steps")
    da = a_new - a_prev
    db = b_new - b_prev
    d1 = s * matmul(b_prev, matmul(da, z))
    d2 = s * matmul(db, matmul(a_prev, z))
    d3 = s * matmul(db, matmul(da, z))
    return d1, d2, d3


@dataclass
class ToyModel:
    """relu MLP d -> n -> n -> 10 whose middle weight carries the adapter.

    During fine-tuning only the adapter factors move; w_in, w0, w_out stay
    bit-identical. lora is None while pretraining.
    """

    w_in: Matrix   # n x d
    w0: Matrix     # n x n
    w_out: Matrix  # 10 x n
    lora: Optional[LoraLayer] = None

    @property
    def dims(self) -> tuple[int, int, int]:
        n, d = self.w_in.shape
        r = self.lora.rank if self.lora is not None else 0
        return d, n, r

    def frozen_hash(self) -> str:
        h = hashlib.sha256()
        for w in (self.w_in, self.w0, self.w_out):
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()


def pretrain_model(d: int, n: int, n_classes: int, rng: np.random.Generator) -> ToyModel:
    """Kaiming-initialized model with no adapter attached."""
    return ToyModel(
        w_in=gaussian(n, d, 1.0 / np.sqrt(d), rng),
        w0=gaussian(n, n, 1.0 / np.sqrt(n), rng),
        w_out=gaussian(n_classes, n, 1.0 / np.sqrt(n), rng),
    )


def attach_lora(model: ToyModel, scheme: InitScheme, r: int, s: float,
                rng: np.random.Generator) -> ToyModel:
    """Copy of the model with a fresh adapter on the middle weight."""
    layer = init_lora(scheme, model.w0, r, s, rng)
    return ToyModel(w_in=model.w_in, w0=model.w0, w_out=model.w_out, lora=layer)


def forward_toy(model: ToyModel, x: Matrix) -> tuple[Matrix, dict]:
    """Logits for a column batch x (d x batch) plus cached activations."""
    h1_pre = matmul(model.w_in, x)
    h1 = relu(h1_pre)
    if model.lora is not None:
        z_a, z_b, h2_pre = forward_lora(model.lora, h1)
    else:
        z_a, z_b = None, None
        h2_pre = matmul(model.w0, h1)
    h2 = relu(h2_pre)
    logits = matmul(model.w_out, h2)
    cache = {
        "x": x, "h1_pre": h1_pre, "h1": h1,
        "z_a": z_a, "z_b": z_b, "h2_pre": h2_pre, "h2": h2,
    }
    return logits, cache


def backward_toy(model: ToyModel, cache: dict, dlogits: Matrix, train_all: bool) -> dict:
    """Gradients from an upstream logit gradient.

    train_all=True is the pretraining path: returns gradients for w_in, w0,
    w_out (any adapter must be absent). train_all=False touches only the
    adapter and returns (g_a, g_b).
    """
    dh2 = matmul(model.w_out.T, dlogits)
    dh2_pre = relu_backward(cache["h2_pre"], dh2)
    if not train_all:
        if model.lora is None:
            raise ValueError("no adapter attached to train")
        g_a, g_b = backward_lora(model.lora, cache["h1"], cache["z_a"], dh2_pre)
        return {"g_a": g_a, "g_b": g_b}
    if model.lora is not None:
        raise ValueError("train_all expects the pretraining model, no adapter")
    g_w_out = matmul(dlogits, cache["h2"].T)
    g_w0 = matmul(dh2_pre, cache["h1"].T)
    dh1 = matmul(model.w0.T, dh2_pre)
    dh1_pre = relu_backward(cache["h1_pre"], dh1)
    g_w_in = matmul(dh1_pre, cache["x"].T)
    return {"g_w_in": g_w_in, "g_w0": g_w0, "g_w_out": g_w_out}


# ---------------------------------------------------------------------------
# checkpoint container: length-prefixed JSON header + little-endian fp64 blocks

_MAGIC = b"LLCK"


def save_checkpoint(path, model: ToyModel, meta: Optional[dict] = None) -> None:
    """Write the model to a flat binary container.

    Layout: 4-byte magic, 4-byte big-endian header length, UTF-8 JSON
    header (dims, metadata, block table), then each block's entries as
    little-endian fp64 in row-major order, in the declared order.
    """
    blocks = [("w_in", model.w_in), ("w0", model.w0), ("w_out", model.w_out)]
    if model.lora is not None:
        blocks += [("a", model.lora.a), ("b", model.lora.b)]
        if model.lora.subtracts_init:
            blocks += [("a0", model.lora.a0), ("b0", model.lora.b0)]
    d, n, r = model.dims
    header = {
        "dims": {"d": d, "n": n, "r": r, "classes": model.w_out.shape[0]},
        "lora_s": model.lora.s if model.lora is not None else None,
        "meta": meta or {},
        "blocks": [
            {"name": name, "rows": arr.shape[0], "cols": arr.shape[1]}
            for name, arr in blocks
        ],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(raw).to_bytes(4, "big"))
        f.write(raw)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ToyModel, dict]:
    """Read a container written by save_checkpoint; validates dimensions."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file: magic {magic!r}")
        header_len = int.from_bytes(f.read(4), "big")
        header = json.loads(f.read(header_len).decode("utf-8"))
        arrays = {}
        for block in header["blocks"]:
            rows, cols = block["rows"], block["cols"]
            payload = f.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(
                    f"truncated block {block['name']}: expected {rows * cols * 8} "
                    f"bytes, got {len(payload)}"
                )
            arrays[block["name"]] = (
                np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)
            )
    dims = header["dims"]
    if arrays["w_in"].shape != (dims["n"], dims["d"]):
        raise ValueError(
            f"header dims {dims} disagree with w_in shape {arrays['w_in'].shape}"
        )
    if arrays["w0"].shape != (dims["n"], dims["n"]):
        raise ValueError(
            f"header dims {dims} disagree with w0 shape {arrays['w0'].shape}"
        )
    lora = None
    if "a" in arrays:
        lora = LoraLayer(
            w=arrays["w0"], a=arrays["a"], b=arrays["b"], s=header["lora_s"],
            a0=arrays.get("a0"), b0=arrays.get("b0"),
        )
    model = ToyModel(w_in=arrays["w_in"], w0=arrays["w0"], w_out=arrays["w_out"], lora=lora)
    return model, header["meta"]
