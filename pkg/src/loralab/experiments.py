"""Pretraining, fine-tuning cells, and the scheme/lr/init-size grid.

Desk-scale defaults keep every run on a laptop: width 1024, a 3-point
learning-rate grid, a 3-point init-size grid, 5 seeds. The paper_scale
flag restores the full protocol (width 4096, rank 32, 10 seeds, the full
rate and size grids).

Every grid cell derives its generator from (master seed, cell index), so
cells can run in any order, or in parallel worker processes, and the
sorted results are byte-identical to a serial run.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset, batch_iterator, synthetic_dataset
from .lora import (
    InitKind, InitScheme, ToyModel, attach_lora, backward_toy, forward_toy,
    pretrain_model,
)
from .optim import AdamState, adam_step
from .tensor import child_rng, softmax_cross_entropy_batch

PRETRAIN_STREAM = 0
GRID_STREAM = 1
DATA_STREAM = 3

DESK_LR_GRID = (1e-4, 1e-3, 1e-2)
DESK_SIZE_GRID = (1.0, 4.0, 16.0)   # beta multipliers on the Kaiming scale
PAPER_LR_GRID = (3e-4, 4e-4, 5e-4, 6e-4, 7e-4, 8e-4, 9e-4, 1e-3, 2e-3, 3e-3)
PAPER_SIGMA_GRID = (2e-5, 5e-5, 8e-5, 1e-4, 4e-4, 7e-4, 1e-3, 3e-3, 6e-3,
                    9e-3, 2e-2, 5e-2)


def evaluate(model: ToyModel, dataset: Dataset) -> tuple[float, float]:
    """(mean test loss, accuracy) over the whole dataset in one pass."""
    logits, _ = forward_toy(model, dataset.images.T)
    loss, _ = softmax_cross_entropy_batch(logits, dataset.labels)
    acc = float(np.mean(np.argmax(logits, axis=0) == dataset.labels))
    return loss, acc


@dataclass(frozen=True)
class PretrainConfig:
    d: int = 784
    n: int = 1024
    classes: int = 10
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 64
    eval_every: int = 100
    master_seed: int = 0


def pretrain(cfg: PretrainConfig, train: Dataset, test: Dataset):
    """Train all three weights with Adam; returns (model, log rows).

    Log rows are (step, train_loss, test_loss, test_acc) every eval_every
    steps and at the final step.
    """
    rng = child_rng(cfg.master_seed, PRETRAIN_STREAM)
    model = pretrain_model(cfg.d, cfg.n, cfg.classes, rng)
    states = {
        "g_w_in": AdamState.for_param(model.w_in),
        "g_w0": AdamState.for_param(model.w0),
        "g_w_out": AdamState.for_param(model.w_out),
    }
    log = []
    step = 0
    while step < cfg.steps:
        for x, labels in batch_iterator(train, cfg.batch, rng):
            step += 1
            logits, cache = forward_toy(model, x)
            train_loss, dlogits = softmax_cross_entropy_batch(logits, labels)
            grads = backward_toy(model, cache, dlogits, train_all=True)
            model.w_in = adam_step(model.w_in, grads["g_w_in"], states["g_w_in"], cfg.lr)
            model.w0 = adam_step(model.w0, grads["g_w0"], states["g_w0"], cfg.lr)
            model.w_out = adam_step(model.w_out, grads["g_w_out"], states["g_w_out"], cfg.lr)
            if step % cfg.eval_every == 0 or step == cfg.steps:
                test_loss, test_acc = evaluate(model, test)
                log.append((step, train_loss, test_loss, test_acc))
            if step >= cfg.steps:
                break
    return model, log


@dataclass(frozen=True)
class GridConfig:
    schemes: tuple[str, ...] = ("init_a", "init_ab")
    lrs: tuple[float, ...] = DESK_LR_GRID
    sizes: tuple[float, ...] = DESK_SIZE_GRID
    size_kind: str = "beta"          # "beta" scales Kaiming, "sigma" is absolute
    seeds: int = 5
    steps: int = 100
    batch: int = 64
    rank: int = 8
    scale: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if self.size_kind not in ("beta", "sigma"):
            raise ValueError(f"unknown size kind {self.size_kind!r}")
        for s in self.schemes:
            InitKind(s)  # validates the name

    def cells(self) -> list[tuple[str, float, float, int]]:
        return [
            (scheme, lr, size, seed)
            for scheme in self.schemes
            for lr in self.lrs
            for size in self.sizes
            for seed in range(self.seeds)
        ]


@dataclass(frozen=True)
class GridRow:
    scheme: str
    lr: float
    size: float
    seed: int
    step0_loss: float
    final_loss: float
    final_acc: float
    steps: int

    CSV_HEADER = "scheme,lr,init_size,seed,final_test_loss,final_test_acc,steps,step0_test_loss"

    def csv_row(self) -> str:
        return ",".join([
            self.scheme, repr(self.lr), repr(self.size), str(self.seed),
            repr(self.final_loss), repr(self.final_acc), str(self.steps),
            repr(self.step0_loss),
        ])


def scheme_for(name: str, size: float, size_kind: str, n: int) -> InitScheme:
    kind = InitKind(name)
    if size_kind == "beta":
        return InitScheme(kind=kind, beta=size)
    # absolute entry scale: convert to a beta multiplier on 1/sqrt(n)
    return InitScheme(kind=kind, beta=size * math.sqrt(n))


def finetune_cell(
    base: ToyModel,
    scheme: InitScheme,
    lr: float,
    steps: int,
    batch: int,
    rank: int,
    scale: float,
    rng: np.random.Generator,
    train: Dataset,
    test: Dataset,
) -> tuple[float, float, float]:
    """One fine-tuning run; returns (step0 loss, final loss, final acc).

    Only the adapter factors are trained. The frozen weights are hashed
    before and after and any drift raises.
    """
    model = attach_lora(base, scheme, rank, scale, rng)
    frozen = model.frozen_hash()
    state_a = AdamState.for_param(model.lora.a)
    state_b = AdamState.for_param(model.lora.b)
    step0_loss, _ = evaluate(model, test)
    step = 0
    while step < steps:
        for x, labels in batch_iterator(train, batch, rng):
            step += 1
            logits, cache = forward_toy(model, x)
            _, dlogits = softmax_cross_entropy_batch(logits, labels)
            grads = backward_toy(model, cache, dlogits, train_all=False)
            model.lora.a = adam_step(model.lora.a, grads["g_a"], state_a, lr)
            model.lora.b = adam_step(model.lora.b, grads["g_b"], state_b, lr)
            if step >= steps:
                break
    final_loss, final_acc = evaluate(model, test)
    if model.frozen_hash() != frozen:
        raise RuntimeError("frozen weights drifted during fine-tuning")
    return step0_loss, final_loss, final_acc


# worker globals installed by _pool_init (fork start method)
_WORKER = {}


def _pool_init(cfg, base, train, test):
    _WORKER.update(cfg=cfg, base=base, train=train, test=test)


def _run_cell_by_index(idx: int) -> GridRow:
    cfg: GridConfig = _WORKER["cfg"]
    return _grid_cell(cfg, _WORKER["base"], _WORKER["train"], _WORKER["test"], idx)


def _grid_cell(cfg: GridConfig, base: ToyModel, train: Dataset, test: Dataset,
               idx: int) -> GridRow:
    scheme_name, lr, size, seed = cfg.cells()[idx]
    rng = child_rng(cfg.master_seed, GRID_STREAM, idx)
    n = base.w0.shape[0]
    scheme = scheme_for(scheme_name, size, cfg.size_kind, n)
    step0, final, acc = finetune_cell(
        base, scheme, lr, cfg.steps, cfg.batch, cfg.rank, cfg.scale,
        rng, train, test,
    )
    return GridRow(scheme_name, lr, size, seed, step0, final, acc, cfg.steps)


def run_grid(cfg: GridConfig, base: ToyModel, train: Dataset, test: Dataset,
             workers: int = 1) -> list[GridRow]:
    """Full lattice of fine-tuning cells, optionally in parallel.

    Output order is the canonical cell order regardless of worker count,
    so serial and parallel runs serialize to identical bytes.
    """
    indices = list(range(len(cfg.cells())))
    if workers <= 1:
        return [_grid_cell(cfg, base, train, test, i) for i in indices]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers, initializer=_pool_init,
                  initargs=(cfg, base, train, test)) as pool:
        rows = pool.map(_run_cell_by_index, indices)
    return rows


def rows_to_csv(rows) -> str:
    lines = [GridRow.CSV_HEADER]
    lines += [r.csv_row() for r in rows]
    return "\n".join(lines) + "\n"


def mean_loss_table(rows: list[GridRow]) -> dict[tuple[str, float, float], float]:
    """Mean final test loss over seeds per (scheme, lr, size)."""
    acc: dict[tuple[str, float, float], list[float]] = {}
    for r in rows:
        acc.setdefault((r.scheme, r.lr, r.size), []).append(r.final_loss)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def best_over_size(rows: list[GridRow]) -> dict[tuple[str, float], float]:
    """Best (lowest) mean final loss over init sizes per (scheme, lr)."""
    table = mean_loss_table(rows)
    best: dict[tuple[str, float], float] = {}
    for (scheme, lr, _size), loss in table.items():
        key = (scheme, lr)
        if key not in best or loss < best[key]:
            best[key] = loss
    return best


def make_tasks(seed: int, d: int = 784, classes: int = 10,
               train_n: int = 2000, test_n: int = 1000):
    """Synthetic pretraining task plus a label-permuted fine-tuning task.

    The fine-tuning task reuses the same class prototypes with fresh
    sample noise and relabels every class through a fixed derangement, so
    the frozen features are informative but the head mapping must change.
    """
    data_seed = int(child_rng(seed, DATA_STREAM).integers(2**31))
    pre_train = synthetic_dataset(data_seed, train_n, d, classes, split="train")
    pre_test = synthetic_dataset(data_seed, test_n, d, classes, split="test")
    perm = np.roll(np.arange(classes), 1)  # simple derangement
    ft_train = synthetic_dataset(data_seed, train_n, d, classes,
                                 label_perm=perm, split="ft-train")
    ft_test = synthetic_dataset(data_seed, test_n, d, classes,
                                label_perm=perm, split="ft-test")
    return pre_train, pre_test, ft_train, ft_test
