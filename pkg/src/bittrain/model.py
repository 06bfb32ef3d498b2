"""Toy dense regression model with fully pinned float arithmetic.

A 2-layer MLP (8 -> 16 -> 1) with tanh, per-unit dropout, and MSE loss.
Small on purpose: it exists to exercise the three channels through which
training results can drift, not to learn anything interesting:

* dropout consumes a per-worker RNG stream,
* a tracked running statistic mixes in the worker's rank,
* every reduction over the batch dimension goes through the executor's
  reduction kernel, whose shape is device-kind dependent.

All scalars are binary64.  Every sum is written as an explicit fold so no
compiler/runtime can re-associate or fuse it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import InputError, NumericError
from .prng import TAG_MODEL_INIT, derive_stream, rng_uniform01
from .reduction import ReduceVariant, Sequential, reduce_sum

_SEQ = Sequential()

INPUT_DIM = 8
HIDDEN_DIM = 16
# Flat parameter order: w1 row-major (input-major), then b1, w2, b2.
W1_OFF = 0
B1_OFF = INPUT_DIM * HIDDEN_DIM
W2_OFF = B1_OFF + HIDDEN_DIM
B2_OFF = W2_OFF + HIDDEN_DIM
PARAM_COUNT = B2_OFF + 1  # 161

# Rank perturbation of the tracked statistic: large enough to flip log bits,
# small enough to leave the training dynamics alone.
RANK_EPSILON = 2.0**-40
STAT_DECAY = 0.9

Batch = list[tuple[tuple[float, ...], float]]


@dataclass
class ToyModel:
    """Flat parameter vector of the fixed-shape toy network."""

    values: list[float]

    def __post_init__(self):
        if len(self.values) != PARAM_COUNT:
            raise InputError(f"expected {PARAM_COUNT} parameters, got {len(self.values)}")

    @classmethod
    def zeros(cls) -> "ToyModel":
        return cls([0.0] * PARAM_COUNT)

    @classmethod
    def init_random(cls, seed: int, scale: float = 0.5) -> "ToyModel":
        """Deterministic init: one uniform draw per parameter, flat order."""
        state = derive_stream(TAG_MODEL_INIT, seed)
        values = []
        for _ in range(PARAM_COUNT):
            state, u = rng_uniform01(state)
            values.append((u * 2.0 - 1.0) * scale)
        return cls(values)

    def copy(self) -> "ToyModel":
        return ToyModel(list(self.values))


@dataclass
class OptState:
    """SGD-with-momentum state: one velocity slot per parameter."""

    lr: float
    momentum: float
    velocity: list[float]

    @classmethod
    def fresh(cls, lr: float, momentum: float) -> "OptState":
        return cls(lr, momentum, [0.0] * PARAM_COUNT)

    def copy(self) -> "OptState":
        return OptState(self.lr, self.momentum, list(self.velocity))


@dataclass(frozen=True)
class TrackedStat:
    """Running mean that deliberately tracks the worker's rank.

    Mirrors framework operators that fold the worker identity into a
    running statistic: ``mean' = 0.9 * mean + 0.1 * (batch_mean + rank * eps)``.
    """

    running_mean: float = 0.0
    update_count: int = 0

    def updated(self, batch_mean: float, virtual_rank: int) -> "TrackedStat":
        mixed = batch_mean + virtual_rank * RANK_EPSILON
        return TrackedStat(
            running_mean=self.running_mean * STAT_DECAY + 0.1 * mixed,
            update_count=self.update_count + 1,
        )


def forward_backward(
    model: ToyModel,
    batch: Batch,
    virtual_rank: int,
    dropout_rng: int,
    stat: TrackedStat,
    variant: ReduceVariant,
    dropout_rate: float = 0.5,
) -> tuple[float, list[float], int, TrackedStat]:
    """One forward/backward pass over a micro-batch.

    Returns ``(loss, flat_grads, dropout_rng', stat')``.  Pinned evaluation
    order:

    * hidden pre-activations: ascending input index, then + bias;
    * dropout: one uniform draw per (row, hidden unit), rows outer;
      a unit is dropped when ``u < dropout_rate`` and kept scaled by
      ``1/(1-rate)`` otherwise; ``rate == 0`` draws nothing;
    * output: ascending hidden index, then + bias;
    * every sum across the batch dimension (loss and each gradient
      component) runs through ``reduce_sum(variant)``;
    * the tracked statistic uses plain sequential means (it models
      framework bookkeeping, not a device kernel).
    """
    nrows = len(batch)
    if nrows == 0:
        raise InputError("empty micro-batch")
    for x, _ in batch:
        if len(x) != INPUT_DIM:
            raise InputError(f"expected input width {INPUT_DIM}, got {len(x)}")

    v = model.values
    d, h = INPUT_DIM, HIDDEN_DIM

    acts: list[list[float]] = []  # tanh outputs, pre-dropout
    for x, _ in batch:
        row = []
        for j in range(h):
            acc = v[W1_OFF + j] * x[0]
            for i in range(1, d):
                acc += v[W1_OFF + i * h + j] * x[i]
            row.append(math.tanh(acc + v[B1_OFF + j]))
        acts.append(row)

    keep_scale = 0.0 if dropout_rate >= 1.0 else 1.0 / (1.0 - dropout_rate)
    masks: list[list[float]] = []
    for _ in range(nrows):
        row = []
        for _ in range(h):
            if dropout_rate > 0.0:
                dropout_rng, u = rng_uniform01(dropout_rng)
                row.append(0.0 if u < dropout_rate else keep_scale)
            else:
                row.append(1.0)
        masks.append(row)

    hidden = [[acts[r][j] * masks[r][j] for j in range(h)] for r in range(nrows)]

    errs = []
    for r, (_, y) in enumerate(batch):
        hr = hidden[r]
        acc = v[W2_OFF] * hr[0]
        for j in range(1, h):
            acc += v[W2_OFF + j] * hr[j]
        errs.append(acc + v[B2_OFF] - y)

    loss = reduce_sum([e * e for e in errs], variant) / nrows

    # Per-row upstream factor d(loss)/d(yhat_r).
    gy = [2.0 * e / nrows for e in errs]
    # d(loss)/d(z_rj) through dropout and tanh.
    dz = [
        [gy[r] * v[W2_OFF + j] * masks[r][j] * (1.0 - acts[r][j] * acts[r][j]) for j in range(h)]
        for r in range(nrows)
    ]

    grads = [0.0] * PARAM_COUNT
    for i in range(d):
        base = W1_OFF + i * h
        for j in range(h):
            grads[base + j] = reduce_sum([dz[r][j] * batch[r][0][i] for r in range(nrows)], variant)
    for j in range(h):
        grads[B1_OFF + j] = reduce_sum([dz[r][j] for r in range(nrows)], variant)
    for j in range(h):
        grads[W2_OFF + j] = reduce_sum([gy[r] * hidden[r][j] for r in range(nrows)], variant)
    grads[B2_OFF] = reduce_sum(gy, variant)

    row_means = [reduce_sum(acts[r], _SEQ) / h for r in range(nrows)]
    batch_mean = reduce_sum(row_means, _SEQ) / nrows
    return loss, grads, dropout_rng, stat.updated(batch_mean, virtual_rank)


def sgd_step(model: ToyModel, opt: OptState, grads: list[float]) -> tuple[ToyModel, OptState]:
    """Momentum SGD: ``v <- mu*v + g; p <- p - lr*v`` in flat parameter order."""
    if len(grads) != PARAM_COUNT:
        raise InputError(f"expected {PARAM_COUNT} gradients, got {len(grads)}")
    new_values = list(model.values)
    new_velocity = list(opt.velocity)
    mu, lr = opt.momentum, opt.lr
    for p in range(PARAM_COUNT):
        g = grads[p]
        if not math.isfinite(g):
            raise NumericError(f"non-finite gradient at parameter {p}: {g!r}")
        vel = mu * new_velocity[p] + g
        new_velocity[p] = vel
        new_values[p] = new_values[p] - lr * vel
    return ToyModel(new_values), replace(opt, velocity=new_velocity)
