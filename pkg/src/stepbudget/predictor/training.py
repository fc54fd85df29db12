"""Training: MSE loss, backpropagation through time, Adam, the full loop.

The backward pass mirrors the forward structure in model.py. Inside the
per-step loop only elementwise work and one (B, 4H) @ (4H, H) product
remain; the weight-gradient contractions are deferred to single large
matmuls over the whole sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from ..types import EmbeddingVector, Metric, TimestepGrid
from .model import (
    DirectionParams,
    ModelConfig,
    PredictorParams,
    _forward_internal,
    init_params,
)


@dataclass(frozen=True)
class TrainingExample:
    """One prompt's embedding and its dense target curve for one metric."""

    prompt_id: int
    prompt_embedding: EmbeddingVector
    metric: Metric
    targets: np.ndarray  # length t_N, values in [0, 1]

    def __post_init__(self):
        arr = np.asarray(self.targets, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("targets must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise ValidationError("targets must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "targets", arr)


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every step in the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# Backward pass

def _backprop_direction(
    p: DirectionParams,
    cache: dict,
    dh_aligned: np.ndarray,
) -> tuple[np.ndarray, DirectionParams]:
    """BPTT through one direction; returns (d_input aligned, gradients)."""
    reverse = cache["reverse"]
    dh_seq = dh_aligned[:, ::-1] if reverse else dh_aligned  # processing order
    xs = cache["x"]
    gates = cache["gates"]
    cells = cache["cells"]
    tanh_cells = cache["tanh_cells"]
    hidden = cache["hidden"]

    b, t_len, h_dim = dh_seq.shape
    dz_all = np.empty((b, t_len, 4 * h_dim))
    dh_carry = np.zeros((b, h_dim))
    dc_carry = np.zeros((b, h_dim))
    w_h_t = p.w_h.T

    for t in range(t_len - 1, -1, -1):
        dh = dh_seq[:, t] + dh_carry
        i = gates[:, t, :h_dim]
        f = gates[:, t, h_dim:2 * h_dim]
        g = gates[:, t, 2 * h_dim:3 * h_dim]
        o = gates[:, t, 3 * h_dim:]
        tc = tanh_cells[:, t]
        c_prev = cells[:, t - 1] if t > 0 else 0.0

        do = dh * tc
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_carry = dc * f

        dz = dz_all[:, t]
        dz[:, :h_dim] = di * i * (1.0 - i)
        dz[:, h_dim:2 * h_dim] = df * f * (1.0 - f)
        dz[:, 2 * h_dim:3 * h_dim] = dg * (1.0 - g * g)
        dz[:, 3 * h_dim:] = do * o * (1.0 - o)
        dh_carry = dz @ w_h_t

    flat_dz = dz_all.reshape(b * t_len, 4 * h_dim)
    h_prev = np.concatenate([np.zeros((b, 1, h_dim)), hidden[:, :-1]], axis=1)
    grads = DirectionParams(
        w_x=xs.reshape(b * t_len, -1).T @ flat_dz,
        w_h=h_prev.reshape(b * t_len, h_dim).T @ flat_dz,
        bias=flat_dz.sum(axis=0),
    )
    dx = dz_all @ p.w_x.T
    if reverse:
        dx = dx[:, ::-1]
    return dx, grads


def _backward_internal(
    params: PredictorParams,
    config: ModelConfig,
    cache: dict,
    dpred: np.ndarray,
) -> PredictorParams:
    """Gradients of a scalar loss given d(loss)/d(pred) of shape (B, T)."""
    grads = params.zeros_like()
    pred = cache["pred"]
    b, t_len = pred.shape

    # final sigmoid
    flat = (dpred * pred * (1.0 - pred)).reshape(b * t_len, 1)

    # MLP, last layer first (interior activations are ReLU)
    for idx in range(len(params.mlp) - 1, -1, -1):
        w, _ = params.mlp[idx]
        act_in = cache["mlp_inputs"][idx]
        grads.mlp[idx][0][...] = act_in.T @ flat
        grads.mlp[idx][1][...] = flat.sum(axis=0)
        flat = flat @ w.T
        if idx > 0:
            flat = flat * (cache["mlp_pre"][idx - 1] > 0.0)

    dy = flat.reshape(b, t_len, -1)
    if cache["dropout_mask"] is not None:
        dy = dy * cache["dropout_mask"]

    for li in range(len(params.layers) - 1, -1, -1):
        cache_f, cache_b = cache["layers"][li]
        h_dim = config.hidden
        dx_f, g_f = _backprop_direction(params.layers[li][0], cache_f, dy[:, :, :h_dim])
        dx_b, g_b = _backprop_direction(params.layers[li][1], cache_b, dy[:, :, h_dim:])
        for attr in ("w_x", "w_h", "bias"):
            getattr(grads.layers[li][0], attr)[...] = getattr(g_f, attr)
            getattr(grads.layers[li][1], attr)[...] = getattr(g_b, attr)
        dy = dx_f + dx_b

    # dy is now d(loss)/d(sequence input); the prompt vector enters every step
    dbase = dy.sum(axis=1)
    if params.projection:
        grads.projection[0][...] = cache["emb"].T @ dbase
        grads.projection[1][...] = dbase.sum(axis=0)
    return grads


def _stack_batch(
    examples: list[TrainingExample],
    steps: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    emb = np.stack([e.prompt_embedding.values for e in examples])
    targets = np.stack([e.targets[steps - 1] for e in examples])
    return emb, targets


def batch_loss(
    params: PredictorParams,
    config: ModelConfig,
    batch: list[TrainingExample],
    steps: np.ndarray | None = None,
) -> float:
    """Forward-only MSE of a batch (dropout disabled). Used by tests as
    the scalar objective for finite-difference checks."""
    if not batch:
        raise ValidationError("empty batch")
    if steps is None:
        steps = np.arange(1, batch[0].targets.size + 1)
    emb, targets = _stack_batch(batch, steps)
    pred, _ = _forward_internal(params, config, emb, steps)
    return loss(pred, targets)


def backward(
    params: PredictorParams,
    config: ModelConfig,
    batch: list[TrainingExample],
    steps: np.ndarray | None = None,
    dropout_mask: np.ndarray | None = None,
) -> PredictorParams:
    """Analytic gradients of the batch MSE w.r.t. every parameter."""
    if not batch:
        raise ValidationError("empty batch")
    if steps is None:
        steps = np.arange(1, batch[0].targets.size + 1)
    emb, targets = _stack_batch(batch, steps)
    pred, cache = _forward_internal(params, config, emb, steps, dropout_mask=dropout_mask)
    dpred = 2.0 * (pred - targets) / pred.size
    return _backward_internal(params, config, cache, dpred)


# ---------------------------------------------------------------------------
# Optimizer

class Adam:
    """Adam with bias correction; state keyed by tensor name."""

    def __init__(self, params: PredictorParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(a) for name, a in params.named_tensors()}
        self.v = {name: np.zeros_like(a) for name, a in params.named_tensors()}

    def step(self, params: PredictorParams, grads: PredictorParams) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        grad_map = dict(grads.named_tensors())
        for name, arr in params.named_tensors():
            g = grad_map[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Training loop

def _training_steps(t_n: int, stride: int) -> np.ndarray:
    steps = np.arange(1, t_n + 1, stride, dtype=np.int64)
    if steps[-1] != t_n:
        steps = np.append(steps, t_n)
    return steps


def _sharded_gradients(
    params: PredictorParams,
    config: ModelConfig,
    xb: np.ndarray,
    yb: np.ndarray,
    steps: np.ndarray,
    mask: np.ndarray | None,
    pool,
    n_shards: int,
) -> tuple[float, PredictorParams]:
    """Data-parallel batch gradient: shard the batch, sum shard gradients.

    Each shard scales its d(loss)/d(pred) by the full batch element count,
    so the sum equals the whole-batch mean gradient up to summation order
    (not bitwise identical to the single-shard path).
    """
    bounds = np.array_split(np.arange(len(xb)), n_shards)
    bounds = [b for b in bounds if b.size]
    total = len(xb) * steps.size

    def shard_work(idx):
        shard_mask = mask[idx] if mask is not None else None
        pred, cache = _forward_internal(params, config, xb[idx], steps,
                                        dropout_mask=shard_mask)
        sq = float(np.sum((pred - yb[idx]) ** 2))
        dpred = 2.0 * (pred - yb[idx]) / total
        return sq, _backward_internal(params, config, cache, dpred)

    results = list(pool.map(shard_work, bounds))
    sq_total = sum(sq for sq, _ in results)
    grads = results[0][1]
    for _, shard_grads in results[1:]:
        for name, arr in grads.named_tensors():
            arr += dict(shard_grads.named_tensors())[name]
    return sq_total, grads


def train(
    config: ModelConfig,
    examples: list[TrainingExample],
    split: tuple[list[int], list[int]],
    grid: TimestepGrid,
    threads: int = 1,
):
    """Mini-batch Adam over the train split; returns a checkpoint holding
    final parameters and the per-epoch loss trace.

    Deterministic for a fixed config.rng_seed: parameter init, epoch
    shuffles, and dropout masks all come from one generator in a fixed
    order. With ``threads`` > 1 each batch is sharded across a worker
    pool and shard gradients are summed; that mode is reproducible for a
    fixed thread count but not bitwise-identical to the single-threaded
    path (summation order differs). Validation loss/MAE are measured on
    the full dense step range with dropout off.
    """
    from .checkpoint import EpochStats, PredictorCheckpoint  # cycle guard

    if not examples:
        raise ValidationError("no training examples")
    metrics = {e.metric for e in examples}
    if len(metrics) != 1:
        raise ValidationError(f"examples mix metrics: {sorted(m.value for m in metrics)}")
    metric = metrics.pop()
    t_n = grid.last
    for e in examples:
        if e.targets.size != t_n:
            raise ValidationError(
                f"prompt {e.prompt_id}: target length {e.targets.size} != t_N {t_n}"
            )
    dims = {e.prompt_embedding.dim for e in examples}
    if len(dims) != 1:
        raise ValidationError("examples mix embedding widths")
    input_dim = dims.pop()

    train_ids, eval_ids = set(split[0]), set(split[1])
    train_ex = [e for e in examples if e.prompt_id in train_ids]
    val_ex = [e for e in examples if e.prompt_id in eval_ids]
    if not train_ex:
        raise ValidationError("train split matches no examples")

    rng = np.random.default_rng(config.rng_seed)
    params = init_params(config, input_dim, rng)
    adam = Adam(params, lr=config.learning_rate)

    steps_train = _training_steps(t_n, config.train_stride)
    steps_full = np.arange(1, t_n + 1, dtype=np.int64)
    x_train, y_train = _stack_batch(train_ex, steps_train)
    if val_ex:
        x_val, y_val = _stack_batch(val_ex, steps_full)

    pool = None
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=threads)

    width = 2 * config.hidden
    n = len(train_ex)
    trace = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        sq_sum = 0.0
        count = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb = x_train[idx]
            yb = y_train[idx]
            mask = None
            if config.dropout_rate > 0.0:
                keep = rng.random((len(idx), steps_train.size, width)) >= config.dropout_rate
                mask = keep / (1.0 - config.dropout_rate)
            if pool is not None:
                batch_sq, grads = _sharded_gradients(
                    params, config, xb, yb, steps_train, mask, pool, threads
                )
            else:
                pred, cache = _forward_internal(params, config, xb, steps_train,
                                                dropout_mask=mask)
                batch_sq = float(np.sum((pred - yb) ** 2))
                dpred = 2.0 * (pred - yb) / pred.size
                grads = _backward_internal(params, config, cache, dpred)
            batch_mse = batch_sq / (len(idx) * steps_train.size)
            if not np.isfinite(batch_mse):
                if pool is not None:
                    pool.shutdown()
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                    f" (lr={config.learning_rate}, batch_size={config.batch_size})",
                    epoch=epoch, batch=start // config.batch_size, loss=batch_mse,
                )
            adam.step(params, grads)
            sq_sum += batch_sq
            count += len(idx) * steps_train.size
        train_loss = sq_sum / count

        val_loss = float("nan")
        val_mae = float("nan")
        if val_ex:
            pred_val, _ = _forward_internal(params, config, x_val, steps_full)
            val_loss = loss(pred_val, y_val)
            val_mae = float(np.mean(np.abs(pred_val - y_val)))
        trace.append(EpochStats(epoch, train_loss, val_loss, val_mae))

    if pool is not None:
        pool.shutdown()
    params.check_finite()
    return PredictorCheckpoint(
        params=params, config=config, metric=metric, grid=grid, trace=trace
    )
