"""Composite loss, Adam, and the three training regimes.

Regimes: ``conventional`` minibatch training (with early stopping on the
validation loss), ``dropout`` (inverted dropout after each pooling layer,
training only), and ``wenort`` -- a conventional first stage followed by a
second stage in which the smallest-magnitude fraction r of the kernel
weights is masked to zero after every update.

Determinism: the shuffle order of epoch e derives from (seed, 0, e) and the
dropout stream from (seed, 1, e), so a run is a pure function of its config,
its data and its seed, and resuming at an epoch boundary reproduces the
uninterrupted trajectory exactly.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from . import spectral
from .errors import ConfigError, DivergenceError, FormatError, PersistenceError, ShapeError
from .fcn import FcnModel

REGIMES = ("conventional", "dropout", "wenort")
STATE_MAGIC = b"ARTS"
STATE_VERSION = 1


@dataclass(frozen=True)
class LossConfig:
    """Weight of the real/imag MSE terms relative to the magnitude MSE."""

    reim_weight: float = 10.0

    def __post_init__(self):
        if not self.reim_weight > 0:
            raise ConfigError("reim_weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs_stage1: int = 100
    epochs_stage2: int = 20
    batch_size: int = 16
    learning_rate: float = 5e-5
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 10
    regime: str = "conventional"
    dropout_rate: float = 0.25
    noise_reduction_ratio: float = 0.3
    rebuild_mask_each_update: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.epochs_stage1 < 1 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts out of range")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0 <= self.noise_reduction_ratio <= 1:
            raise ConfigError("noise_reduction_ratio must lie in [0, 1]")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be positive")


def composite_loss(
    prediction: np.ndarray, label: np.ndarray, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    """MSE(magnitude) + weight * (MSE(real) + MSE(imag)), with its gradient."""
    prediction = np.asarray(prediction, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if prediction.shape != label.shape or prediction.shape[-1] != 3:
        raise ShapeError(
            f"prediction {prediction.shape} and label {label.shape} must match (.., 3)"
        )
    diff = prediction - label
    n = diff[..., 0].size
    lam = cfg.reim_weight
    mse = (diff * diff).reshape(-1, 3).mean(axis=0)
    loss = mse[1] + lam * (mse[0] + mse[2])
    grad = np.empty_like(diff)
    grad[..., 0] = 2.0 * lam * diff[..., 0] / n
    grad[..., 1] = 2.0 * diff[..., 1] / n
    grad[..., 2] = 2.0 * lam * diff[..., 2] / n
    return float(loss), grad


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update; weight decay enters as coupled L2.

    Parameters are updated in place; the returned state is the mutated
    input state with its step count advanced.
    """
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g + cfg.weight_decay * p
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state


@dataclass
class WenortMask:
    """Immutable keep/drop decision per kernel array (biases are exempt)."""

    keep: list[np.ndarray]  # bool arrays matching each conv's kernels
    masked_count: int

    def apply(self, model: FcnModel) -> None:
        for cp, keep in zip(model.convs, self.keep):
            cp.kernels[...] = np.where(keep, cp.kernels, 0.0)

    def fraction(self, model: FcnModel) -> float:
        total = sum(k.size for k in self.keep)
        return self.masked_count / total if total else 0.0


def build_wenort_mask(model: FcnModel, r: float) -> WenortMask:
    """Mask the floor(r * n) smallest-magnitude kernel weights.

    Ranking is by absolute value ascending with a deterministic tie-break by
    (layer index, flat index within the layer).
    """
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"noise reduction ratio must lie in [0, 1], got {r}")
    kernel_arrays = [cp.kernels for cp in model.convs]
    sizes = [a.size for a in kernel_arrays]
    total = int(sum(sizes))
    k = int(math.floor(r * total))
    abs_all = np.concatenate([np.abs(a).ravel() for a in kernel_arrays])
    layer_idx = np.concatenate([np.full(s, i) for i, s in enumerate(sizes)])
    flat_idx = np.concatenate([np.arange(s) for s in sizes])
    order = np.lexsort((flat_idx, layer_idx, abs_all))
    drop = np.zeros(total, dtype=bool)
    drop[order[:k]] = True
    keep = []
    off = 0
    for a in kernel_arrays:
        keep.append(~drop[off:off + a.size].reshape(a.shape))
        off += a.size
    return WenortMask(keep=keep, masked_count=k)


class TrainingData:
    """Adapts a dataset manifest to (input, label) training pairs."""

    def __init__(self, manifest: dataset_mod.DatasetManifest):
        self.manifest = manifest
        self.stft_cfg = manifest.stft
        self.train_indices = list(manifest.split.get("train", []))
        self.val_indices = list(manifest.split.get("validation", []))
        self.test_indices = list(manifest.split.get("test", []))

    def __len__(self) -> int:
        return len(self.train_indices)

    def load(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        sample = dataset_mod.read_sample(self.manifest, index)
        spec = spectral.stft(sample.interfered_signal, self.stft_cfg)
        inp = spectral.assemble_input(spec)
        label = spectral.assemble_label(
            sample.clean_signal, self.stft_cfg.n_fft, inp.scale
        )
        return inp.data, label.data


@dataclass
class EpochRow:
    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    masked_fraction: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: FcnModel
    log: list[EpochRow]
    mask: WenortMask | None
    state: "TrainState | None" = None
    stopped_early: bool = False

    def log_csv(self) -> str:
        lines = ["epoch,stage,train_loss,val_loss,masked_fraction,wall_seconds"]
        for row in self.log:
            lines.append(
                f"{row.epoch},{row.stage},{row.train_loss:.10e},{row.val_loss:.10e},"
                f"{row.masked_fraction:.6f},{row.wall_seconds:.3f}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class TrainState:
    """Cross-epoch training state; snapshots allow epoch-boundary resume."""

    adam: AdamState
    epoch: int = 0
    best_val: float = math.inf
    best_params: list[np.ndarray] | None = None
    bad_epochs: int = 0
    stopped_early: bool = False
    stage1_closed: bool = False
    stage2_epochs_done: int = 0
    mask: WenortMask | None = None

    def snapshot(self) -> "TrainState":
        return TrainState(
            adam=AdamState(
                step=self.adam.step,
                m=[a.copy() for a in self.adam.m],
                v=[a.copy() for a in self.adam.v],
            ),
            epoch=self.epoch,
            best_val=self.best_val,
            best_params=None if self.best_params is None
            else [p.copy() for p in self.best_params],
            bad_epochs=self.bad_epochs,
            stopped_early=self.stopped_early,
            stage1_closed=self.stage1_closed,
            stage2_epochs_done=self.stage2_epochs_done,
            mask=None if self.mask is None else WenortMask(
                keep=[k.copy() for k in self.mask.keep],
                masked_count=self.mask.masked_count,
            ),
        )


def _mean_val_loss(model, data, loss_cfg):
    if not data.val_indices:
        return math.nan
    total = 0.0
    for idx in data.val_indices:
        x, y = data.load(idx)
        loss, _ = composite_loss(model.infer(x), y, loss_cfg)
        total += loss
    return total / len(data.val_indices)


def _run_stage(
    model,
    data,
    cfg,
    loss_cfg,
    stage,
    n_epochs,
    state,
    mask,
    log,
    early_stop,
    on_update=None,
    on_epoch=None,
):
    """Run epochs of one stage; returns True if early stopping triggered."""
    params = model.parameters
    dropout = cfg.dropout_rate if cfg.regime == "dropout" else 0.0
    for _ in range(n_epochs):
        t0 = time.perf_counter()
        epoch = state.epoch
        shuffle_rng = np.random.default_rng([cfg.seed, 0, epoch])
        drop_rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = shuffle_rng.permutation(len(data.train_indices))
        loss_sum = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            grads_acc = [np.zeros_like(p) for p in params]
            for pos in batch:
                x, y = data.load(data.train_indices[int(pos)])
                pred = model.forward(x, dropout_rate=dropout, rng=drop_rng)
                loss, gy = composite_loss(pred, y, loss_cfg)
                if not math.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch + 1}, batch {b0 // cfg.batch_size}",
                        epoch=epoch + 1,
                        batch=b0 // cfg.batch_size,
                    )
                loss_sum += loss
                for acc, g in zip(grads_acc, model.backward(gy)):
                    acc += g
            inv = 1.0 / len(batch)
            for acc in grads_acc:
                acc *= inv
            adam_step(params, grads_acc, state.adam, cfg)
            if mask is not None:
                if cfg.rebuild_mask_each_update:
                    mask_now = build_wenort_mask(model, cfg.noise_reduction_ratio)
                    mask.keep = mask_now.keep
                    mask.masked_count = mask_now.masked_count
                mask.apply(model)
            if on_update is not None:
                on_update(model, stage, epoch, b0 // cfg.batch_size)
        train_loss = loss_sum / len(order)
        val_loss = _mean_val_loss(model, data, loss_cfg)
        state.epoch += 1
        if stage == 2:
            state.stage2_epochs_done += 1
        log.append(
            EpochRow(
                epoch=state.epoch,
                stage=stage,
                train_loss=train_loss,
                val_loss=val_loss,
                masked_fraction=mask.fraction(model) if mask is not None else 0.0,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        if on_epoch is not None:
            on_epoch(model, state, log[-1])
        if early_stop and not math.isnan(val_loss):
            if val_loss < state.best_val:
                state.best_val = val_loss
                state.best_params = model.copy_parameters()
                state.bad_epochs = 0
            else:
                state.bad_epochs += 1
                if state.bad_epochs >= cfg.early_stop_patience:
                    return True
    return False


def train(
    model: FcnModel,
    data: TrainingData,
    cfg: TrainConfig,
    loss_cfg: LossConfig | None = None,
    on_update=None,
    on_epoch=None,
    state: TrainState | None = None,
) -> TrainResult:
    """Train under the configured regime; deterministic given the seed.

    Stage 1 is conventional minibatch Adam with early stopping on the
    validation loss; the best-validation weights are restored when the
    stage ends.  Under ``wenort`` the mask is then built once and
    re-applied after every stage-2 update; under the other regimes the
    stage-2 epochs simply continue stage-1-style training so that all
    regimes run the same total epoch budget.

    Passing a previously snapshotted ``state`` resumes the run at the next
    epoch boundary and reproduces the uninterrupted trajectory exactly.
    """
    if len(data) == 0:
        raise ConfigError("training split is empty")
    loss_cfg = loss_cfg or LossConfig()
    log: list[EpochRow] = []
    if state is None:
        state = TrainState(adam=AdamState.for_params(model.parameters))

    stage1_span = (
        cfg.epochs_stage1 if cfg.regime == "wenort"
        else cfg.epochs_stage1 + cfg.epochs_stage2
    )
    if not state.stage1_closed:
        if not state.stopped_early and state.epoch < stage1_span:
            state.stopped_early = _run_stage(
                model, data, cfg, loss_cfg, 1, stage1_span - state.epoch,
                state, None, log, early_stop=True,
                on_update=on_update, on_epoch=on_epoch,
            )
        if state.best_params is not None:
            model.set_parameters(state.best_params)
        state.stage1_closed = True

    if cfg.regime == "wenort" and cfg.epochs_stage2 > 0:
        if state.mask is None:
            state.mask = build_wenort_mask(model, cfg.noise_reduction_ratio)
        remaining = cfg.epochs_stage2 - state.stage2_epochs_done
        if remaining > 0:
            _run_stage(
                model, data, cfg, loss_cfg, 2, remaining, state, state.mask,
                log, early_stop=False, on_update=on_update, on_epoch=on_epoch,
            )
    return TrainResult(
        model=model, log=log, mask=state.mask, state=state,
        stopped_early=state.stopped_early,
    )


def _pack_arrays(arrays: list[np.ndarray], dtype: str) -> bytes:
    blob = bytearray(struct.pack("<I", len(arrays)))
    for a in arrays:
        blob += struct.pack("<I", a.ndim)
        blob += struct.pack(f"<{a.ndim}I", *a.shape)
        blob += np.ascontiguousarray(a, dtype=dtype).tobytes()
    return bytes(blob)


class _BlobReader:
    def __init__(self, data: bytes, origin: str):
        self.data = data
        self.off = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated train state {self.origin}")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def arrays(self, dtype: str, out_dtype) -> list[np.ndarray]:
        (count,) = self.unpack("<I")
        out = []
        itemsize = np.dtype(dtype).itemsize
        for _ in range(count):
            (ndim,) = self.unpack("<I")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape)) if ndim else 1
            raw = self.take(itemsize * size)
            out.append(np.frombuffer(raw, dtype=dtype).astype(out_dtype).reshape(shape))
        return out


def save_train_state(model: FcnModel, state: TrainState, path) -> None:
    """Persist full-precision parameters plus optimizer/loop state."""
    blob = bytearray()
    blob += STATE_MAGIC
    blob += struct.pack("<I", STATE_VERSION)
    flags = (
        (1 if state.stopped_early else 0)
        | (2 if state.stage1_closed else 0)
        | (4 if state.best_params is not None else 0)
        | (8 if state.mask is not None else 0)
    )
    blob += struct.pack(
        "<IIIBdI",
        state.epoch, state.stage2_epochs_done, state.adam.step,
        flags, state.best_val, state.bad_epochs,
    )
    blob += _pack_arrays(model.parameters, "<f8")
    blob += _pack_arrays(state.adam.m, "<f8")
    blob += _pack_arrays(state.adam.v, "<f8")
    if state.best_params is not None:
        blob += _pack_arrays(state.best_params, "<f8")
    if state.mask is not None:
        blob += struct.pack("<Q", state.mask.masked_count)
        blob += _pack_arrays([k.astype(np.uint8) for k in state.mask.keep], "<u1")
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise PersistenceError(f"cannot write train state {path}: {exc}") from exc


def load_train_state(model: FcnModel, path) -> TrainState:
    """Restore parameters into ``model`` and return the loop state."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read train state {path}: {exc}") from exc
    r = _BlobReader(data, str(path))
    if r.take(4) != STATE_MAGIC:
        raise FormatError(f"{path} is not a train state file")
    (version,) = r.unpack("<I")
    if version != STATE_VERSION:
        raise FormatError(f"unsupported train state version {version}")
    epoch, stage2_done, adam_step_count, flags, best_val, bad_epochs = r.unpack("<IIIBdI")
    params = r.arrays("<f8", np.float64)
    model.set_parameters(params)
    adam = AdamState(step=adam_step_count, m=r.arrays("<f8", np.float64),
                     v=r.arrays("<f8", np.float64))
    best = r.arrays("<f8", np.float64) if flags & 4 else None
    mask = None
    if flags & 8:
        (masked_count,) = r.unpack("<Q")
        keep = [k.astype(bool) for k in r.arrays("<u1", np.uint8)]
        mask = WenortMask(keep=keep, masked_count=int(masked_count))
    return TrainState(
        adam=adam,
        epoch=epoch,
        best_val=best_val,
        best_params=best,
        bad_epochs=bad_epochs,
        stopped_early=bool(flags & 1),
        stage1_closed=bool(flags & 2),
        stage2_epochs_done=stage2_done,
        mask=mask,
    )
