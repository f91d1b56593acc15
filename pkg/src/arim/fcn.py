"""Fully convolutional network with explicit forward and reverse-mode passes.

The network is a stack of convolution blocks over a (frames, n_fft, 3)
input.  Convolutions are stride-1 with circular padding along the frequency
axis and zero padding along the frame axis, so the whole map commutes with
circular frequency shifts.  2x1 max pooling shrinks the frame axis after the
early blocks; a global vertical mean collapses it to 1 before the last
block, whose final 1x1 convolution maps to the 3 output channels.

All arithmetic is float64; checkpoints store float32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, PersistenceError, ShapeError, StateError
from .kernels import conv2d_forward, conv2d_grad_kernels

CHECKPOINT_MAGIC = b"FCNW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    input_frames: int
    n_fft: int
    block_channels: tuple[int, ...] = (32, 64, 96, 128)
    block_kernel_sizes: tuple[int, ...] = (13, 9, 5, 5)
    convs_per_block: tuple[int, ...] = (3, 3, 2, 2)
    pool_after_block: tuple[bool, ...] = (True, True, True, False)
    leaky_slope: float = 0.01
    capacity_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        object.__setattr__(self, "block_kernel_sizes", tuple(self.block_kernel_sizes))
        object.__setattr__(self, "convs_per_block", tuple(self.convs_per_block))
        object.__setattr__(self, "pool_after_block", tuple(bool(p) for p in self.pool_after_block))
        n = len(self.block_channels)
        if n < 1:
            raise ConfigError("at least one block is required")
        if not (len(self.block_kernel_sizes) == len(self.convs_per_block)
                == len(self.pool_after_block) == n):
            raise ConfigError("per-block lists must have equal lengths")
        if any(c < 1 for c in self.block_channels):
            raise ConfigError("block channel counts must be positive")
        if any(k < 1 or k % 2 == 0 for k in self.block_kernel_sizes):
            raise ConfigError("kernel sides must be odd and positive")
        if any(c < 1 for c in self.convs_per_block):
            raise ConfigError("each block needs at least one convolution")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must be in [0, 1)")
        if not 0.0 < self.capacity_scale <= 1.0:
            raise ConfigError("capacity_scale must be in (0, 1]")
        if self.input_frames < 1 or self.n_fft < 1:
            raise ConfigError("input_frames and n_fft must be positive")

    @property
    def n_convs(self) -> int:
        return sum(self.convs_per_block)

    def scaled_channels(self) -> tuple[int, ...]:
        return tuple(math.ceil(c * self.capacity_scale) for c in self.block_channels)

    def conv_shapes(self) -> list[tuple[int, int, int]]:
        """(kernel_side, c_in, c_out) per convolution, in network order."""
        shapes = []
        c_in = 3
        idx = 0
        channels = self.scaled_channels()
        for b in range(len(self.block_channels)):
            for _ in range(self.convs_per_block[b]):
                last = idx == self.n_convs - 1
                k = 1 if last else self.block_kernel_sizes[b]
                c_out = 3 if last else channels[b]
                shapes.append((k, c_in, c_out))
                c_in = c_out
                idx += 1
        return shapes


def _build_plan(cfg: ArchConfig) -> list[tuple]:
    """Static op sequence: conv / act / pool / collapse steps."""
    plan: list[tuple] = []
    n_blocks = len(cfg.block_channels)
    idx = 0
    for b in range(n_blocks):
        if b == n_blocks - 1:
            plan.append(("collapse",))
        for _ in range(cfg.convs_per_block[b]):
            plan.append(("conv", idx))
            idx += 1
            if idx <= cfg.n_convs - 2:
                plan.append(("act",))
        if cfg.pool_after_block[b]:
            plan.append(("pool",))
    return plan


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 <= slope < 1.0:
        raise ConfigError(f"slope must be in [0, 1), got {slope}")
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    """Input-side multiplier; the subgradient at exactly 0 is the slope."""
    return np.where(np.asarray(x) > 0, 1.0, slope)


def conv2d(inp: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 same-size convolution: circular width pad, zero height pad."""
    inp = np.asarray(inp, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1]:
        raise ConfigError(f"kernels must be (k, k, c_in, c_out), got {kernels.shape}")
    if kernels.shape[0] % 2 == 0:
        raise ConfigError(f"kernel side must be odd, got {kernels.shape[0]}")
    if inp.ndim != 3 or inp.shape[2] != kernels.shape[2]:
        raise ShapeError(
            f"input {inp.shape} does not match kernel input channels {kernels.shape[2]}"
        )
    return conv2d_forward(inp, kernels, bias)


def maxpool_2x1(x: np.ndarray) -> np.ndarray:
    """Vertical max over non-overlapping 2x1 windows, last row replicated when odd."""
    out, _, _ = _maxpool_forward(np.asarray(x, dtype=np.float64))
    return out


def _maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    h = x.shape[0]
    xp = np.concatenate([x, x[-1:]], axis=0) if h % 2 else x
    a = xp[0::2]
    b = xp[1::2]
    take_first = a >= b
    return np.where(take_first, a, b), take_first, h


def _maxpool_backward(g: np.ndarray, take_first: np.ndarray, h: int) -> np.ndarray:
    out = np.zeros((take_first.shape[0] * 2,) + g.shape[1:], dtype=g.dtype)
    out[0::2] = np.where(take_first, g, 0.0)
    out[1::2] = np.where(take_first, 0.0, g)
    return out[:h]


def vertical_collapse(x: np.ndarray) -> np.ndarray:
    """Global mean over the frame axis, keeping a height of 1."""
    return np.asarray(x, dtype=np.float64).mean(axis=0, keepdims=True)


def _rotated(kernels: np.ndarray) -> np.ndarray:
    # kernel for the input-gradient pass: flip both spatial axes, swap in/out
    return np.ascontiguousarray(kernels[::-1, ::-1].transpose(0, 1, 3, 2))


@dataclass
class ConvParams:
    kernels: np.ndarray  # (k, k, c_in, c_out)
    bias: np.ndarray  # (c_out,)


class FcnModel:
    """Network parameters plus the forward/backward machinery.

    forward() retains intermediates on the instance for a subsequent
    backward(); a model is therefore single-writer.  infer() keeps nothing
    and is safe to call concurrently on a shared instance.
    """

    def __init__(self, cfg: ArchConfig, convs: list[ConvParams]):
        shapes = cfg.conv_shapes()
        if len(convs) != len(shapes):
            raise ConfigError(f"expected {len(shapes)} convolutions, got {len(convs)}")
        for i, ((k, ci, co), cp) in enumerate(zip(shapes, convs)):
            if cp.kernels.shape != (k, k, ci, co) or cp.bias.shape != (co,):
                raise ConfigError(
                    f"conv {i}: expected kernels {(k, k, ci, co)}, got {cp.kernels.shape}"
                )
        self.cfg = cfg
        self.convs = convs
        self.plan = _build_plan(cfg)
        self._cache: list | None = None

    @property
    def parameters(self) -> list[np.ndarray]:
        out = []
        for cp in self.convs:
            out.append(cp.kernels)
            out.append(cp.bias)
        return out

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters)

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters]

    def set_parameters(self, values: list[np.ndarray]) -> None:
        params = self.parameters
        if len(values) != len(params):
            raise ConfigError("parameter list length mismatch")
        for dst, src in zip(params, values):
            if dst.shape != src.shape:
                raise ConfigError("parameter shape mismatch")
            dst[...] = src

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        expected = (self.cfg.input_frames, self.cfg.n_fft, 3)
        if x.shape != expected:
            raise ShapeError(f"input layer expects {expected}, got {x.shape}")
        return x

    def _run(self, x, cache, dropout_rate, rng):
        h = x
        for step in self.plan:
            kind = step[0]
            if kind == "conv":
                cp = self.convs[step[1]]
                if cache is not None:
                    cache.append(("conv", step[1], h))
                h = conv2d_forward(h, cp.kernels, cp.bias)
            elif kind == "act":
                if cache is not None:
                    cache.append(("act", h))
                h = leaky_relu(h, self.cfg.leaky_slope)
            elif kind == "pool":
                pooled, take_first, height = _maxpool_forward(h)
                drop = None
                if dropout_rate > 0.0:
                    keep = 1.0 - dropout_rate
                    drop = (rng.random(pooled.shape) >= dropout_rate) / keep
                    pooled = pooled * drop
                if cache is not None:
                    cache.append(("pool", take_first, height, drop))
                h = pooled
            else:  # collapse
                if cache is not None:
                    cache.append(("collapse", h.shape[0]))
                h = h.mean(axis=0, keepdims=True)
        return h

    def forward(
        self,
        x: np.ndarray,
        dropout_rate: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Run the network and retain intermediates for backward()."""
        x = self._check_input(x)
        if dropout_rate > 0.0 and rng is None:
            raise ConfigError("dropout requires an rng")
        cache: list = []
        out = self._run(x, cache, dropout_rate, rng)
        self._cache = cache
        return out

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without retained intermediates (thread-safe)."""
        return self._run(self._check_input(x), None, 0.0, None)

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Exact reverse-mode gradients for every parameter.

        Returns arrays aligned with ``parameters``.  Requires a prior
        forward() on this instance.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(grad_out, dtype=np.float64)
        expected = (1, self.cfg.n_fft, 3)
        if g.shape != expected:
            raise ShapeError(f"output gradient must be {expected}, got {g.shape}")
        grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for entry in reversed(self._cache):
            kind = entry[0]
            if kind == "conv":
                idx, inp = entry[1], entry[2]
                cp = self.convs[idx]
                gb = g.sum(axis=(0, 1))
                gk = conv2d_grad_kernels(inp, g, cp.kernels.shape[0])
                g = conv2d_forward(g, _rotated(cp.kernels), np.zeros(cp.kernels.shape[2]))
                grads[idx] = (gk, gb)
            elif kind == "act":
                g = g * leaky_relu_grad(entry[1], self.cfg.leaky_slope)
            elif kind == "pool":
                _, take_first, height, drop = entry
                if drop is not None:
                    g = g * drop
                g = _maxpool_backward(g, take_first, height)
            else:  # collapse
                height = entry[1]
                g = np.repeat(g / height, height, axis=0)
        out: list[np.ndarray] = []
        for idx in range(len(self.convs)):
            gk, gb = grads[idx]
            out.append(gk)
            out.append(gb)
        return out


def build_fcn(cfg: ArchConfig, rng: np.random.Generator) -> FcnModel:
    """Initialize kernels from a fan-in-scaled normal, biases at zero."""
    convs = []
    for k, c_in, c_out in cfg.conv_shapes():
        std = math.sqrt(2.0 / (k * k * c_in))
        kernels = rng.standard_normal((k, k, c_in, c_out)) * std
        convs.append(ConvParams(kernels=kernels, bias=np.zeros(c_out)))
    return FcnModel(cfg, convs)


def save_checkpoint(model: FcnModel, path) -> None:
    """Write the versioned binary checkpoint (float32 parameters)."""
    cfg = model.cfg
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<III", cfg.input_frames, cfg.n_fft, len(cfg.block_channels))
    for b in range(len(cfg.block_channels)):
        blob += struct.pack(
            "<IIIB",
            cfg.block_channels[b],
            cfg.block_kernel_sizes[b],
            cfg.convs_per_block[b],
            1 if cfg.pool_after_block[b] else 0,
        )
    blob += struct.pack("<dd", cfg.leaky_slope, cfg.capacity_scale)
    params = model.parameters
    blob += struct.pack("<I", len(params))
    for p in params:
        blob += struct.pack("<I", p.ndim)
        blob += struct.pack(f"<{p.ndim}I", *p.shape)
        blob += np.ascontiguousarray(p, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
    except OSError as exc:
        raise PersistenceError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated checkpoint {self.path}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> FcnModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise PersistenceError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    frames, n_fft, n_blocks = r.unpack("<III")
    channels, ksizes, convs, pools = [], [], [], []
    for _ in range(n_blocks):
        c, k, n, p = r.unpack("<IIIB")
        channels.append(c)
        ksizes.append(k)
        convs.append(n)
        pools.append(bool(p))
    slope, capacity = r.unpack("<dd")
    cfg = ArchConfig(
        input_frames=frames,
        n_fft=n_fft,
        block_channels=tuple(channels),
        block_kernel_sizes=tuple(ksizes),
        convs_per_block=tuple(convs),
        pool_after_block=tuple(pools),
        leaky_slope=slope,
        capacity_scale=capacity,
    )
    (n_params,) = r.unpack("<I")
    shapes = cfg.conv_shapes()
    if n_params != 2 * len(shapes):
        raise FormatError(f"checkpoint carries {n_params} arrays, expected {2 * len(shapes)}")
    arrays = []
    for _ in range(n_params):
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        raw = r.take(4 * count)
        arrays.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape))
    model_convs = []
    for i, (k, ci, co) in enumerate(shapes):
        kern, bias = arrays[2 * i], arrays[2 * i + 1]
        if kern.shape != (k, k, ci, co) or bias.shape != (co,):
            raise FormatError(f"checkpoint conv {i} has shape {kern.shape}, expected {(k, k, ci, co)}")
        model_convs.append(ConvParams(kernels=kern, bias=bias))
    return FcnModel(cfg, model_convs)
