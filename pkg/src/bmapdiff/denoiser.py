"""Small noise-prediction network with hand-written gradients.

Architecture: four 3x3 convolutions (stride 1, zero padding) with SiLU
between them. A learned per-timestep bias vector is added to the first
layer's output before its activation. The last convolution starts at zero,
so a fresh network predicts ``eps_hat = 0``.

The first layer sees two channels: the noisy image and the row depth in
[0, 1]. Without the depth channel the stack is translation-equivariant
and cannot tell the probe side from the far field away from the borders.

All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DimensionError, ParameterError, RngStream
from .diffusion import training_pair
from .schedule import BMapSpec, Cone, alpha_schedule, build_bmap_stack, depth_fraction

KERNEL = 3
IN_CHANNELS = 2  # image, depth
LAYERS = ("conv1", "conv2", "conv3", "conv4")

STREAM_INIT = 1
STREAM_TRAIN = 2


@dataclass
class DenoiserParams:
    height: int
    width: int
    hidden: int
    T: int
    tensors: dict[str, np.ndarray]

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def __call__(self, x_t, t):
        return denoiser_forward(self, x_t, t)

    def copy(self) -> "DenoiserParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})


def parameter_shapes(hidden: int, T: int) -> dict[str, tuple[int, ...]]:
    c = hidden
    k = KERNEL
    return {
        "conv1.w": (c, IN_CHANNELS, k, k),
        "conv1.b": (c,),
        "conv2.w": (c, c, k, k),
        "conv2.b": (c,),
        "conv3.w": (c, c, k, k),
        "conv3.b": (c,),
        "conv4.w": (1, c, k, k),
        "conv4.b": (1,),
        "temb": (T, c),
    }


def denoiser_init(height: int, width: int, hidden: int, T: int, seed: int) -> DenoiserParams:
    if height < 8 or width < 8:
        raise DimensionError(f"denoiser needs at least 8x8 inputs, got {height}x{width}")
    if hidden < 4:
        raise ParameterError(f"hidden width must be >= 4, got {hidden}")
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    rng = RngStream(seed, [STREAM_INIT])
    tensors = {}
    for name, shape in parameter_shapes(hidden, T).items():
        if name.endswith(".w") and not name.startswith("conv4"):
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(shape) * np.sqrt(2.0 / fan_in)
        else:
            tensors[name] = np.zeros(shape)
    return DenoiserParams(int(height), int(width), int(hidden), int(T), tensors)


def _im2col(x):
    # (N, C, H, W) -> (N*H*W, C*9) patches of the zero-padded input
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # N, C, H, W, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def _col2im(cols, shape):
    n, c, h, w = shape
    cols = cols.reshape(n, h, w, c, KERNEL, KERNEL)
    out = np.zeros((n, c, h + 2, w + 2))
    for i in range(KERNEL):
        for j in range(KERNEL):
            out[:, :, i : i + h, j : j + w] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out[:, :, 1:-1, 1:-1]


def _conv(x, w, b):
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, w.shape[0]).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, w, x_shape):
    cout = w.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d.T @ cols).reshape(w.shape)
    db = d.sum(axis=0)
    dx = _col2im(d @ w.reshape(cout, -1), x_shape)
    return dx, dw, db


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _prepare(params: DenoiserParams, x_t, t):
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-2:] != (params.height, params.width):
        raise DimensionError(f"input {x.shape[-2:]} does not match denoiser {(params.height, params.width)}")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
    if np.any(t < 1) or np.any(t > params.T):
        raise IndexError(f"timestep outside [1, {params.T}]")
    depth = np.broadcast_to(depth_fraction(params.height)[:, None], x.shape)
    return np.stack([x, depth], axis=1), t, single


def _forward(params: DenoiserParams, x, t):
    p = params.tensors
    cache = []
    h = x
    for i, name in enumerate(LAYERS):
        z, cols = _conv(h, p[name + ".w"], p[name + ".b"])
        if i == 0:
            z = z + p["temb"][t - 1][:, :, None, None]
        cache.append((h.shape, cols, z))
        h = z * _sigmoid(z) if i < len(LAYERS) - 1 else z
    return h, cache


def denoiser_forward(params: DenoiserParams, x_t, t) -> np.ndarray:
    """Predicted noise for ``x_t`` at step ``t`` (scalar or one per batch item)."""
    x, t, single = _prepare(params, x_t, t)
    out, _ = _forward(params, x, t)
    out = out[:, 0]
    return out[0] if single else out


def _stack_batch(batch):
    if isinstance(batch, tuple) and len(batch) == 3 and np.ndim(batch[1]) == 3:
        t, x, y = batch
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        t, x, y = zip(*batch)
    t = np.asarray(t, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return t, x, y


def loss_and_grads(params: DenoiserParams, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared noise-prediction error and its exact gradient.

    ``batch`` is either a sequence of ``(t, x_t, target_eps)`` triples or
    one triple of stacked arrays ``(t[N], x_t[N,H,W], eps[N,H,W])``.
    """
    t, x, target = _stack_batch(batch)
    x, t, _ = _prepare(params, x, t)
    out, cache = _forward(params, x, t)
    diff = out[:, 0] - target
    loss = float(np.mean(diff**2))

    p = params.tensors
    grads = {}
    dh = (2.0 / diff.size) * diff[:, None]
    for i in reversed(range(len(LAYERS))):
        name = LAYERS[i]
        x_shape, cols, z = cache[i]
        if i < len(LAYERS) - 1:
            s = _sigmoid(z)
            dz = dh * s * (1.0 + z * (1.0 - s))
        else:
            dz = dh
        if i == 0:
            dtemb = np.zeros_like(p["temb"])
            np.add.at(dtemb, t - 1, dz.sum(axis=(2, 3)))
            grads["temb"] = dtemb
        dh, grads[name + ".w"], grads[name + ".b"] = _conv_backward(dz, cols, p[name + ".w"], x_shape)
    return loss, {k: grads[k] for k in p}


def gradient_check(params: DenoiserParams, batch, h: float = 1e-5) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    Every parameter is probed. The relative error of an entry is
    ``|g - fd| / max(|g|, |fd|, 1e-8)``.
    """
    _, grads = loss_and_grads(params, batch)
    probe = params.copy()
    worst = 0.0
    for name, tensor in probe.tensors.items():
        flat = tensor.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up, _ = loss_and_grads(probe, batch)
            flat[k] = orig - h
            down, _ = loss_and_grads(probe, batch)
            flat[k] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(g[k] - fd) / max(abs(g[k]), abs(fd), 1e-8)
            worst = max(worst, float(err))
    return worst


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: DenoiserParams, lr: float = 1e-4, **kw) -> OptimizerState:
    zeros = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    return OptimizerState(zeros, {k: z.copy() for k, z in zeros.items()}, lr=lr, **kw)


def adam_step(params: DenoiserParams, grads, state: OptimizerState) -> tuple[DenoiserParams, OptimizerState]:
    """One bias-corrected Adam update; returns new objects, inputs untouched."""
    if grads.keys() != params.tensors.keys():
        raise DimensionError("gradient names do not match parameters")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_t, new_m, new_v = {}, {}, {}
    for k, w in params.tensors.items():
        g = grads[k]
        if g.shape != w.shape:
            raise DimensionError(f"gradient {k} has shape {g.shape}, expected {w.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_t[k] = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return replace(params, tensors=new_t), replace(state, m=new_m, v=new_v, step=step)


@dataclass
class TrainConfig:
    T: int = 200
    eps_b: float = 0.04
    batch_size: int = 4
    iterations: int = 2000
    lr: float = 1e-4
    seed: int = 0
    hidden: int = 16
    alpha_kind: str = "cosine"
    gamma_kind: str = "square-root"
    cone: Cone | None = None
    outside_cone_mode: str = "gamma"

    def build_schedule(self, height: int, width: int):
        sched = alpha_schedule(self.alpha_kind, self.T)
        spec = BMapSpec(height, width, self.eps_b, self.gamma_kind, self.cone, self.outside_cone_mode)
        return sched, build_bmap_stack(sched, spec)


def train(
    config: TrainConfig,
    dataset: Sequence[np.ndarray],
    callback: Callable[[int, float], None] | None = None,
) -> tuple[DenoiserParams, list[float]]:
    """Fit the denoiser on ``dataset`` (images in [-1, 1]) with Adam.

    Iteration ``i`` draws image indices and noise from the stream
    ``(seed, [STREAM_TRAIN, i])`` so runs are reproducible bit for bit.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    data = np.asarray(dataset, dtype=np.float64)
    if np.abs(data).max() > 1.0:
        raise ValueError("training images must lie in [-1, 1]")
    _, height, width = data.shape
    sched, stack = config.build_schedule(height, width)
    params = denoiser_init(height, width, config.hidden, config.T, config.seed)
    state = adam_init(params, lr=config.lr)
    stream = RngStream(config.seed, [STREAM_TRAIN])
    losses = []
    for i in range(config.iterations):
        rng = stream.child(i)
        idx = rng.integers(0, len(data), config.batch_size)
        batch = [training_pair(data[j], sched, stack, rng) for j in idx]
        loss, grads = loss_and_grads(params, batch)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at iteration {i}")
        params, state = adam_step(params, grads, state)
        losses.append(loss)
        if callback is not None:
            callback(i, loss)
    return params, losses
