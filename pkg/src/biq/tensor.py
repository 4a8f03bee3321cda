"""Dense tensors with reverse-mode differentiation.

Only the handful of operations the autoencoder needs are provided: strided
convolution and its transpose, (inverse) generalized divisive normalization
and a mean-squared-error loss. Every operation accepts either a single
``(C, H, W)`` map or a batch ``(N, C, H, W)``; the batch axis is preserved.

Backward functions follow one pattern: a closure created at forward time
receives the output gradient and accumulates into the ``grad`` of each input
that requires one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BETA_MIN = 1e-6


class Tensor:
    """An array plus the bookkeeping needed to backpropagate through it."""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        minimum: float | None = None,
        name: str = "",
    ):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        # lower bound enforced by the optimizer after each update
        self.minimum = minimum
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar, got shape {self.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(node: Tensor) -> None:
            # iterative DFS; the autoencoder graph is shallow but batches of
            # graphs may be chained by callers
            stack = [(node, False)]
            while stack:
                cur, done = stack.pop()
                if done:
                    order.append(cur)
                    continue
                if id(cur) in seen:
                    continue
                seen.add(id(cur))
                stack.append((cur, True))
                for p in cur.parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C,H,W) or (N,C,H,W) array, got shape {x.shape}")


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for ``params``; unused parameters get zeros."""
    params = list(params)
    for p in params:
        p.zero_grad()
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def transpose_output_size(
    size: int, k: int, stride: int, padding: int, output_padding: int = 0
) -> int:
    return (size - 1) * stride - 2 * padding + k + output_padding


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, ho, wo, k, k) view of every receptive field of a padded input."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, wd = x.shape
    k = w.shape[-1]
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k, stride, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(
    g: np.ndarray, w: np.ndarray, stride: int, padding: int, out_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of ``_correlate``: scatter-add each output site back over its window.

    ``g`` is (N, Co, ho, wo) and ``w`` is (Co, Ci, k, k); the result is
    (N, Ci, H, W) with (H, W) = ``out_hw``.
    """
    n, _, ho, wo = g.shape
    ci, k = w.shape[1], w.shape[-1]
    h, wd = out_hw
    hp = max(h + 2 * padding, (ho - 1) * stride + k)
    wp = max(wd + 2 * padding, (wo - 1) * stride + k)
    cols = np.tensordot(g, w, axes=([1], [0]))  # N, ho, wo, Ci, k, k
    cols = np.ascontiguousarray(cols.transpose(0, 3, 4, 5, 1, 2))  # N, Ci, k, k, ho, wo
    xp = np.zeros((n, ci, hp, wp), dtype=np.result_type(g, w))
    for i in range(k):
        for j in range(k):
            xp[
                :, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride
            ] += cols[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, padding : padding + h, padding : padding + wd])


def _weight_grad(
    x: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int
) -> np.ndarray:
    """d<g, correlate(x, w)>/dw, shaped (Co, Ci, k, k)."""
    ho, wo = g.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k, stride, ho, wo)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    """Weights and geometry of one convolution layer.

    For ``conv2d`` the weights are ``(C_out, C_in, k, k)``. ``conv2d_transpose``
    uses the same array as the adjoint map, so it consumes ``weights.shape[0]``
    channels and produces ``weights.shape[1]``.
    """

    weights: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    output_padding: int = 0

    def __post_init__(self):
        k = self.weights.shape[-1]
        if self.weights.data.ndim != 4 or self.weights.shape[-2] != k:
            raise ValueError(f"weights must be (C_out, C_in, k, k), got {self.weights.shape}")
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        if self.stride < 1 or self.padding < 0 or self.output_padding < 0:
            raise ValueError("stride must be positive and paddings non-negative")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[-1]

    def tensors(self) -> list[Tensor]:
        return [self.weights, self.bias]


@dataclass
class GdnParams:
    beta: Tensor
    gamma: Tensor

    def __post_init__(self):
        c = self.beta.shape[0]
        if self.gamma.shape != (c, c):
            raise ValueError(f"gamma must be ({c}, {c}), got {self.gamma.shape}")
        self.beta.minimum = BETA_MIN
        self.gamma.minimum = 0.0

    @classmethod
    def initial(cls, channels: int, dtype=np.float64) -> "GdnParams":
        return cls(
            beta=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            gamma=Tensor(0.1 * np.eye(channels, dtype=dtype), requires_grad=True),
        )

    def tensors(self) -> list[Tensor]:
        return [self.beta, self.gamma]


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    c_out, c_in, k, _ = shape
    limit = np.sqrt(6.0 / (c_in * k * k + c_out * k * k))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# differentiable operations


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    w, b = params.weights, params.bias
    s, p, k = params.stride, params.padding, params.kernel_size
    xb, squeeze = _as_batch(x.data)
    if xb.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d: input has {xb.shape[1]} channels, weights expect {w.shape[1]}"
        )
    if b.shape != (w.shape[0],):
        raise ValueError(f"conv2d: bias has shape {b.shape}, expected ({w.shape[0]},)")
    h, wd = xb.shape[2:]
    if h + 2 * p < k or wd + 2 * p < k:
        raise ValueError(f"conv2d: input {h}x{wd} smaller than kernel {k} after padding {p}")
    out = _correlate(xb, w.data, s, p) + b.data[None, :, None, None]

    def backward_fn(g: np.ndarray) -> None:
        gb = g[None] if squeeze else g
        if x.requires_grad:
            gx = _scatter(gb, w.data, s, p, (h, wd))
            x._accumulate(gx[0] if squeeze else gx)
        if w.requires_grad:
            w._accumulate(_weight_grad(xb, gb, k, s, p))
        if b.requires_grad:
            b._accumulate(gb.sum(axis=(0, 2, 3)))

    return Tensor(
        out[0] if squeeze else out,
        requires_grad=_needs_grad(x, w, b),
        parents=(x, w, b),
        backward_fn=backward_fn,
    )


def conv2d_transpose(x: Tensor, params: ConvParams) -> Tensor:
    """Adjoint of ``conv2d`` with the same weights, plus a bias.

    Output extent is ``(H-1)*stride - 2*padding + k + output_padding``.
    """
    w, b = params.weights, params.bias
    s, p, k, op = params.stride, params.padding, params.kernel_size, params.output_padding
    xb, squeeze = _as_batch(x.data)
    if xb.shape[1] != w.shape[0]:
        raise ValueError(
            f"conv2d_transpose: input has {xb.shape[1]} channels, weights expect {w.shape[0]}"
        )
    if b.shape != (w.shape[1],):
        raise ValueError(f"conv2d_transpose: bias has shape {b.shape}, expected ({w.shape[1]},)")
    if op >= s:
        raise ValueError(f"output_padding {op} must be smaller than stride {s}")
    h, wd = xb.shape[2:]
    ho = transpose_output_size(h, k, s, p, op)
    wo = transpose_output_size(wd, k, s, p, op)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d_transpose: non-positive output extent {ho}x{wo}")
    out = _scatter(xb, w.data, s, p, (ho, wo)) + b.data[None, :, None, None]

    def backward_fn(g: np.ndarray) -> None:
        gb = g[None] if squeeze else g
        if x.requires_grad:
            gx = _correlate(gb, w.data, s, p)
            x._accumulate(gx[0] if squeeze else gx)
        if w.requires_grad:
            # roles of input and output swap relative to conv2d
            w._accumulate(_weight_grad(gb, xb, k, s, p))
        if b.requires_grad:
            b._accumulate(gb.sum(axis=(0, 2, 3)))

    return Tensor(
        out[0] if squeeze else out,
        requires_grad=_needs_grad(x, w, b),
        parents=(x, w, b),
        backward_fn=backward_fn,
    )


def gdn(x: Tensor, params: GdnParams, inverse: bool = False) -> Tensor:
    """Generalized divisive normalization across channels at each site.

    ``d_i = sqrt(beta_i + sum_j gamma_ij x_j^2)``; forward returns ``x_i / d_i``,
    inverse returns ``x_i * d_i``.
    """
    beta, gamma = params.beta, params.gamma
    xb, squeeze = _as_batch(x.data)
    if xb.shape[1] != beta.shape[0]:
        raise ValueError(f"gdn: input has {xb.shape[1]} channels, params have {beta.shape[0]}")
    sq = xb * xb
    pooled = np.tensordot(gamma.data, sq, axes=([1], [1])).transpose(1, 0, 2, 3)
    pooled = pooled + beta.data[None, :, None, None]
    norm = np.sqrt(pooled)
    out = xb * norm if inverse else xb / norm

    def backward_fn(g: np.ndarray) -> None:
        gb = g[None] if squeeze else g
        if inverse:
            direct = gb * norm
            g_pooled = gb * xb * 0.5 / norm
        else:
            direct = gb / norm
            g_pooled = -0.5 * gb * xb / (pooled * norm)
        if x.requires_grad:
            g_sq = np.tensordot(gamma.data, g_pooled, axes=([0], [1])).transpose(1, 0, 2, 3)
            gx = direct + 2.0 * xb * g_sq
            x._accumulate(gx[0] if squeeze else gx)
        if beta.requires_grad:
            beta._accumulate(g_pooled.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma._accumulate(np.tensordot(g_pooled, sq, axes=([0, 2, 3], [0, 2, 3])))

    return Tensor(
        out[0] if squeeze else out,
        requires_grad=_needs_grad(x, beta, gamma),
        parents=(x, beta, gamma),
        backward_fn=backward_fn,
    )


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff))

    def backward_fn(g: np.ndarray) -> None:
        scale = 2.0 * g / n
        if prediction.requires_grad:
            prediction._accumulate(scale * diff)
        if target.requires_grad:
            target._accumulate(-scale * diff)

    return Tensor(
        out,
        requires_grad=_needs_grad(prediction, target),
        parents=(prediction, target),
        backward_fn=backward_fn,
    )


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One in-place Adam update, then clamp any parameter carrying a ``minimum``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
        if p.minimum is not None:
            np.maximum(p.data, p.minimum, out=p.data)
