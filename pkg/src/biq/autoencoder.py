"""Convolutional autoencoder used as the feature extractor.

The analysis transform downsamples by 4, 2, 2 with GDN after the first two
layers; the synthesis transform mirrors it (upsampling 2, 2, 4 with inverse
GDN). The bottleneck is the raw output of the third analysis convolution.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from biq.tensor import (
    AdamState,
    ConvParams,
    GdnParams,
    Tensor,
    adam_step,
    conv2d,
    conv2d_transpose,
    gdn,
    glorot_uniform,
    grad,
    mse_loss,
)

ANALYSIS_STRIDES = (4, 2, 2)
SYNTHESIS_STRIDES = (2, 2, 4)
DOWNSAMPLING = 16

CHECKPOINT_MAGIC = b"BIQCKPT1"


@dataclass
class NetworkConfig:
    channels: int = 32
    kernel_sizes: tuple[int, int, int] = (9, 5, 5)
    patch_size: int = 64
    batch_size: int = 32
    epochs: int = 30
    patches_per_image: int = 200
    lr: float = 1e-4
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.kernel_sizes) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel_sizes must be three odd integers, got {self.kernel_sizes}")
        if self.patch_size <= 0 or self.patch_size % DOWNSAMPLING:
            raise ValueError(f"patch_size must be a positive multiple of 16, got {self.patch_size}")
        for name in ("channels", "batch_size", "patches_per_image"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    @property
    def latent_size(self) -> int:
        return self.patch_size // DOWNSAMPLING


# ---------------------------------------------------------------------------
# network parameters


PARAM_ORDER = (
    "analysis.0.weight", "analysis.0.bias", "analysis.0.beta", "analysis.0.gamma",
    "analysis.1.weight", "analysis.1.bias", "analysis.1.beta", "analysis.1.gamma",
    "analysis.2.weight", "analysis.2.bias",
    "synthesis.0.weight", "synthesis.0.bias", "synthesis.0.beta", "synthesis.0.gamma",
    "synthesis.1.weight", "synthesis.1.bias", "synthesis.1.beta", "synthesis.1.gamma",
    "synthesis.2.weight", "synthesis.2.bias",
)  # fmt: skip


def init_params(config: NetworkConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    c = config.channels
    k1, k2, k3 = config.kernel_sizes
    params: dict[str, np.ndarray] = {}
    # analysis: 1 -> C -> C -> C; synthesis weights are stored (C_in, C_out, k, k)
    shapes = {
        "analysis.0.weight": (c, 1, k1, k1),
        "analysis.1.weight": (c, c, k2, k2),
        "analysis.2.weight": (c, c, k3, k3),
        "synthesis.0.weight": (c, c, k3, k3),
        "synthesis.1.weight": (c, c, k2, k2),
        "synthesis.2.weight": (c, 1, k1, k1),
    }
    for name in PARAM_ORDER:
        if name.endswith("weight"):
            params[name] = glorot_uniform(shapes[name], rng, dtype)
        elif name.endswith("bias"):
            out_ch = 1 if name == "synthesis.2.bias" else c
            params[name] = np.zeros(out_ch, dtype=dtype)
        elif name.endswith("beta"):
            params[name] = np.ones(c, dtype=dtype)
        else:
            params[name] = (0.1 * np.eye(c)).astype(dtype)
    return params


class Network:
    """Differentiable view over a parameter dictionary."""

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray], requires_grad=False):
        self.config = config
        self.tensors = {
            name: Tensor(params[name], requires_grad=requires_grad, name=name)
            for name in PARAM_ORDER
        }
        t = self.tensors
        ks = config.kernel_sizes
        self.analysis_convs = [
            ConvParams(t[f"analysis.{i}.weight"], t[f"analysis.{i}.bias"],
                       stride=ANALYSIS_STRIDES[i], padding=ks[i] // 2)
            for i in range(3)
        ]  # fmt: skip
        synth_k = ks[::-1]
        self.synthesis_convs = [
            ConvParams(t[f"synthesis.{i}.weight"], t[f"synthesis.{i}.bias"],
                       stride=SYNTHESIS_STRIDES[i], padding=synth_k[i] // 2,
                       output_padding=SYNTHESIS_STRIDES[i] - 1)
            for i in range(3)
        ]  # fmt: skip
        self.analysis_gdn = [GdnParams(t[f"analysis.{i}.beta"], t[f"analysis.{i}.gamma"]) for i in range(2)]
        self.synthesis_gdn = [GdnParams(t[f"synthesis.{i}.beta"], t[f"synthesis.{i}.gamma"]) for i in range(2)]

    def parameters(self) -> list[Tensor]:
        return [self.tensors[name] for name in PARAM_ORDER]

    def analysis(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.analysis_convs):
            x = conv2d(x, conv)
            if i < 2:
                x = gdn(x, self.analysis_gdn[i])
        return x

    def synthesis(self, y: Tensor) -> Tensor:
        for i, conv in enumerate(self.synthesis_convs):
            y = conv2d_transpose(y, conv)
            if i < 2:
                y = gdn(y, self.synthesis_gdn[i], inverse=True)
        return y


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    final_loss: float = float("nan")
    epochs_run: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    def network(self, dtype=np.float64) -> Network:
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def to_bytes(self) -> bytes:
        cfg = self.config
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I3I3I", cfg.channels, *cfg.kernel_sizes, *ANALYSIS_STRIDES))
        buf.write(struct.pack("<4I", cfg.patch_size, cfg.batch_size, cfg.epochs, cfg.patches_per_image))
        buf.write(struct.pack("<Q", cfg.seed))
        buf.write(struct.pack("<4d", cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon))
        buf.write(struct.pack("<dI", self.final_loss, self.epochs_run))
        buf.write(struct.pack("<I", len(self.loss_history)))
        buf.write(np.asarray(self.loss_history, dtype="<f8").tobytes())
        buf.write(struct.pack("<I", len(PARAM_ORDER)))
        for name in PARAM_ORDER:
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        buf = io.BytesIO(blob[8:])

        def read(fmt):
            size = struct.calcsize(fmt)
            chunk = buf.read(size)
            if len(chunk) != size:
                raise ValueError("truncated checkpoint file")
            return struct.unpack(fmt, chunk)

        channels, k1, k2, k3, *strides = read("<I3I3I")
        if tuple(strides) != ANALYSIS_STRIDES:
            raise ValueError(f"unsupported strides {strides}")
        patch_size, batch_size, epochs, per_image = read("<4I")
        (seed,) = read("<Q")
        lr, b1, b2, eps = read("<4d")
        final_loss, epochs_run = read("<dI")
        (n_hist,) = read("<I")
        history = list(read(f"<{n_hist}d")) if n_hist else []
        config = NetworkConfig(
            channels=channels, kernel_sizes=(k1, k2, k3), patch_size=patch_size,
            batch_size=batch_size, epochs=epochs, patches_per_image=per_image,
            lr=lr, seed=seed, adam_beta1=b1, adam_beta2=b2, adam_epsilon=eps,
        )  # fmt: skip
        (n_params,) = read("<I")
        if n_params != len(PARAM_ORDER):
            raise ValueError(f"expected {len(PARAM_ORDER)} tensors, found {n_params}")
        params = {}
        for name in PARAM_ORDER:
            (rank,) = read("<I")
            shape = read(f"<{rank}I")
            count = int(np.prod(shape))
            data = buf.read(4 * count)
            if len(data) != 4 * count:
                raise ValueError("truncated checkpoint file")
            params[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
        if buf.read(1):
            raise ValueError("trailing bytes in checkpoint file")
        expected = init_params(config)
        for name in PARAM_ORDER:
            if params[name].shape != expected[name].shape:
                raise ValueError(f"{name}: shape {params[name].shape} inconsistent with config")
        return cls(config, params, final_loss, epochs_run, history)

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


# ---------------------------------------------------------------------------
# inference


def _check_patch(x: np.ndarray, size: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[-3:] != (1, size, size):
        raise ValueError(f"expected a 1x{size}x{size} patch, got shape {x.shape}")
    return x


def analysis_transform(patch: np.ndarray, checkpoint: Checkpoint, network: Network | None = None) -> np.ndarray:
    """Bottleneck features ``(C, S/16, S/16)`` (or batched) of a patch."""
    x = _check_patch(patch, checkpoint.config.patch_size)
    net = network or checkpoint.network()
    return net.analysis(Tensor(x.astype(np.float64))).data


def synthesis_transform(latent: np.ndarray, checkpoint: Checkpoint, network: Network | None = None) -> np.ndarray:
    cfg = checkpoint.config
    latent = np.asarray(latent)
    expected = (cfg.channels, cfg.latent_size, cfg.latent_size)
    if latent.shape[-3:] != expected or latent.ndim not in (3, 4):
        raise ValueError(f"expected latent of shape {expected}, got {latent.shape}")
    net = network or checkpoint.network()
    return net.synthesis(Tensor(latent.astype(np.float64))).data


# ---------------------------------------------------------------------------
# patches


@dataclass
class PatchSet:
    patches: np.ndarray  # (P, 1, S, S)
    sources: list[str]
    offsets: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.offsets)


def grid_offsets(extent: int, size: int, stride: int) -> list[int]:
    if stride <= 0:
        raise ValueError("stride must be positive")
    offs = list(range(0, extent - size + 1, stride))
    if offs[-1] != extent - size:
        offs.append(extent - size)
    return offs


def extract_patches(
    image: np.ndarray,
    size: int,
    count: int | None = None,
    mode: str = "random",
    seed: int = 0,
    stride: int | None = None,
    image_id: str = "image",
) -> PatchSet:
    """Cut square patches out of a 2-D image.

    ``mode="random"`` draws ``count`` overlapping patches at uniform offsets;
    ``mode="grid"`` visits every ``stride`` step plus a final flush offset.
    """
    image = np.asarray(image)
    h, w = image.shape
    if h < size or w < size:
        raise ValueError(f"{image_id}: image {h}x{w} is smaller than patch size {size}")
    if mode == "random":
        if count is None or count <= 0:
            raise ValueError("random mode needs a positive count")
        rng = np.random.default_rng(seed)
        ys = rng.integers(0, h - size + 1, size=count)
        xs = rng.integers(0, w - size + 1, size=count)
        offsets = [(int(y), int(x)) for y, x in zip(ys, xs)]
    elif mode == "grid":
        stride = stride or size
        offsets = [(y, x) for y in grid_offsets(h, size, stride) for x in grid_offsets(w, size, stride)]
    else:
        raise ValueError(f"unknown patch mode {mode!r}")
    patches = np.stack([image[y : y + size, x : x + size] for y, x in offsets])[:, None]
    return PatchSet(patches, [image_id] * len(offsets), offsets)


# ---------------------------------------------------------------------------
# training


def train(
    images: Sequence[np.ndarray],
    config: NetworkConfig,
    on_epoch: Callable[[int, float], None] | None = None,
    max_steps: int | None = None,
) -> Checkpoint:
    """Fit the autoencoder to random patches of ``images`` by minimizing MSE."""
    size = config.patch_size
    usable = [im for im in images if im.shape[0] >= size and im.shape[1] >= size]
    if not usable:
        raise ValueError(f"no usable images: need at least one image of {size}x{size} or larger")
    seeds = np.random.SeedSequence(config.seed).spawn(len(usable) + 1)
    patches = np.concatenate([
        extract_patches(im, size, config.patches_per_image, "random",
                        seed=int(s.generate_state(1)[0])).patches
        for im, s in zip(usable, seeds[:-1])
    ]).astype(np.float32)  # fmt: skip
    shuffle_rng = np.random.default_rng(seeds[-1])

    net = Network(config, init_params(config), requires_grad=True)
    params = net.parameters()
    state = AdamState(lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, epsilon=config.adam_epsilon)
    history: list[float] = []
    steps = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(patches))
        total = 0.0
        seen = 0
        for start in range(0, len(order), config.batch_size):
            batch = patches[order[start : start + config.batch_size]]
            target = Tensor(batch)
            loss = mse_loss(net.synthesis(net.analysis(target)), target)
            grads = grad(loss, params)
            adam_step(params, grads, state)
            total += float(loss.data) * len(batch)
            seen += len(batch)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        history.append(total / seen)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        if max_steps is not None and steps >= max_steps:
            break

    trained = {name: net.tensors[name].data.astype(np.float32) for name in PARAM_ORDER}
    return Checkpoint(
        config=config,
        params=trained,
        final_loss=history[-1] if history else float("nan"),
        epochs_run=len(history),
        loss_history=history,
    )


def reconstruction_mse(patches: np.ndarray, checkpoint: Checkpoint) -> float:
    net = checkpoint.network()
    x = Tensor(np.asarray(patches, dtype=np.float64))
    return float(np.mean((net.synthesis(net.analysis(x)).data - x.data) ** 2))
