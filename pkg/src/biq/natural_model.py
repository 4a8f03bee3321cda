"""Non-parametric model of pristine bottleneck features and KL scoring.

Each bottleneck channel gets its own univariate Epanechnikov KDE. A query
image is encoded the same way and scored by the mean over channels of
``KL(query || natural)`` evaluated on a shared discrete grid.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from biq.autoencoder import Checkpoint, Network, extract_patches
from biq.tensor import Tensor

MODEL_MAGIC = b"BIQNMDL1"

BANDWIDTH_FACTOR = 2.345
BANDWIDTH_FLOOR = 1e-6
IQR_SCALE = 1.349


def epanechnikov_kernel(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def silverman_bandwidth(
    observations: np.ndarray, factor: float = BANDWIDTH_FACTOR, floor: float = BANDWIDTH_FLOOR
) -> float:
    """Silverman's rule rescaled for the Epanechnikov kernel, with a robust spread."""
    x = np.asarray(observations, dtype=np.float64)
    n = x.size
    std = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, float(q75 - q25) / IQR_SCALE)
    return max(factor * spread * n ** (-0.2), floor)


@dataclass
class ChannelKDE:
    observations: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.observations.ndim != 1 or self.observations.size < 2:
            raise ValueError("a KDE needs at least 2 observations")
        if not np.all(np.isfinite(self.observations)):
            raise ValueError("observations must be finite")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def n(self) -> int:
        return self.observations.size

    def __call__(self, x):
        return kde_evaluate(self, x)


def fit_kde(
    observations: Sequence[float],
    bandwidth: float | None = None,
    factor: float = BANDWIDTH_FACTOR,
    floor: float = BANDWIDTH_FLOOR,
) -> ChannelKDE:
    obs = np.asarray(observations, dtype=np.float64).ravel()
    if obs.size < 2:
        raise ValueError(f"need at least 2 observations, got {obs.size}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observations must be finite")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(obs, factor, floor)
    return ChannelKDE(obs, float(bandwidth))


def kde_evaluate(kde: ChannelKDE, x, chunk: int = 1 << 22):
    """Density estimate ``1/(n h) * sum_i K((X_i - x) / h)`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    obs = kde.observations
    h = kde.bandwidth
    out = np.empty(flat.size)
    step = max(1, chunk // obs.size)
    for start in range(0, flat.size, step):
        u = (obs[None, :] - flat[start : start + step, None]) / h
        out[start : start + step] = epanechnikov_kernel(u).sum(axis=1)
    out /= kde.n * h
    return out.reshape(x.shape) if x.ndim else float(out[0])


# ---------------------------------------------------------------------------
# divergence


@dataclass(frozen=True)
class GridSpec:
    points: int = 512
    floor: float = 1e-12

    def __post_init__(self):
        if self.points < 16:
            raise ValueError(f"grid needs at least 16 points, got {self.points}")

    def grid_for(self, p: ChannelKDE, q: ChannelKDE) -> np.ndarray:
        pad = max(p.bandwidth, q.bandwidth)
        lo = min(p.observations.min(), q.observations.min()) - pad
        hi = max(p.observations.max(), q.observations.max()) + pad
        if not hi > lo:
            raise ValueError("degenerate divergence grid")
        return np.linspace(lo, hi, self.points)


def discrete_kl(p: np.ndarray, q: np.ndarray, floor: float = 1e-12) -> float:
    """KL divergence between two non-negative weight vectors after flooring and renormalizing."""
    p = np.asarray(p, dtype=np.float64) + floor
    q = np.asarray(q, dtype=np.float64) + floor
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def kl_divergence(p: ChannelKDE, q: ChannelKDE, grid: GridSpec = GridSpec()) -> float:
    xs = grid.grid_for(p, q)
    return discrete_kl(kde_evaluate(p, xs), kde_evaluate(q, xs), grid.floor)


# ---------------------------------------------------------------------------
# feature extraction


def encode_features(
    image: np.ndarray,
    checkpoint: Checkpoint,
    stride: int | None = None,
    network: Network | None = None,
    image_id: str = "image",
    batch: int = 64,
) -> np.ndarray:
    """Bottleneck activations of all grid patches, pooled per channel: ``(C, M)``."""
    size = checkpoint.config.patch_size
    stride = stride or size // 2
    patches = extract_patches(image, size, mode="grid", stride=stride, image_id=image_id).patches
    net = network or checkpoint.network()
    feats = [
        net.analysis(Tensor(patches[i : i + batch].astype(np.float64))).data
        for i in range(0, len(patches), batch)
    ]
    latent = np.concatenate(feats)  # P, C, s, s
    return latent.transpose(1, 0, 2, 3).reshape(latent.shape[1], -1)


def _subsample(values: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if values.size <= cap:
        return values
    idx = np.sort(rng.choice(values.size, size=cap, replace=False))
    return values[idx]


# ---------------------------------------------------------------------------
# natural model


@dataclass
class NaturalModel:
    channels: list[ChannelKDE]
    fingerprint: bytes
    cap: int = 5000
    seed: int = 0
    bandwidth_factor: float = BANDWIDTH_FACTOR
    bandwidth_floor: float = BANDWIDTH_FLOOR
    grid: GridSpec = field(default_factory=GridSpec)
    stride: int = 0  # 0 means patch_size // 2

    def check_checkpoint(self, checkpoint: Checkpoint) -> None:
        if checkpoint.fingerprint() != self.fingerprint:
            raise ValueError("natural model was built with a different checkpoint (fingerprint mismatch)")
        if checkpoint.config.channels != len(self.channels):
            raise ValueError("channel count differs between model and checkpoint")

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(self.fingerprint)
        buf.write(struct.pack("<I", len(self.channels)))
        buf.write(struct.pack("<QQdd", self.cap, self.seed, self.bandwidth_factor, self.bandwidth_floor))
        buf.write(struct.pack("<IdI", self.grid.points, self.grid.floor, self.stride))
        for kde in self.channels:
            buf.write(struct.pack("<Qd", kde.n, kde.bandwidth))
            buf.write(kde.observations.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NaturalModel":
        if blob[:8] != MODEL_MAGIC:
            raise ValueError("not a natural-model file (bad magic)")
        buf = io.BytesIO(blob[8:])

        def read(fmt):
            size = struct.calcsize(fmt)
            chunk = buf.read(size)
            if len(chunk) != size:
                raise ValueError("truncated natural-model file")
            return struct.unpack(fmt, chunk)

        fingerprint = buf.read(32)
        if len(fingerprint) != 32:
            raise ValueError("truncated natural-model file")
        (count,) = read("<I")
        cap, seed, factor, floor = read("<QQdd")
        points, grid_floor, stride = read("<IdI")
        channels = []
        for _ in range(count):
            n, h = read("<Qd")
            data = buf.read(8 * n)
            if len(data) != 8 * n:
                raise ValueError("truncated natural-model file")
            channels.append(ChannelKDE(np.frombuffer(data, dtype="<f8").astype(np.float64), h))
        if buf.read(1):
            raise ValueError("trailing bytes in natural-model file")
        return cls(channels, fingerprint, cap, seed, factor, floor, GridSpec(points, grid_floor), stride)

    def fit(self, values: np.ndarray, rng: np.random.Generator) -> ChannelKDE:
        """Fit one channel with this model's cap and bandwidth rule."""
        return fit_kde(_subsample(values, self.cap, rng), factor=self.bandwidth_factor, floor=self.bandwidth_floor)


def build_natural_model(
    checkpoint: Checkpoint,
    images: Sequence[np.ndarray],
    cap: int = 5000,
    seed: int = 0,
    stride: int | None = None,
    grid: GridSpec = GridSpec(),
    bandwidth_factor: float = BANDWIDTH_FACTOR,
    bandwidth_floor: float = BANDWIDTH_FLOOR,
) -> NaturalModel:
    if not images:
        raise ValueError("no pristine images to build a natural model from")
    net = checkpoint.network()
    stride = stride or checkpoint.config.patch_size // 2
    pooled = np.concatenate(
        [encode_features(im, checkpoint, stride, net, image_id=f"image {i}") for i, im in enumerate(images)],
        axis=1,
    )
    model = NaturalModel([], checkpoint.fingerprint(), cap, seed, bandwidth_factor, bandwidth_floor, grid, stride)
    rng = np.random.default_rng(seed)
    for c, values in enumerate(pooled):
        if values.size < 2:
            raise ValueError(f"channel {c} has fewer than 2 observations")
        model.channels.append(model.fit(values, rng))
    return model


@dataclass
class QualityScore:
    value: float
    per_channel: np.ndarray


def query_kdes(model: NaturalModel, checkpoint: Checkpoint, image: np.ndarray, network: Network | None = None) -> list[ChannelKDE]:
    stride = model.stride or checkpoint.config.patch_size // 2
    feats = encode_features(image, checkpoint, stride, network)
    rng = np.random.default_rng(model.seed)
    return [model.fit(values, rng) for values in feats]


def score_image(
    model: NaturalModel,
    checkpoint: Checkpoint,
    image: np.ndarray,
    network: Network | None = None,
    verify: bool = True,
) -> QualityScore:
    """Higher is more distorted: mean per-channel ``KL(query || natural)``."""
    if verify:
        model.check_checkpoint(checkpoint)
    kdes = query_kdes(model, checkpoint, image, network)
    per_channel = np.array([kl_divergence(q, p, model.grid) for q, p in zip(kdes, model.channels)])
    return QualityScore(float(np.mean(per_channel)), per_channel)
