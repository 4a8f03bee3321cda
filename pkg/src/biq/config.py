"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

from biq.autoencoder import NetworkConfig
from biq.distortions import Schedule
from biq.natural_model import BANDWIDTH_FACTOR, BANDWIDTH_FLOOR, GridSpec


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    # natural model / scoring
    cap: int = 5000
    model_seed: int = 0
    grid_points: int = 512
    grid_floor: float = 1e-12
    bandwidth_factor: float = BANDWIDTH_FACTOR
    bandwidth_floor: float = BANDWIDTH_FLOOR
    # benchmark
    distort_seed: int = 0
    blur_sigma: float = 0.5
    noise_sigma: float = 0.02
    quant_step: float = 0.03

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.blur_sigma, self.noise_sigma, self.quant_step)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_points, self.grid_floor)

    def items(self) -> list[tuple[str, object]]:
        out = [(f.name, getattr(self.network, f.name)) for f in fields(NetworkConfig)]
        out += [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "network"]
        return out

    def dumps(self) -> str:
        def fmt(v):
            if isinstance(v, tuple):
                return ",".join(str(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)

        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.items())

    def describe(self) -> str:
        """One-line form for artifact headers."""
        return "; ".join(line.replace(" = ", "=") for line in self.dumps().splitlines())

    def update(self, overrides: dict[str, str]) -> "RunConfig":
        net_fields = {f.name: f for f in fields(NetworkConfig)}
        own_fields = {f.name: f for f in fields(self) if f.name != "network"}
        net_kwargs = dataclasses.asdict(self.network)
        own_kwargs = {name: getattr(self, name) for name in own_fields}
        for key, raw in overrides.items():
            key = key.strip().replace("-", "_")
            if key in net_fields:
                net_kwargs[key] = _coerce(net_kwargs[key], raw, key)
            elif key in own_fields:
                own_kwargs[key] = _coerce(own_kwargs[key], raw, key)
            else:
                raise ValueError(f"unknown config key {key!r}")
        return RunConfig(network=NetworkConfig(**net_kwargs), **own_kwargs)


def _coerce(current, raw: str, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(","))
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg = cfg.update(parse_pairs(fh.read(), str(path)))
    if overrides:
        cfg = cfg.update(overrides)
    return cfg
