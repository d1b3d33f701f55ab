"""Grid-cell detection network: CBA encoder, spatial pyramid pooling,
channel-reducing head, sigmoid outputs.

The encoder halves the spatial size and doubles the channel count per block
until the feature map matches the label grid (I x J); the head then reduces
channels to 3*C so each cell emits (mu, d_tau, d_alpha) per slot. Checkpoints
use a self-describing binary container (JSON header + raw little-endian
arrays) so that identical training runs produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .errors import (ConfigError, DataFormatError, TruncatedFileError,
                     ValidationError, VersionMismatchError)

CHECKPOINT_MAGIC = b"DDCK"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; spatial sizes must be consistent with
    the cell grid: input_hw / 2^n_encoder_blocks = cell rows = cell cols."""

    input_channels: int
    input_hw: int
    base_channels: int = 16
    n_encoder_blocks: int = 4
    spp_kernels: tuple[int, ...] = (3, 5, 7, 9)
    head_channels: tuple[int, ...] = (64, 16)
    capacity: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.input_channels < 1 or self.input_hw < 2 or self.base_channels < 1:
            raise ConfigError("channel counts and input size must be positive")
        if self.n_encoder_blocks < 1:
            raise ConfigError("need at least one encoder block")
        if self.input_hw % (2 ** self.n_encoder_blocks) != 0:
            raise ConfigError(
                f"input_hw {self.input_hw} is not divisible by 2^{self.n_encoder_blocks}"
            )
        for k in self.spp_kernels:
            if k < 3 or k % 2 == 0:
                raise ConfigError("SPP kernels must be odd and >= 3")
        if self.capacity < 1:
            raise ConfigError("cell capacity must be positive")

    @property
    def cell_rows(self) -> int:
        return self.input_hw // (2 ** self.n_encoder_blocks)

    @property
    def out_channels(self) -> int:
        return 3 * self.capacity

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spp_kernels"] = list(self.spp_kernels)
        d["head_channels"] = list(self.head_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["spp_kernels"] = tuple(d["spp_kernels"])
        d["head_channels"] = tuple(d["head_channels"])
        return cls(**d)


class CbaBlock(nn.Module):
    """Conv(3x3) -> BatchNorm -> ReLU; stride 2 halves even spatial dims."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigError("stride must be 1 or 2")
        self.stride = stride
        self.conv = nn.Conv2d(c_in, c_out, kernel_size=3, stride=stride, padding=1)
        self.bn = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.stride == 2 and (x.shape[-2] % 2 or x.shape[-1] % 2):
            raise ConfigError(f"stride-2 block needs even spatial dims, got {tuple(x.shape[-2:])}")
        return self.relu(self.bn(self.conv(x)))


class SpatialPyramidPool(nn.Module):
    """Concatenate the input with stride-1 max pools of several kernel sizes."""

    def __init__(self, kernels=(3, 5, 7, 9)):
        super().__init__()
        for k in kernels:
            if k < 3 or k % 2 == 0:
                raise ConfigError("SPP kernels must be odd and >= 3")
        self.pools = nn.ModuleList(
            nn.MaxPool2d(kernel_size=k, stride=1, padding=(k - 1) // 2) for k in kernels
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.cat([x] + [pool(x) for pool in self.pools], dim=1)


class PathEstimator(nn.Module):
    """Full detector: encoder -> SPP -> head -> sigmoid over (B, 3C, I, J).

    The final layer is a plain convolution (no BN/ReLU) ahead of the sigmoid;
    a ReLU there would pin every output into [0.5, 1) and make empty-slot
    targets unreachable.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = cfg.input_channels
        c_out = cfg.base_channels
        for _ in range(cfg.n_encoder_blocks):
            blocks.append(CbaBlock(c_in, c_out, stride=2))
            c_in, c_out = c_out, 2 * c_out
        self.encoder = nn.Sequential(*blocks)
        self.spp = SpatialPyramidPool(cfg.spp_kernels)
        c = c_in * (len(cfg.spp_kernels) + 1)
        head = []
        for width in cfg.head_channels:
            head.append(CbaBlock(c, width, stride=1))
            c = width
        self.head = nn.Sequential(*head)
        self.final = nn.Conv2d(c, cfg.out_channels, kernel_size=3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels \
                or x.shape[2] != self.cfg.input_hw or x.shape[3] != self.cfg.input_hw:
            raise ConfigError(
                f"expected input (B, {self.cfg.input_channels}, {self.cfg.input_hw}, "
                f"{self.cfg.input_hw}), got {tuple(x.shape)}"
            )
        z = self.encoder(x)
        z = self.spp(z)
        z = self.head(z)
        return torch.sigmoid(self.final(z))


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> PathEstimator:
    """Seeded, reproducible model construction."""
    torch.manual_seed(cfg.seed)
    model = PathEstimator(cfg)
    return model.to(dtype)


def prediction_to_label(pred: torch.Tensor) -> np.ndarray:
    """(3C, I, J) network output -> (I, J, 3C) label-layout array."""
    if pred.ndim != 3:
        raise ValidationError("expected a single (3C, I, J) prediction")
    return pred.detach().permute(1, 2, 0).cpu().numpy().astype(np.float64)


def save_model(path, model: PathEstimator, meta: dict | None = None) -> None:
    """Write config echo + named parameter arrays as one deterministic file."""
    header = {
        "schema_version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "meta": meta or {},
        "arrays": [],
    }
    payloads = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValidationError(f"unsupported checkpoint dtype {dtype} for {name}")
        header["arrays"].append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payloads.append(np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes())
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payloads:
            fh.write(chunk)


def load_model(path) -> tuple[PathEstimator, dict]:
    """Rebuild a model from a checkpoint; returns (model, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise TruncatedFileError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: bad checkpoint header: {exc}") from exc
    cfg = ModelConfig.from_dict(header["model_config"])
    state = {}
    offset = 16 + hlen
    for spec in header["arrays"]:
        dt = np.dtype(_DTYPES[spec["dtype"]])
        count = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise TruncatedFileError(f"{path}: array {spec['name']} extends past end of file")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    model = PathEstimator(cfg)
    if any(t.dtype == torch.float64 for t in state.values()):
        model = model.double()
    model.load_state_dict(state)
    model.eval()
    return model, header.get("meta", {})
