"""Supervised training: masked offset loss + detection BCE, Adam loop,
per-epoch noise redraw from stored clean signals.

Scenes are kept noise-free in memory; each epoch draws a fresh SNR and noise
realization per sample from seed-derived substreams, so results do not depend
on batch order or prefetching. Noiseless (fixed-input) training is supported
for overfit checks by leaving the SNR range unset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .channel import PathSet, SamplingGrid, Snapshot, add_noise, sigma_for_snr, substream
from .encoding import CellGridSpec, encode
from .errors import NumericalError, ValidationError
from .model import ModelConfig, PathEstimator
from .preprocess import RegionOfInterest, WindowKind, preprocess_snapshot

BCE_EPS = 1e-7

# substream tags so the independent random uses cannot collide
_NOISE_TAG, _VAL_NOISE_TAG, _SHUFFLE_TAG = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters."""

    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 30
    w_offsets: float = 1.0
    w_detect: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        for b in (self.beta1, self.beta2):
            if not 0.0 < b < 1.0:
                raise ValidationError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")


def detection_loss(pred: torch.Tensor, target: torch.Tensor,
                   w_offsets: float = 1.0, w_detect: float = 1.0):
    """Masked offset MSE plus mean binary cross-entropy on the mu channels.

    Both tensors are (B, 3C, I, J) with channels ordered (mu, d_tau, d_alpha)
    per slot. The offset term sums mu * ||pred_offsets - target_offsets||^2
    over occupied slots and divides by the batch size; the detection term
    averages BCE over every slot, clamping predictions to (eps, 1-eps).
    Returns (total, offset_term, detection_term).
    """
    if pred.shape != target.shape:
        raise ValidationError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    mu_hat = pred[:, 0::3].clamp(BCE_EPS, 1.0 - BCE_EPS)
    mu = target[:, 0::3]
    d_hat = torch.stack((pred[:, 1::3], pred[:, 2::3]), dim=2)
    d = torch.stack((target[:, 1::3], target[:, 2::3]), dim=2)
    batch = pred.shape[0]
    offset_term = (mu.unsqueeze(2) * (d_hat - d) ** 2).sum() / batch
    detect_term = -(mu * torch.log(mu_hat) + (1.0 - mu) * torch.log1p(-mu_hat)).mean()
    total = w_offsets * offset_term + w_detect * detect_term
    return total, offset_term, detect_term


@dataclass
class TrainingData:
    """Clean scenes plus the recipe for turning them into network samples."""

    clean: list            # clean complex (N_f, N_t) arrays
    truths: list           # PathSet per scene
    grid: SamplingGrid
    windows: tuple[WindowKind, ...]
    roi: RegionOfInterest
    cells: CellGridSpec
    snr_range_db: Optional[tuple[float, float]] = None  # None = noiseless, fixed inputs
    labels: list = field(default_factory=list)
    _input_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.clean) != len(self.truths):
            raise ValidationError("clean signals and truths must align")
        if not self.labels:
            self.labels = [encode(t, self.cells).tensor.astype(np.float32)
                           for t in self.truths]

    def __len__(self) -> int:
        return len(self.clean)

    def sample_input(self, index: int, epoch: int, seed: int,
                     validation: bool = False) -> np.ndarray:
        """Preprocessed (2N_W, H, W) float32 input for one sample.

        Training draws per-(epoch, sample) noise; validation noise is fixed
        across epochs so the curve is comparable between epochs. Noiseless
        inputs never change, so they are preprocessed once and cached.
        """
        data = self.clean[index]
        if self.snr_range_db is None:
            cached = self._input_cache.get(index)
            if cached is not None:
                return cached
        else:
            tag = _VAL_NOISE_TAG if validation else _NOISE_TAG
            rng = substream(seed, tag, 0 if validation else epoch, index)
            snr_db = rng.uniform(*self.snr_range_db)
            sigma = sigma_for_snr(data, snr_db)
            data = add_noise(data, sigma, rng)
        snap = Snapshot(data, self.grid)
        cnn_in = preprocess_snapshot(snap, self.windows, self.roi, single_precision=True)
        tensor = cnn_in.tensor.astype(np.float32, copy=False)
        if self.snr_range_db is None:
            self._input_cache[index] = tensor
        return tensor

    def batch(self, indices: Sequence[int], epoch: int, seed: int,
              validation: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        xs = np.stack([self.sample_input(i, epoch, seed, validation) for i in indices])
        ys = np.stack([self.labels[i] for i in indices]).transpose(0, 3, 1, 2)
        return torch.from_numpy(xs), torch.from_numpy(np.ascontiguousarray(ys))


def dataset_from_snapshots(snapshots: Sequence[Snapshot], windows, roi: RegionOfInterest,
                           cells: CellGridSpec,
                           snr_range_db: Optional[tuple[float, float]] = None) -> TrainingData:
    """Build TrainingData from snapshots that carry clean data and truths."""
    clean, truths = [], []
    for snap in snapshots:
        if snap.truth is None:
            raise ValidationError("training snapshots must carry ground truth")
        clean.append(np.asarray(snap.data))
        truths.append(snap.truth)
    if not clean:
        raise ValidationError("no training scenes provided")
    grid = snapshots[0].grid
    return TrainingData(clean=clean, truths=truths, grid=grid, windows=tuple(windows),
                        roi=roi, cells=cells, snr_range_db=snr_range_db)


@dataclass
class TrainResult:
    """Loss history plus the numbers the acceptance checks care about."""

    history: list = field(default_factory=list)  # rows: dicts per epoch
    initial_loss: float = math.nan
    final_loss: float = math.nan
    epochs_run: int = 0

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,offset_loss,detect_loss"]
        for row in self.history:
            lines.append("{epoch},{train_loss:.17g},{val_loss:.17g},"
                         "{offset_loss:.17g},{detect_loss:.17g}".format(**row))
        return "\n".join(lines) + "\n"


@torch.no_grad()
def _evaluate(model: PathEstimator, data: TrainingData, indices, epoch: int,
              cfg: TrainConfig, validation: bool) -> float:
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(indices), cfg.batch_size):
        chunk = indices[start:start + cfg.batch_size]
        x, y = data.batch(chunk, epoch, cfg.seed, validation=validation)
        loss, _, _ = detection_loss(model(x), y, cfg.w_offsets, cfg.w_detect)
        total += float(loss) * len(chunk)
        count += len(chunk)
    return total / max(count, 1)


def train(model: PathEstimator, data: TrainingData, cfg: TrainConfig,
          val_data: Optional[TrainingData] = None,
          stop_loss_fraction: Optional[float] = None,
          log_fn=None) -> TrainResult:
    """Adam minibatch training; deterministic given (model seed, cfg.seed).

    stop_loss_fraction, when set, stops early once the epoch training loss
    falls below that fraction of the initial loss. Divergence (non-finite
    loss) aborts with a diagnostic.
    """
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 betas=(cfg.beta1, cfg.beta2))
    n = len(data)
    all_idx = np.arange(n)
    result = TrainResult()
    result.initial_loss = _evaluate(model, data, all_idx, 0, cfg, validation=False)

    for epoch in range(cfg.epochs):
        model.train()
        perm = substream(cfg.seed, _SHUFFLE_TAG, epoch).permutation(n)
        running, seen = 0.0, 0
        last_terms = (math.nan, math.nan)
        for start in range(0, n, cfg.batch_size):
            chunk = perm[start:start + cfg.batch_size]
            x, y = data.batch(chunk, epoch, cfg.seed)
            optimizer.zero_grad()
            loss, l_off, l_det = detection_loss(model(x), y, cfg.w_offsets, cfg.w_detect)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"training diverged at epoch {epoch} (loss={float(loss)!r})"
                )
            loss.backward()
            optimizer.step()
            running += float(loss.detach()) * len(chunk)
            seen += len(chunk)
            last_terms = (float(l_off.detach()), float(l_det.detach()))
        train_loss = running / seen
        val_loss = (_evaluate(model, val_data, np.arange(len(val_data)), epoch, cfg,
                              validation=True)
                    if val_data is not None else math.nan)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "offset_loss": last_terms[0], "detect_loss": last_terms[1]}
        result.history.append(row)
        result.final_loss = train_loss
        result.epochs_run = epoch + 1
        if log_fn is not None:
            log_fn(row)
        if stop_loss_fraction is not None and train_loss < stop_loss_fraction * result.initial_loss:
            break
    model.eval()
    return result
