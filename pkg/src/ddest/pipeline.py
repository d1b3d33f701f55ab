"""End-to-end inference: preprocess -> network -> decode -> optional
Gauss-Newton refinement with least-squares gains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .channel import PathSet, Snapshot
from .encoding import CellGridSpec, decode
from .errors import ValidationError
from .model import PathEstimator, load_model, prediction_to_label, save_model
from .preprocess import RegionOfInterest, WindowKind, preprocess_snapshot
from .refine import GnConfig, RefineResult, refine_path_estimates


@dataclass
class Estimator:
    """A trained network bundled with its preprocessing and cell layout."""

    model: PathEstimator
    windows: tuple[WindowKind, ...]
    roi: RegionOfInterest
    cells: CellGridSpec

    def __post_init__(self):
        cfg = self.model.cfg
        if cfg.input_channels != 2 * len(self.windows):
            raise ValidationError("model input channels do not match the window stack")
        if (self.roi.height, self.roi.width) != (cfg.input_hw, cfg.input_hw):
            raise ValidationError("ROI raster does not match the model input size")
        if (self.cells.rows, self.cells.cols) != (cfg.cell_rows, cfg.cell_rows):
            raise ValidationError("cell grid does not match the model output size")
        if self.cells.capacity != cfg.capacity:
            raise ValidationError("cell capacity does not match the model head")
        if self.cells.region != self.roi:
            raise ValidationError("cell grid must share the preprocessing region of interest")


@dataclass
class InferenceResult:
    """Decoded estimates; `paths.gains` holds detection scores unless refined."""

    paths: PathSet
    scores: np.ndarray
    refined: bool = False
    refine_trace: Optional[RefineResult] = None

    @property
    def order(self) -> int:
        return len(self.paths)


def predict_label(est: Estimator, snapshot: Snapshot) -> np.ndarray:
    """Raw network output as an (I, J, 3C) label-layout array."""
    cnn_in = preprocess_snapshot(snapshot, est.windows, est.roi,
                                 single_precision=next(est.model.parameters()).dtype == torch.float32)
    dtype = next(est.model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(cnn_in.tensor)).to(dtype).unsqueeze(0)
    est.model.eval()
    with torch.no_grad():
        pred = est.model(x)[0]
    return prediction_to_label(pred)


def infer(est: Estimator, snapshot: Snapshot, delta: float = 0.5,
          refine_steps: int = 0, gn_cfg: Optional[GnConfig] = None,
          sigma=None) -> InferenceResult:
    """Detect paths with threshold delta; optionally refine them jointly.

    With refine_steps = 0 the returned PathSet carries the detection scores in
    its gains field; with refinement the gains are the least-squares/ML
    estimates after the requested number of Gauss-Newton iterations.
    """
    label = predict_label(est, snapshot)
    detected = decode(label, delta, est.cells)
    scores = np.abs(detected.gains).astype(np.float64)
    if refine_steps <= 0 or len(detected) == 0:
        return InferenceResult(paths=detected, scores=scores)
    refined, trace = refine_path_estimates(
        snapshot, detected.delays, detected.dopplers,
        steps=refine_steps, cfg=gn_cfg, sigma=sigma,
    )
    return InferenceResult(paths=refined, scores=scores, refined=True, refine_trace=trace)


def save_estimator(path, est: Estimator, meta: Optional[dict] = None) -> None:
    """Checkpoint the model together with its preprocessing recipe."""
    bundle_meta = dict(meta or {})
    bundle_meta["windows"] = [str(w) for w in est.windows]
    bundle_meta["roi"] = {
        "delay_min": est.roi.delay_min, "delay_max": est.roi.delay_max,
        "doppler_min": est.roi.doppler_min, "doppler_max": est.roi.doppler_max,
        "height": est.roi.height, "width": est.roi.width,
    }
    bundle_meta["cells"] = {"rows": est.cells.rows, "cols": est.cells.cols,
                            "capacity": est.cells.capacity}
    save_model(path, est.model, bundle_meta)


def load_estimator(path) -> tuple[Estimator, dict]:
    """Rebuild an Estimator bundle from a checkpoint file."""
    model, meta = load_model(path)
    try:
        roi = RegionOfInterest(**meta["roi"])
        windows = tuple(WindowKind.parse(w) for w in meta["windows"])
        cells_meta = meta["cells"]
    except KeyError as exc:
        raise ValidationError(f"checkpoint is missing estimator metadata: {exc}") from exc
    cells = CellGridSpec(rows=cells_meta["rows"], cols=cells_meta["cols"],
                         capacity=cells_meta["capacity"], region=roi)
    return Estimator(model=model, windows=windows, roi=roi, cells=cells), meta
