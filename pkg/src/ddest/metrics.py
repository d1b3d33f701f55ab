"""Evaluation: Cramer-Rao bounds, estimate-to-truth matching, MSE-vs-SNR
sweeps with shared noise realizations, and model-order error statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .channel import PathSet, SamplingGrid, Snapshot, add_noise, sigma_for_snr, substream
from .errors import NumericalError, ValidationError
from .refine import fisher_information, pack_params

SCHEMA_VERSION = 1

CRB_PARAM_NAMES = ("re_gain", "im_gain", "delay", "doppler")


def _meta_header(meta: Optional[dict]) -> str:
    fields = {"schema_version": SCHEMA_VERSION}
    fields.update(meta or {})
    parts = " ".join(f"{k}={v}" for k, v in sorted(fields.items()))
    return f"# {parts}\n"


@dataclass
class CrbReport:
    """Per-path variance lower bounds from the inverse Fisher matrix."""

    bounds: np.ndarray  # (P, 4) ordered (re_gain, im_gain, delay, doppler)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 4:
            raise ValidationError("bounds must be (P, 4)")

    @property
    def delay(self) -> np.ndarray:
        return self.bounds[:, 2]

    @property
    def doppler(self) -> np.ndarray:
        return self.bounds[:, 3]

    def named(self, p: int) -> dict:
        return dict(zip(CRB_PARAM_NAMES, self.bounds[p]))


def crb(paths: PathSet, grid: SamplingGrid, sigma: float) -> CrbReport:
    """Cramer-Rao bounds for all path parameters of a given scene."""
    if len(paths) == 0:
        raise ValidationError("CRB needs at least one path")
    fisher = fisher_information(pack_params(paths), grid, sigma)
    try:
        chol = np.linalg.cholesky(fisher)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("degenerate scene: Fisher matrix is singular") from exc
    inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(fisher.shape[0])))
    return CrbReport(np.diag(inv).reshape(-1, 4))


@dataclass
class MatchResult:
    """Greedy gated pairing of estimates to ground truth."""

    pairs: list                    # (truth_index, estimate_index)
    delay_errors: np.ndarray       # signed, per pair
    doppler_errors: np.ndarray
    n_miss: int
    n_false: int

    @property
    def rmse_delay(self) -> float:
        return float(np.sqrt(np.mean(self.delay_errors ** 2))) if self.pairs else math.nan

    @property
    def rmse_doppler(self) -> float:
        return float(np.sqrt(np.mean(self.doppler_errors ** 2))) if self.pairs else math.nan


def match_estimates(est: PathSet, truth: PathSet,
                    gates: tuple[float, float]) -> MatchResult:
    """Greedy nearest-neighbor assignment in gate-normalized distance.

    A (truth, estimate) pair is eligible only when both coordinate errors fall
    within their gates; pairs are consumed globally closest first, so the
    result depends on the sets, not their ordering. Unmatched truths count as
    misses, unmatched estimates as false alarms.
    """
    gate_tau, gate_alpha = gates
    if gate_tau <= 0 or gate_alpha <= 0:
        raise ValidationError("gates must be positive")
    nt, ne = len(truth), len(est)
    if nt == 0 or ne == 0:
        return MatchResult([], np.zeros(0), np.zeros(0), n_miss=nt, n_false=ne)
    d_tau = est.delays[None, :] - truth.delays[:, None]
    d_alpha = est.dopplers[None, :] - truth.dopplers[:, None]
    dist = np.hypot(d_tau / gate_tau, d_alpha / gate_alpha)
    eligible = (np.abs(d_tau) <= gate_tau) & (np.abs(d_alpha) <= gate_alpha)
    dist[~eligible] = np.inf
    pairs = []
    for _ in range(min(nt, ne)):
        t, e = np.unravel_index(int(np.argmin(dist)), dist.shape)
        if not np.isfinite(dist[t, e]):
            break
        pairs.append((int(t), int(e)))
        dist[t, :] = np.inf
        dist[:, e] = np.inf
    t_idx = np.array([t for t, _ in pairs], dtype=np.int64)
    e_idx = np.array([e for _, e in pairs], dtype=np.int64)
    delay_err = est.delays[e_idx] - truth.delays[t_idx] if pairs else np.zeros(0)
    doppler_err = est.dopplers[e_idx] - truth.dopplers[t_idx] if pairs else np.zeros(0)
    return MatchResult(pairs=pairs, delay_errors=delay_err, doppler_errors=doppler_err,
                       n_miss=nt - len(pairs), n_false=ne - len(pairs))


def default_gates(grid: SamplingGrid, bins: float = 1.0) -> tuple[float, float]:
    """Matching gates as a multiple of the Rayleigh resolution per axis."""
    return bins * grid.delay_bin, bins * grid.doppler_bin


@dataclass
class SweepRow:
    snr_db: float
    estimator: str
    mse_tau: float
    mse_alpha: float
    crb_tau: float
    crb_alpha: float
    trials: int
    misses: int
    false_alarms: int


@dataclass
class SweepResult:
    """MSE-vs-SNR table alongside the CRB, one row per (SNR, estimator)."""

    rows: list = field(default_factory=list)

    def to_csv(self, meta: Optional[dict] = None) -> str:
        out = [_meta_header(meta),
               "snr_db,estimator,mse_tau,mse_alpha,crb_tau,crb_alpha,trials,misses,false_alarms\n"]
        for r in self.rows:
            out.append(f"{r.snr_db:.17g},{r.estimator},{r.mse_tau:.17g},{r.mse_alpha:.17g},"
                       f"{r.crb_tau:.17g},{r.crb_alpha:.17g},{r.trials},{r.misses},"
                       f"{r.false_alarms}\n")
        return "".join(out)

    def to_json(self, meta: Optional[dict] = None) -> str:
        doc = {"schema_version": SCHEMA_VERSION, "meta": meta or {},
               "rows": [vars(r) for r in self.rows]}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def row(self, snr_db: float, estimator: str) -> SweepRow:
        for r in self.rows:
            if r.estimator == estimator and r.snr_db == snr_db:
                return r
        raise KeyError((snr_db, estimator))


def mse_sweep(estimators: Mapping[str, Callable[[Snapshot], PathSet]],
              scene: Snapshot, snr_list: Sequence[float], n_trials: int, seed: int,
              gates: Optional[tuple[float, float]] = None) -> SweepResult:
    """Monte-Carlo MSE of several estimators on one fixed scene.

    The scene's clean signal is re-noised n_trials times per SNR; every
    estimator sees the identical noisy snapshot per (SNR, trial). Matched
    estimates accumulate squared errors per axis; unmatched ones are counted
    separately as misses/false alarms and excluded from the MSE.
    """
    if scene.truth is None:
        raise ValidationError("sweep scene must carry ground truth")
    if n_trials < 1:
        raise ValidationError("n_trials must be positive")
    clean = synthesize_truth(scene)
    gates = gates or default_gates(scene.grid)
    result = SweepResult()
    for si, snr_db in enumerate(snr_list):
        sigma = sigma_for_snr(clean, snr_db)
        report = crb(scene.truth, scene.grid, sigma)
        crb_tau = float(np.mean(report.delay))
        crb_alpha = float(np.mean(report.doppler))
        acc = {name: {"tau": [], "alpha": [], "miss": 0, "false": 0} for name in estimators}
        for trial in range(n_trials):
            rng = substream(seed, si, trial)
            noisy = Snapshot(add_noise(clean, sigma, rng), scene.grid,
                             noise_sigma=sigma, truth=scene.truth)
            for name, estimator in estimators.items():
                estimate = estimator(noisy)
                match = match_estimates(estimate, scene.truth, gates)
                acc[name]["tau"].extend(match.delay_errors ** 2)
                acc[name]["alpha"].extend(match.doppler_errors ** 2)
                acc[name]["miss"] += match.n_miss
                acc[name]["false"] += match.n_false
        for name in estimators:
            tau_sq = acc[name]["tau"]
            alpha_sq = acc[name]["alpha"]
            result.rows.append(SweepRow(
                snr_db=float(snr_db), estimator=name,
                mse_tau=float(np.mean(tau_sq)) if tau_sq else math.nan,
                mse_alpha=float(np.mean(alpha_sq)) if alpha_sq else math.nan,
                crb_tau=crb_tau, crb_alpha=crb_alpha, trials=n_trials,
                misses=acc[name]["miss"], false_alarms=acc[name]["false"],
            ))
    return result


def synthesize_truth(scene: Snapshot) -> np.ndarray:
    """Clean signal of the scene's ground-truth paths."""
    from .channel import synthesize_channel

    return synthesize_channel(scene.truth, scene.grid)


@dataclass
class OrderErrorStats:
    """Distribution of the model-order error P_hat - P."""

    histogram: dict            # error value -> count
    mean_error: float
    exact_rate: float
    n_runs: int

    def to_json(self, meta: Optional[dict] = None) -> str:
        doc = {"schema_version": SCHEMA_VERSION, "meta": meta or {},
               "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
               "mean_error": self.mean_error, "exact_rate": self.exact_rate,
               "n_runs": self.n_runs}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def order_error_stats(runs: Sequence[tuple[int, int]]) -> OrderErrorStats:
    """Histogram/mean/exact-rate of (estimated order, true order) pairs."""
    if not runs:
        raise ValidationError("need at least one run")
    errors = np.array([int(p_hat) - int(p) for p_hat, p in runs], dtype=np.int64)
    values, counts = np.unique(errors, return_counts=True)
    return OrderErrorStats(
        histogram={int(v): int(c) for v, c in zip(values, counts)},
        mean_error=float(errors.mean()),
        exact_rate=float(np.mean(errors == 0)),
        n_runs=len(runs),
    )


def order_stats_csv(stats_by_key: Mapping[tuple, OrderErrorStats],
                    key_names: Sequence[str], meta: Optional[dict] = None) -> str:
    """Long-format CSV of several order-error distributions.

    stats_by_key maps tuples (e.g. (estimator, delta, snr_db)) to stats;
    key_names labels the tuple positions.
    """
    head = ",".join(key_names)
    out = [_meta_header(meta),
           f"{head},order_error,count,mean_error,exact_rate,n_runs\n"]
    for key, stats in stats_by_key.items():
        prefix = ",".join(str(k) for k in key)
        for err, count in sorted(stats.histogram.items()):
            out.append(f"{prefix},{err},{count},{stats.mean_error:.17g},"
                       f"{stats.exact_rate:.17g},{stats.n_runs}\n")
    return "".join(out)
