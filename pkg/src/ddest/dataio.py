"""Binary dataset container: JSON manifest + packed scene records.

Records store the CLEAN synthesized snapshot (complex64) together with the
ground-truth path parameters (float64) and the noise level drawn for the
scene. Consumers add noise when they need it (training redraws it per epoch),
which keeps the files bit-reproducible for a fixed seed. The manifest is the
only place a timestamp lives.

Layout: magic 'DDDS', u32 version, u64 manifest length, manifest JSON, then
per-sample records at the offsets listed in the manifest (relative to the end
of the manifest): u32 P, float64 gains_re/gains_im/delays/dopplers (P each),
float64 sigma, interleaved float32 re/im snapshot (row-major).
"""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel import (PathSet, SamplingGrid, SceneConfig, Snapshot, draw_paths,
                      sigma_for_snr, substream, synthesize_channel)
from .encoding import CellGridSpec, encodable
from .errors import (ChecksumError, DataFormatError, TruncatedFileError,
                     ValidationError, VersionMismatchError)

DATASET_MAGIC = b"DDDS"
DATASET_VERSION = 1

MAX_SCENE_REDRAWS = 200


@dataclass
class SceneRecord:
    """One stored scene: truth, drawn noise level, clean snapshot."""

    paths: PathSet
    sigma: float
    data: np.ndarray  # complex64 (n_freq, n_time), noise-free

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.complex64)
        if not (self.sigma >= 0.0 and np.isfinite(self.sigma)):
            raise ValidationError("record sigma must be finite and non-negative")

    def clean_snapshot(self, grid: SamplingGrid) -> Snapshot:
        return Snapshot(np.asarray(self.data), grid, noise_sigma=0.0, truth=self.paths)

    def noisy_snapshot(self, grid: SamplingGrid, rng: np.random.Generator) -> Snapshot:
        from .channel import add_noise

        noisy = add_noise(self.data.astype(np.complex128), self.sigma, rng)
        return Snapshot(noisy, grid, noise_sigma=self.sigma, truth=self.paths)


def generate_records(cfg: SceneConfig, grid: SamplingGrid, cells: Optional[CellGridSpec],
                     n_samples: int, seed: int) -> list[SceneRecord]:
    """Draw n_samples scenes; redraw any that overflow the cell encoding."""
    records = []
    for index in range(n_samples):
        rng = substream(seed, index)
        for _ in range(MAX_SCENE_REDRAWS):
            paths = draw_paths(cfg, rng)
            if cells is None or encodable(paths, cells):
                break
        else:
            raise ValidationError(
                f"sample {index}: no encodable scene after {MAX_SCENE_REDRAWS} draws; "
                f"the cell grid is too coarse for the configured path count"
            )
        clean = synthesize_channel(paths, grid).astype(np.complex64)
        snr_db = rng.uniform(*cfg.snr_range_db)
        sigma = sigma_for_snr(clean, snr_db)
        records.append(SceneRecord(paths=paths, sigma=float(sigma), data=clean))
    return records


def _record_bytes(rec: SceneRecord) -> bytes:
    p = len(rec.paths)
    parts = [struct.pack("<I", p)]
    for arr in (rec.paths.gains.real, rec.paths.gains.imag,
                rec.paths.delays, rec.paths.dopplers):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", rec.sigma))
    interleaved = np.empty(rec.data.size * 2, dtype="<f4")
    flat = rec.data.ravel()
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    parts.append(interleaved.tobytes())
    return b"".join(parts)


def write_dataset(path, records: Sequence[SceneRecord], grid: SamplingGrid,
                  meta: Optional[dict] = None, created_at: Optional[float] = None) -> None:
    """Serialize records behind a manifest with offsets and a payload CRC."""
    blobs = [_record_bytes(r) for r in records]
    offsets, pos = [], 0
    for b in blobs:
        offsets.append(pos)
        pos += len(b)
    payload = b"".join(blobs)
    manifest = {
        "schema_version": DATASET_VERSION,
        "created_at": time.time() if created_at is None else created_at,
        "n_samples": len(records),
        "grid": {"n_freq": grid.n_freq, "n_time": grid.n_time,
                 "delta_f": grid.delta_f, "delta_t": grid.delta_t,
                 "f0": grid.f0, "t0": grid.t0},
        "record_offsets": offsets,
        "records_crc32": zlib.crc32(payload),
    }
    manifest.update(meta or {})
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_dataset(path) -> tuple[dict, list[SceneRecord]]:
    """Parse and verify a dataset container; returns (manifest, records)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: not a dataset container")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"{path}: dataset version {version}, expected {DATASET_VERSION}")
    (mlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + mlen > len(raw):
        raise TruncatedFileError(f"{path}: manifest extends past end of file")
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: bad manifest: {exc}") from exc
    payload = raw[16 + mlen:]
    if zlib.crc32(payload) != manifest.get("records_crc32"):
        raise ChecksumError(f"{path}: record payload checksum mismatch")
    g = manifest["grid"]
    grid = SamplingGrid(n_freq=g["n_freq"], n_time=g["n_time"], delta_f=g["delta_f"],
                        delta_t=g["delta_t"], f0=g["f0"], t0=g["t0"])
    n_entry = grid.n_freq * grid.n_time
    offsets = manifest["record_offsets"]
    if len(offsets) != manifest["n_samples"] or any(
            b <= a for a, b in zip(offsets, offsets[1:])):
        raise DataFormatError(f"{path}: manifest offsets are inconsistent")
    records = []
    for k, off in enumerate(offsets):
        try:
            (p,) = struct.unpack_from("<I", payload, off)
            pos = off + 4
            arrs = []
            for _ in range(4):
                arrs.append(np.frombuffer(payload, dtype="<f8", count=p, offset=pos).copy())
                pos += 8 * p
            (sigma,) = struct.unpack_from("<d", payload, pos)
            pos += 8
            inter = np.frombuffer(payload, dtype="<f4", count=2 * n_entry, offset=pos)
            if inter.size != 2 * n_entry:
                raise ValueError("snapshot payload short")
        except (struct.error, ValueError) as exc:
            raise TruncatedFileError(f"{path}: record {k} is truncated ({exc})") from exc
        data = (inter[0::2] + 1j * inter[1::2]).astype(np.complex64)
        paths = (PathSet(arrs[0] + 1j * arrs[1], arrs[2], arrs[3]) if p
                 else PathSet.empty())
        records.append(SceneRecord(paths=paths, sigma=float(sigma),
                                   data=data.reshape(grid.n_freq, grid.n_time)))
    return manifest, records
