import numpy as np
import pytest

from ddest.channel import SamplingGrid, SceneConfig, substream
from ddest.dataio import (SceneRecord, generate_records, read_dataset, write_dataset)
from ddest.encoding import CellGridSpec
from ddest.errors import (ChecksumError, DataFormatError, TruncatedFileError,
                          ValidationError, VersionMismatchError)
from ddest.preprocess import RegionOfInterest

GRID = SamplingGrid.centered(32, 16, 1e6, 1e-3)
CELLS = CellGridSpec(4, 4, 2, RegionOfInterest(0.0, 0.025, -0.05, 0.05, 16, 16))


def make_records(n=5, seed=0):
    cfg = SceneConfig(path_count_range=(1, 4))
    return generate_records(cfg, GRID, CELLS, n, seed)


class TestGenerateRecords:
    def test_reproducible(self):
        a = make_records(4, seed=9)
        b = make_records(4, seed=9)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.data, rb.data)
            np.testing.assert_array_equal(ra.paths.delays, rb.paths.delays)
            assert ra.sigma == rb.sigma

    def test_respects_cell_capacity(self):
        cells = CellGridSpec(2, 2, 1, RegionOfInterest(0.0, 0.025, -0.05, 0.05, 8, 8))
        cfg = SceneConfig(path_count_range=(1, 3))
        from ddest.encoding import encodable

        for rec in generate_records(cfg, GRID, cells, 20, seed=3):
            assert encodable(rec.paths, cells)

    def test_data_is_clean_complex64(self):
        from ddest.channel import synthesize_channel

        rec = make_records(1, seed=4)[0]
        assert rec.data.dtype == np.complex64
        expected = synthesize_channel(rec.paths, GRID).astype(np.complex64)
        np.testing.assert_array_equal(rec.data, expected)


class TestRoundTrip:
    def test_bit_exact_snapshots(self, tmp_path):
        records = make_records(10, seed=1)
        path = tmp_path / "ds.bin"
        write_dataset(path, records, GRID, meta={"seed": 1})
        manifest, back = read_dataset(path)
        assert manifest["n_samples"] == 10
        assert manifest["seed"] == 1
        for orig, rt in zip(records, back):
            np.testing.assert_array_equal(orig.data, rt.data)
            np.testing.assert_array_equal(orig.paths.gains, rt.paths.gains)
            np.testing.assert_array_equal(orig.paths.delays, rt.paths.delays)
            np.testing.assert_array_equal(orig.paths.dopplers, rt.paths.dopplers)
            assert orig.sigma == rt.sigma

    def test_empty_dataset_valid(self, tmp_path):
        path = tmp_path / "empty.bin"
        write_dataset(path, [], GRID)
        manifest, records = read_dataset(path)
        assert manifest["n_samples"] == 0 and records == []

    def test_write_twice_identical_except_timestamp(self, tmp_path):
        records = make_records(3, seed=2)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        write_dataset(a, records, GRID, created_at=0.0)
        write_dataset(b, records, GRID, created_at=0.0)
        assert a.read_bytes() == b.read_bytes()

    def test_noisy_snapshot_consumer(self, tmp_path):
        rec = make_records(1, seed=5)[0]
        snap = rec.noisy_snapshot(GRID, substream(0))
        assert snap.noise_sigma == rec.sigma
        assert snap.truth is rec.paths
        again = rec.noisy_snapshot(GRID, substream(0))
        np.testing.assert_array_equal(snap.data, again.data)


class TestCorruption:
    def write(self, tmp_path):
        path = tmp_path / "ds.bin"
        write_dataset(path, make_records(3, seed=7), GRID)
        return path

    def test_truncated_mid_record(self, tmp_path):
        path = self.write(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 64])
        with pytest.raises((TruncatedFileError, ChecksumError)):
            read_dataset(path)

    def test_flipped_payload_byte_fails_checksum(self, tmp_path):
        path = self.write(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            read_dataset(path)

    def test_wrong_version_detected(self, tmp_path):
        path = self.write(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError):
            read_dataset(path)

    def test_not_a_dataset(self, tmp_path):
        path = tmp_path / "nope.bin"
        path.write_bytes(b"garbage")
        with pytest.raises(DataFormatError):
            read_dataset(path)

    def test_distinct_error_types(self):
        assert issubclass(VersionMismatchError, DataFormatError)
        assert issubclass(TruncatedFileError, DataFormatError)
        assert issubclass(ChecksumError, DataFormatError)
        assert not issubclass(VersionMismatchError, ChecksumError)


class TestSceneRecord:
    def test_negative_sigma_rejected(self):
        from ddest.channel import PathSet

        with pytest.raises(ValidationError):
            SceneRecord(PathSet.empty(), -1.0, np.zeros((2, 2), np.complex64))
