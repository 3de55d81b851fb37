import numpy as np
import pytest
import torch

from src.analysis.exports import (
    REPORT_COLUMNS,
    channel_bytes,
    export_channel_images,
    export_similarity_report,
    export_token_maps,
    read_similarity_report,
    read_token_maps,
)
from src.models.grid import Grid
from src.models.report import SimilarityReport
from src.posembed.constructions import detection_tile
from src.utils.errors import FormatError, InvalidArgumentError
from src.utils.exporters import (
    format_float,
    normalize_to_bytes,
    parse_metadata,
    read_csv,
    read_pgm,
    write_csv,
    write_manifest,
    write_pgm,
)
from src.utils.serialization import file_digest


class TestCsv:
    def test_round_trip_with_metadata(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.1), (2, 1 / 3)], {"seed": 3, "config": "ab12"})
        assert path.read_text().splitlines()[0] == "# config=ab12 seed=3"
        metadata, header, rows = read_csv(path)
        assert metadata == {"config": "ab12", "seed": "3"}
        assert header == ["a", "b"]
        assert float(rows[1][1]) == 1 / 3

    def test_floats_are_lossless(self):
        assert float(format_float(0.1 + 0.2)) == 0.1 + 0.2

    def test_ragged_rows_are_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1\n")
        with pytest.raises(FormatError):
            read_csv(path)

    def test_malformed_metadata(self):
        with pytest.raises(FormatError):
            parse_metadata("seed=1 orphan")


class TestPgm:
    def test_min_max_bytes(self):
        values = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
        assert normalize_to_bytes(values).ravel().tolist() == [0, 51, 102, 153, 204, 255]

    def test_constant_channel_is_mid_gray(self):
        assert normalize_to_bytes(np.full((3, 3), 0.7)).ravel().tolist() == [127] * 9

    def test_affine_invariance(self):
        values = np.random.default_rng(0).standard_normal((4, 5))
        assert np.array_equal(normalize_to_bytes(values), normalize_to_bytes(3.0 * values + 2.0))

    def test_file_layout_and_round_trip(self, tmp_path):
        pixels = np.array([[0, 51, 102], [153, 204, 255]], dtype=np.uint8)
        path = write_pgm(tmp_path / "img.pgm", pixels, comment="seed=1")
        assert path.read_bytes() == b"P5\n# seed=1\n3 2\n255\n" + bytes([0, 51, 102, 153, 204, 255])
        loaded, comment = read_pgm(path)
        assert np.array_equal(loaded, pixels)
        assert comment == "seed=1"

    def test_rejects_non_byte_images(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n1 1\n255\n\0")
        with pytest.raises(FormatError):
            read_pgm(path)


class TestChannelImages:
    def test_tiled_embedding_gives_periodic_image(self, tmp_path, generator):
        pretrained = Grid(torch.randn(4, 4, 3, generator=generator))
        embed = detection_tile(pretrained, 12, 12)
        paths = export_channel_images(embed, [0, 2], tmp_path, "run", {"seed": 0})
        assert [p.name for p in paths] == ["run_ch0.pgm", "run_ch2.pgm"]
        pixels, _ = read_pgm(paths[1])
        assert pixels.shape == (12, 12)
        assert np.array_equal(pixels[:4, :4], pixels[4:8, 8:12])

    def test_channel_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            channel_bytes(Grid.zeros(2, 2, 2), 2)


class TestTokenMaps:
    def test_orthogonal_tokens_give_identity(self, tmp_path):
        part = Grid(torch.eye(4).reshape(2, 2, 4))
        maps = read_token_maps(export_token_maps(part, tmp_path / "maps.csv"))
        assert np.allclose(maps, np.eye(4))

    def test_header(self, tmp_path):
        path = export_token_maps(Grid.full(2, 2, 1, 1.0), tmp_path / "maps.csv", {"part": "window"})
        metadata, header, _ = read_csv(path)
        assert header == ["t0", "t1", "t2", "t3"]
        assert metadata == {"part": "window"}


class TestSimilarityReport:
    def test_round_trip(self, tmp_path):
        report = SimilarityReport(run_id="r1", embed_mode="naive", task="mae", seed=2)
        report.record(0, 0.05)
        report.record(10, 0.4)
        path = export_similarity_report(report, tmp_path / "sim.csv", {"config": "abc"})
        metadata, header, _ = read_csv(path)
        assert header == REPORT_COLUMNS
        assert metadata["config"] == "abc" and metadata["scope"] == report.scope
        loaded = read_similarity_report(path)
        assert loaded.series == report.series
        assert (loaded.run_id, loaded.task, loaded.seed) == ("r1", "mae", 2)

    def test_missing_metadata(self, tmp_path):
        path = write_csv(tmp_path / "sim.csv", REPORT_COLUMNS, [(0, 0.5, "naive", "mae", 0)])
        with pytest.raises(FormatError):
            read_similarity_report(path)

    def test_series_must_increase(self):
        report = SimilarityReport(run_id="r", embed_mode="naive", task="supervised")
        report.record(5, 0.1)
        with pytest.raises(InvalidArgumentError):
            report.record(5, 0.2)
        with pytest.raises(InvalidArgumentError):
            report.record(6, 1.5)
        assert report.initial == report.final == 0.1


class TestManifest:
    def test_lists_every_artifact(self, tmp_path):
        (tmp_path / "a.txt").write_text("alpha")
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "b.bin").write_bytes(b"\x00\x01")
        metadata, header, rows = read_csv(write_manifest(tmp_path, {"config_hash": "ab12", "seed": 3}))
        assert metadata == {"config_hash": "ab12", "seed": "3"}
        assert header == ["artifact", "sha256", "bytes"]
        assert [row[0] for row in rows] == ["a.txt", "sub/b.bin"]
        assert rows[0][1] == file_digest(tmp_path / "a.txt")
        assert rows[1][2] == "2"
