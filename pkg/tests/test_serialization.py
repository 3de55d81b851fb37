import struct

import pytest
import torch

from src.models.embedding import AbsWinEmbed, NaiveEmbed
from src.models.grid import Grid
from src.network.hiera_lite import adapt_resolution, build_model, forward_classify
from src.posembed.constructions import random_abswin, random_naive
from src.utils.errors import FormatError
from src.utils.serialization import (
    EMBED_MAGIC,
    decode_embedding,
    encode_embedding,
    file_digest,
    load_checkpoint,
    load_embedding,
    save_checkpoint,
    save_embedding,
)
from tests.conftest import tiny_spec


class TestEmbeddingContainer:
    def test_naive_round_trip(self, tmp_path, generator):
        embed = random_naive(5, 3, 4, generator)
        loaded = load_embedding(save_embedding(embed, tmp_path / "naive.bin"))
        assert isinstance(loaded, NaiveEmbed)
        assert loaded.grid.equal(embed.grid)

    def test_abswin_round_trip(self, tmp_path, generator):
        embed = random_abswin(4, 3, 2, generator)
        loaded = load_embedding(save_embedding(embed, tmp_path / "abswin.bin"))
        assert isinstance(loaded, AbsWinEmbed)
        assert loaded.window_part.equal(embed.window_part)
        assert loaded.global_part.equal(embed.global_part)

    def test_header_layout(self, generator):
        data = encode_embedding(random_abswin(4, 3, 2, generator))
        magic, version, kind, _, h, w, c, window, glob = struct.unpack_from("<4sHBBIIIII", data)
        assert (magic, version, kind) == (EMBED_MAGIC, 1, 1)
        assert (h, w, c, window, glob) == (4, 4, 2, 4, 3)
        assert len(data) == struct.calcsize("<4sHBBIIIII") + 4 * (16 + 9) * 2

    def test_little_endian_payload(self):
        data = encode_embedding(NaiveEmbed(Grid.full(1, 1, 1, 1.0)))
        assert data[-4:] == struct.pack("<f", 1.0)

    def test_decode_reports_end_offset(self, generator):
        data = encode_embedding(random_naive(2, 2, 2, generator))
        _, end = decode_embedding(data + b"tail")
        assert end == len(data)

    def test_bad_magic(self, generator):
        data = bytearray(encode_embedding(random_naive(2, 2, 1, generator)))
        data[:4] = b"NOPE"
        with pytest.raises(FormatError):
            decode_embedding(bytes(data))

    def test_unknown_version(self, generator):
        data = bytearray(encode_embedding(random_naive(2, 2, 1, generator)))
        data[4:6] = struct.pack("<H", 9)
        with pytest.raises(FormatError):
            decode_embedding(bytes(data))

    def test_truncated_payload(self, generator):
        data = encode_embedding(random_naive(2, 2, 1, generator))
        with pytest.raises(FormatError):
            decode_embedding(data[:-1])

    def test_trailing_bytes_in_file(self, tmp_path, generator):
        path = tmp_path / "embed.bin"
        path.write_bytes(encode_embedding(random_naive(2, 2, 1, generator)) + b"\0")
        with pytest.raises(FormatError):
            load_embedding(path)


class TestCheckpoint:
    @pytest.mark.parametrize("mode", ["naive", "abswin", "abswin_window"])
    def test_round_trip(self, tmp_path, mode):
        spec = tiny_spec(embed_mode=mode)
        model = build_model(spec, seed=5)
        path = tmp_path / "model.bin"
        save_checkpoint(path, model, seed=5, config_hash="abc123", task="posprobe", step=7, metrics={"loss": 0.5})
        manifest, loaded = load_checkpoint(path)
        assert manifest.seed == 5 and manifest.step == 7 and manifest.config_hash == "abc123"
        assert manifest.metrics == {"loss": 0.5}
        assert manifest.spec == spec
        for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(a, b), name

    def test_adapted_model_round_trip(self, tmp_path):
        spec = tiny_spec(relpos_scope="global")
        new_spec, model = adapt_resolution(spec, build_model(spec), 12)
        path = tmp_path / "adapted.bin"
        save_checkpoint(path, model, seed=0, parent="deadbeef")
        manifest, loaded = load_checkpoint(path)
        assert manifest.spec.input_grid == 12 and manifest.spec.pretrain_grid == 8
        assert manifest.parent == "deadbeef"
        images = torch.randn(1, 12, 12, 3)
        with torch.no_grad():
            assert torch.equal(forward_classify(new_spec, model, images), forward_classify(new_spec, loaded, images))

    def test_save_is_deterministic(self, tmp_path):
        model = build_model(tiny_spec(), seed=1)
        save_checkpoint(tmp_path / "a.bin", model, seed=1)
        save_checkpoint(tmp_path / "b.bin", model, seed=1)
        assert file_digest(tmp_path / "a.bin") == file_digest(tmp_path / "b.bin")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.bin"
        save_checkpoint(path, build_model(tiny_spec()), seed=0)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_tensor_section(self, tmp_path):
        path = tmp_path / "model.bin"
        save_checkpoint(path, build_model(tiny_spec()), seed=0)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.bin")
