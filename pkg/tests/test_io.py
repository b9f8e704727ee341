import os
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from esdnet.errors import ContractError, FormatError
from esdnet.io import (atomic_write, decode_weights, encode_weights, load_png, load_weights,
                       quantize, read_csv, save_png, save_weights, write_csv)
from esdnet.model import ModelConfig, build_model


@pytest.fixture(scope="module")
def tiny():
    return build_model(ModelConfig(width_div=8), seed=4)


class TestWeights:
    def test_round_trip_bit_exact(self, tiny, tmp_path):
        path = tmp_path / "w.esdw"
        save_weights(tiny, path)
        back = load_weights(path, tiny.config)
        assert list(back.params) == list(tiny.params)
        assert all(back[k].tobytes() == tiny[k].tobytes() for k in tiny.params)

    def test_config_inferred(self, tmp_path):
        for cfg in (ModelConfig("large", 8), ModelConfig("weight_shared", 4)):
            path = tmp_path / f"{cfg.variant}.esdw"
            save_weights(build_model(cfg), path)
            assert load_weights(path).config == cfg

    def test_layout(self):
        blob = encode_weights({"a": np.array([[1.5, 2.0]], dtype=np.float32)})
        assert blob[:4] == b"ESDW"
        assert struct.unpack_from("<II", blob, 4) == (1, 1)
        assert struct.unpack_from("<I", blob, 12) == (1,)
        assert blob[16:17] == b"a"
        assert struct.unpack_from("<BBII", blob, 17) == (0, 2, 1, 2)
        assert struct.unpack_from("<2f", blob, 27) == (1.5, 2.0)
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])
        assert len(blob) == 27 + 8 + 4

    def test_truncated_is_crc_error(self, tiny, tmp_path):
        blob = encode_weights(tiny.params)
        path = tmp_path / "cut.esdw"
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(FormatError, match="CRC"):
            load_weights(path)

    def test_bit_flip(self, tiny):
        blob = bytearray(encode_weights(tiny.params))
        blob[100] ^= 1
        with pytest.raises(FormatError, match="CRC"):
            decode_weights(bytes(blob))

    def test_wrong_variant_named(self, tmp_path):
        path = tmp_path / "l.esdw"
        save_weights(build_model(ModelConfig("large", 8)), path)
        with pytest.raises(ContractError, match="unexpected entry enc1.sam2"):
            load_weights(path, ModelConfig("standard", 8))

    def test_wrong_width_is_shape_mismatch(self, tmp_path):
        path = tmp_path / "w.esdw"
        save_weights(build_model(ModelConfig(width_div=4)), path)
        with pytest.raises(ContractError, match="shape mismatch for head.conv.weight"):
            load_weights(path, ModelConfig(width_div=8))

    def test_missing_entry_named(self, tiny, tmp_path):
        params = dict(tiny.params)
        del params["dec1.out.bias"]
        path = tmp_path / "m.esdw"
        path.write_bytes(encode_weights(params))
        with pytest.raises(ContractError, match="missing entry dec1.out.bias"):
            load_weights(path, tiny.config)

    def test_bad_magic(self):
        body = b"XXXX" + struct.pack("<II", 1, 0)
        with pytest.raises(FormatError, match="magic"):
            decode_weights(body + struct.pack("<I", zlib.crc32(body)))


class TestAtomic:
    def test_failure_leaves_nothing(self, tmp_path):
        target = tmp_path / "out.bin"
        with pytest.raises(RuntimeError):
            with atomic_write(target) as fh:
                fh.write(b"partial")
                raise RuntimeError("boom")
        assert os.listdir(tmp_path) == []

    def test_keeps_old_file_on_failure(self, tmp_path):
        target = tmp_path / "out.bin"
        target.write_bytes(b"old")
        with pytest.raises(RuntimeError):
            with atomic_write(target) as fh:
                fh.write(b"new")
                raise RuntimeError
        assert target.read_bytes() == b"old"


class TestPNG:
    def test_black(self, tmp_path):
        path = tmp_path / "b.png"
        Image.fromarray(np.zeros((5, 7, 3), dtype=np.uint8)).save(path)
        img = load_png(path)
        assert img.shape == (3, 5, 7) and np.all(img == 0)

    def test_value_128(self, tmp_path):
        path = tmp_path / "g.png"
        Image.fromarray(np.full((2, 2, 3), 128, dtype=np.uint8)).save(path)
        assert abs(load_png(path)[0, 0, 0] - 128 / 255) <= 1e-7

    def test_rgba_drops_alpha(self, tmp_path):
        arr = np.zeros((2, 2, 4), dtype=np.uint8)
        arr[..., 0] = 255
        arr[..., 3] = 10
        path = tmp_path / "a.png"
        Image.fromarray(arr, mode="RGBA").save(path)
        img = load_png(path)
        assert img.shape == (3, 2, 2) and np.all(img[0] == 1) and np.all(img[1:] == 0)

    def test_grayscale_rejected(self, tmp_path):
        path = tmp_path / "l.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(FormatError):
            load_png(path)

    def test_save_load_save_stable(self, rng, tmp_path):
        img = rng.random((3, 9, 11))
        save_png(img, tmp_path / "1.png")
        save_png(load_png(tmp_path / "1.png"), tmp_path / "2.png")
        save_png(load_png(tmp_path / "2.png"), tmp_path / "3.png")
        assert (tmp_path / "2.png").read_bytes() == (tmp_path / "3.png").read_bytes()
        assert np.array_equal(load_png(tmp_path / "1.png"), load_png(tmp_path / "2.png"))

    def test_round_half_up(self):
        assert quantize(np.array([0.5 / 255, 1.5 / 255, 254.5 / 255, -1.0, 2.0])).tolist() == [1, 2, 255, 0, 255]


def test_csv_round_trip(tmp_path):
    rows = [{"step": 1, "loss": 0.1 + 0.2}, {"step": 2, "loss": 1e-300}]
    write_csv(rows, tmp_path / "l.csv", ("step", "loss"))
    back = read_csv(tmp_path / "l.csv")
    assert [float(r["loss"]) for r in back] == [0.1 + 0.2, 1e-300]
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "step,loss"
