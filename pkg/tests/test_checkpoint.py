import numpy as np
import pytest
import torch

from udapose.checkpoint import MAGIC, load_container, save_container


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": rng.normal(size=(3, 4)).astype(np.float32), "scalar": np.float32(2.5),
               "t": torch.arange(6, dtype=torch.float32).view(2, 3), "count": torch.tensor(7)}
    save_container(tmp_path / "c.bin", tensors, {"kind": "test", "n": [1, 2]})
    back, meta = load_container(tmp_path / "c.bin")
    assert meta == {"kind": "test", "n": [1, 2]}
    np.testing.assert_array_equal(back["w"], tensors["w"])
    assert back["scalar"].shape == () and back["scalar"] == 2.5
    np.testing.assert_array_equal(back["t"], np.arange(6).reshape(2, 3))
    assert back["count"].dtype == np.int64 and int(back["count"]) == 7


def test_deterministic_bytes(tmp_path):
    t = {"b": np.ones(3, np.float32), "a": np.zeros((2, 2), np.float32)}
    save_container(tmp_path / "1.bin", t, {"x": 1})
    assert (tmp_path / "1.bin").read_bytes()[:8] == MAGIC
    save_container(tmp_path / "3.bin", t, {"x": 1})
    assert (tmp_path / "1.bin").read_bytes() == (tmp_path / "3.bin").read_bytes()


def test_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_container(tmp_path / "x.bin")
