"""Binary operator cache: framing, checksum, and parameter guards."""

import os
import numpy as np
import pytest

from bfd.cache import (save_matrix, load_matrix, save_array, load_array,
                       cache_dir, CacheError, CacheMismatch, CacheCorrupt)


def test_matrix_round_trip(tmp_path, rng):
    mat = rng.normal(size=(27, 27))
    path = str(tmp_path / "m.bfdl")
    crc = save_matrix(path, 8.0, 3, 7, mat)
    back, crc2 = load_matrix(path, 8.0, 3, 7)
    assert crc2 == crc
    assert np.array_equal(back, mat)            # bit-identical


def test_matrix_parameter_mismatch(tmp_path, rng):
    path = str(tmp_path / "m.bfdl")
    save_matrix(path, 8.0, 3, 7, rng.normal(size=(27, 27)))
    with pytest.raises(CacheMismatch):
        load_matrix(path, 8.0, 3, 11)
    with pytest.raises(CacheMismatch):
        load_matrix(path, 9.0, 3, 7)


def test_matrix_corruption_detected(tmp_path, rng):
    path = str(tmp_path / "m.bfdl")
    save_matrix(path, 8.0, 3, 7, rng.normal(size=(27, 27)))
    data = bytearray(open(path, "rb").read())
    data[len(data) // 2] ^= 0xFF
    open(path, "wb").write(bytes(data))
    with pytest.raises(CacheCorrupt):
        load_matrix(path, 8.0, 3, 7)
    # truncation is also caught
    open(path, "wb").write(bytes(data[:10]))
    with pytest.raises(CacheCorrupt):
        load_matrix(path, 8.0, 3, 7)


def test_missing_file(tmp_path):
    with pytest.raises(CacheError):
        load_matrix(str(tmp_path / "absent.bfdl"), 8.0, 3, 7)
    with pytest.raises(CacheError):
        load_array(str(tmp_path / "absent.npy"))


def test_array_round_trip(tmp_path, rng):
    arr = rng.normal(size=100)
    path = str(tmp_path / "a.npy")
    crc = save_array(path, arr)
    assert np.array_equal(load_array(path, expect_crc=crc), arr)
    with pytest.raises(CacheCorrupt):
        load_array(path, expect_crc=crc + 1)


def test_cache_dir_env_override(monkeypatch):
    monkeypatch.setenv("BFD_CACHE_DIR", "/tmp/some-cache")
    assert cache_dir("/ignored") == "/tmp/some-cache"
    monkeypatch.delenv("BFD_CACHE_DIR")
    assert cache_dir("/fallback") == "/fallback"
    assert cache_dir().endswith(os.path.join(".cache", "bfd"))


def test_crc_chaining_matches_concatenation(rng):
    # chunked chaining must equal the one-shot CRC, including when an
    # intermediate value has the top bit set (seed re-entry path)
    from bfd.cache import _crc_of
    data = rng.integers(0, 256, size=4096, dtype=np.uint8).tobytes()
    whole = _crc_of([data])
    hit_top_bit = False
    for cut in range(64, 4096, 256):
        parts = [data[:cut], data[cut:]]
        assert _crc_of(parts) == whole
        hit_top_bit = hit_top_bit or _crc_of([data[:cut]]) >= 2 ** 63
    assert hit_top_bit
