"""Binary disk cache for dense operator matrices.

Layout (little-endian): magic "BFDL" | format version u32 | R f64 |
n u32 | sphere rule id u32 | row-major f64 matrix | CRC-64 trailer
computed over everything before it.
"""

import os
import struct
import numpy as np

from ._kernels import crc64

MAGIC = b"BFDL"
VERSION = 1


class CacheError(Exception):
    """I/O or integrity failure in the operator cache."""


class CacheMismatch(CacheError):
    """Parameters in the cache file do not match the request."""


class CacheCorrupt(CacheError):
    """Checksum or framing failure."""


def cache_dir(default=None):
    """Cache directory, overridable through BFD_CACHE_DIR."""
    d = os.environ.get("BFD_CACHE_DIR")
    if d:
        return d
    if default is not None:
        return default
    return os.path.join(os.path.expanduser("~"), ".cache", "bfd")


def _crc_of(chunks):
    c = np.uint64(0)
    for ch in chunks:
        # re-wrap the seed: the jitted routine hands back a Python int,
        # which does not coerce to a uint64 argument once the top bit is set
        c = crc64(np.frombuffer(ch, dtype=np.uint8), np.uint64(c))
    return int(c)


def save_matrix(path, R, n, sphere_id, mat):
    """Write a dense matrix with header and CRC-64 trailer."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    header = MAGIC + struct.pack("<IdII", VERSION, float(R), int(n),
                                 int(sphere_id))
    body = np.ascontiguousarray(mat, dtype="<f8").tobytes()
    crc = _crc_of([header, body])
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(body)
            f.write(struct.pack("<Q", crc))
        os.replace(tmp, path)
    except OSError as e:
        raise CacheError("cannot write cache file %s: %s" % (path, e))
    return crc


def load_matrix(path, R, n, sphere_id):
    """Read a matrix back; raises CacheMismatch/CacheCorrupt on trouble."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CacheError("cannot read cache file %s: %s" % (path, e))
    hdr_len = 4 + struct.calcsize("<IdII")
    if len(raw) < hdr_len + 8 or raw[:4] != MAGIC:
        raise CacheCorrupt("bad magic or truncated file: %s" % path)
    version, fR, fn, fsid = struct.unpack("<IdII", raw[4:hdr_len])
    if version != VERSION:
        raise CacheMismatch("format version %d != %d" % (version, VERSION))
    if fR != float(R) or fn != int(n) or fsid != int(sphere_id):
        raise CacheMismatch("cached parameters (R=%g,n=%d,sphere=%d) do not "
                            "match request (R=%g,n=%d,sphere=%d)"
                            % (fR, fn, fsid, R, n, sphere_id))
    body = raw[hdr_len:-8]
    (crc_stored,) = struct.unpack("<Q", raw[-8:])
    if _crc_of([raw[:hdr_len], body]) != crc_stored:
        raise CacheCorrupt("checksum mismatch: %s" % path)
    N = fn ** 3
    if len(body) != 8 * N * N:
        raise CacheCorrupt("matrix payload has wrong size: %s" % path)
    mat = np.frombuffer(body, dtype="<f8").reshape(N, N).copy()
    return mat, crc_stored


def save_array(path, arr):
    """Persist an auxiliary array (.npy) and return its CRC-64."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    np.save(path, arr)
    with open(path, "rb") as f:
        data = f.read()
    return _crc_of([data])


def load_array(path, expect_crc=None):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CacheError("cannot read %s: %s" % (path, e))
    if expect_crc is not None and _crc_of([data]) != expect_crc:
        raise CacheCorrupt("checksum mismatch: %s" % path)
    import io
    return np.load(io.BytesIO(data))
