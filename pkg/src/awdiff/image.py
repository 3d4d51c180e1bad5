"""Image container helpers, seeded random streams and file I/O.

Images are plain 2D ``float64`` numpy arrays of shape ``(height, width)``
with nominal range [0, 1]. Two on-disk formats are supported:

* binary PGM (``P5``), 8-bit (maxval 255) or 16-bit big-endian (maxval 65535);
* the raw tensor format ``AWT1``: the magic bytes, a little-endian ``u32``
  rank, ``rank`` little-endian ``u32`` dims, then the row-major payload as
  little-endian IEEE-754 doubles.

Random streams use numpy's ``PCG64`` bit generator wrapped in a
``numpy.random.Generator``. Child streams for parallel work are derived
with ``numpy.random.SeedSequence(seed).spawn(n)``; per-item integer seeds
come from ``SeedSequence([seed, index])`` (see :func:`derive_seed`).
"""

import os
import struct

import numpy as np

from .errors import CorruptionError, FormatError, InvariantError, ParameterError

TENSOR_MAGIC = b"AWT1"


def as_image(data, copy=False):
    """Validate ``data`` as an image and return it as a float64 2D array.

    Raises
    ------
    InvariantError
        If the array is not 2D, is empty, or holds non-finite values.
    """
    img = np.array(data, dtype=np.float64, copy=copy or None)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvariantError(f"image must be a non-empty 2D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvariantError("image contains non-finite pixel values")
    return img


def check_same_shape(a, b, what="images"):
    if np.shape(a) != np.shape(b):
        raise InvariantError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def make_rng(seed):
    """Return the seeded generator used everywhere in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n):
    """Derive ``n`` independent child generators from one seed.

    Child ``i`` is always the same stream for a given ``(seed, i)``,
    regardless of how many siblings are requested.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def derive_seed(seed, index):
    """Integer seed for work item ``index`` of a job seeded with ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def standard_normal_field(rng, width, height):
    """Draw an image of i.i.d. N(0, 1) pixels."""
    if width < 1 or height < 1:
        raise ParameterError(f"field dims must be positive, got {width}x{height}")
    return rng.standard_normal((height, width))


# -- raw tensor format ------------------------------------------------------

def write_tensor(path, array):
    """Write ``array`` (any rank, finite) in the AWT1 raw tensor format."""
    arr = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvariantError("refusing to write a tensor with non-finite values")
    header = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def read_tensor(path):
    """Read an AWT1 tensor file, returning a float64 array of its stored shape."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: missing AWT1 magic")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header_len = 8 + 4 * rank
    if len(blob) < header_len:
        raise FormatError(f"{path}: truncated dims for rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims, dtype=np.int64))
    payload = blob[header_len:]
    if len(payload) != 8 * count:
        raise CorruptionError(
            f"{path}: header dims {dims} need {count} values, payload holds {len(payload) / 8:g}"
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


# -- PGM --------------------------------------------------------------------

def _pgm_tokens(blob):
    """Parse the three header integers of a P5 file; return them and the payload offset."""
    if blob[:2] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header")
        values.append(int(blob[start:pos]))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header")
    return values, pos + 1


def _read_pgm(blob):
    (width, height, maxval), offset = _pgm_tokens(blob)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM header values {width}x{height} maxval {maxval}")
    dtype = ">u1" if maxval < 256 else ">u2"
    itemsize = np.dtype(dtype).itemsize
    payload = blob[offset:]
    if len(payload) != width * height * itemsize:
        raise CorruptionError(
            f"PGM header claims {width}x{height} samples, payload holds {len(payload) // itemsize}"
        )
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return raw.astype(np.float64) / maxval


def write_pgm(path, img, maxval=65535):
    """Write ``img`` as a P5 PGM, clipping to [0, 1] and rounding to ``maxval`` levels."""
    if maxval not in (255, 65535):
        raise ParameterError("maxval must be 255 or 65535")
    img = as_image(img)
    h, w = img.shape
    levels = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u1" if maxval == 255 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(levels.astype(dtype).tobytes())


def load_image(path):
    """Load a PGM (P5) or AWT1 rank-2 file as an image.

    PGM samples are mapped linearly into [0, 1] by dividing by maxval.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == TENSOR_MAGIC:
        arr = read_tensor(path)
        if arr.ndim != 2:
            raise FormatError(f"{path}: expected a rank-2 tensor for an image, got rank {arr.ndim}")
        return as_image(arr)
    with open(path, "rb") as fh:
        blob = fh.read()
    return _read_pgm(blob)


def save_image(img, path):
    """Save an image; the format follows the extension (``.pgm`` or anything else → AWT1).

    The AWT1 route is lossless. PGM output is 16-bit, so the round-trip error
    is at most 1/65535 per pixel for images inside [0, 1].
    """
    img = as_image(img)
    if os.fspath(path).lower().endswith(".pgm"):
        write_pgm(path, img)
    else:
        write_tensor(path, img)
