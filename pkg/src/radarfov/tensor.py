"""Dense tensor helpers: power-of-two FFTs, Hann windowing, RTEN file IO.

Tensors are plain numpy arrays: float64 for real data, complex128 for
complex data. All DSP paths stay in double precision so the simulator and
the gradient-check oracles share one numeric baseline.

The RTEN binary format used across the repo:

    magic   4 bytes  b"RTEN"
    version u32 LE   (currently 1)
    dtype   u8       0 = real 64-bit, 1 = complex as (re, im) 64-bit pairs
    ndim    u32 LE
    dims    ndim * u64 LE
    payload row-major little-endian float64 (complex stored interleaved)
"""

from __future__ import annotations

import os
import struct

import numpy as np

RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1
DTYPE_REAL64 = 0
DTYPE_COMPLEX64PAIR = 1


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, w[k] = 0.5 - 0.5*cos(2*pi*k/n), length n >= 2."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def fft_1d(signal: np.ndarray, inverse: bool = False) -> np.ndarray:
    """DFT of a complex vector whose length is a power of two.

    Forward is the unnormalized DFT; inverse is the conjugate transform
    scaled by 1/N, so ``fft_1d(fft_1d(x), inverse=True) == x``.
    """
    x = np.asarray(signal, dtype=np.complex128)
    if x.ndim != 1:
        raise ValueError("fft_1d expects a 1-D vector")
    if not _is_pow2(x.shape[0]):
        raise ValueError(f"FFT length must be a power of two >= 2, got {x.shape[0]}")
    return np.fft.ifft(x) if inverse else np.fft.fft(x)


def fft_axis(
    t: np.ndarray,
    axis: int,
    window: str | None = None,
    center_shift: bool = False,
    inverse: bool = False,
) -> np.ndarray:
    """FFT of every 1-D lane of ``t`` along ``axis``.

    Parameters
    ----------
    t : complex ndarray
    axis : lane axis; its extent must be a power of two.
    window : None or "hann"; applied before the forward transform.
    center_shift : rotate output bins so zero frequency sits at extent/2.
        On the inverse transform the shift is undone before transforming,
        making the inverse a true round trip.
    inverse : apply the 1/N-scaled conjugate transform (window must be None).
    """
    x = np.asarray(t, dtype=np.complex128)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for ndim {x.ndim}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if not _is_pow2(n):
        raise ValueError(f"extent along axis {axis} must be a power of two >= 2, got {n}")
    if inverse:
        if window is not None:
            raise ValueError("windowing is a forward-only option")
        if center_shift:
            x = np.fft.ifftshift(x, axes=axis)
        return np.fft.ifft(x, axis=axis)
    if window is not None:
        if window != "hann":
            raise ValueError(f"unknown window {window!r}")
        shape = [1] * x.ndim
        shape[axis] = n
        x = x * hann_window(n).reshape(shape)
    y = np.fft.fft(x, axis=axis)
    if center_shift:
        y = np.fft.fftshift(y, axes=axis)
    return y


# ----------------------------------------------------------------------
# RTEN file IO
# ----------------------------------------------------------------------

def rten_bytes(array: np.ndarray) -> bytes:
    """Serialize a float64 or complex128 array as one RTEN record."""
    arr = np.asarray(array)
    if np.iscomplexobj(arr):
        dtype_code = DTYPE_COMPLEX64PAIR
        arr = np.ascontiguousarray(arr, dtype=np.complex128)
    else:
        dtype_code = DTYPE_REAL64
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr.view(np.float64) if dtype_code else arr)):
        raise ValueError("refusing to serialize non-finite tensor values")
    header = RTEN_MAGIC + struct.pack("<IBI", RTEN_VERSION, dtype_code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype("<c16" if dtype_code else "<f8", copy=False).tobytes()


def write_rten(path, array: np.ndarray) -> None:
    """Write a float64 or complex128 array as an RTEN file (atomically)."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(rten_bytes(array))
    os.replace(tmp, path)


def _read_rten_header(fh):
    magic = fh.read(4)
    if magic != RTEN_MAGIC:
        raise ValueError(f"not an RTEN file (magic {magic!r})")
    version, dtype_code, ndim = struct.unpack("<IBI", fh.read(9))
    if version != RTEN_VERSION:
        raise ValueError(f"unsupported RTEN version {version}")
    if dtype_code not in (DTYPE_REAL64, DTYPE_COMPLEX64PAIR):
        raise ValueError(f"unknown RTEN dtype code {dtype_code}")
    dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    return dtype_code, dims


def read_rten_from(fh) -> np.ndarray:
    """Read one RTEN record from an open binary file handle."""
    dtype_code, dims = _read_rten_header(fh)
    count = int(np.prod(dims)) if dims else 1
    dt = "<c16" if dtype_code == DTYPE_COMPLEX64PAIR else "<f8"
    buf = fh.read(count * 16 if dtype_code else count * 8)
    data = np.frombuffer(buf, dtype=dt, count=count)
    return data.reshape(dims).astype(
        np.complex128 if dtype_code == DTYPE_COMPLEX64PAIR else np.float64
    )


def read_rten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_rten_from(fh)
