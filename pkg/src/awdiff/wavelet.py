"""Undecimated à trous (starlet) transform and an orthonormal Haar DWT."""

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, ParameterError
from .image import as_image, read_tensor, write_tensor

B3_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MAX_SCALES = 8


def mirror_index(idx, n):
    """Map arbitrary integer indices onto ``range(n)`` by whole-sample mirroring.

    The edge sample is not repeated (``d c b | a b c d | c b a``), and indices
    far outside the signal are folded repeatedly with period ``2 * (n - 1)``.
    """
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _check_kernel(taps):
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 1 or taps.size % 2 == 0:
        raise ParameterError("kernel must be a 1D array of odd length")
    return taps


def _filter_axis(data, taps, dilation, axis):
    n = data.shape[axis]
    half = taps.size // 2
    base = np.arange(n)
    out = np.zeros_like(data)
    for k, w in enumerate(taps):
        if w == 0.0:
            continue
        src = mirror_index(base + (k - half) * dilation, n)
        out += w * np.take(data, src, axis=axis)
    return out


def atrous_convolve(img, taps=B3_TAPS, dilation=1):
    """Smooth an image with a separable kernel whose taps are ``dilation`` pixels apart.

    Rows are filtered first, then columns; the boundary is extended by
    whole-sample mirror reflection, so the output has the input's shape.
    """
    if dilation < 1:
        raise ParameterError(f"dilation must be >= 1, got {dilation}")
    img = as_image(img)
    taps = _check_kernel(taps)
    rows = _filter_axis(img, taps, dilation, axis=1)
    return _filter_axis(rows, taps, dilation, axis=0)


@dataclass
class WaveletPyramid:
    """Wavelet planes (finest first) plus the final smooth residual."""

    planes: list
    residual: np.ndarray

    def __post_init__(self):
        if len(self.planes) < 1:
            raise InvariantError("a pyramid needs at least one wavelet plane")
        shape = np.shape(self.residual)
        for s, plane in enumerate(self.planes, start=1):
            if np.shape(plane) != shape:
                raise InvariantError(
                    f"plane {s} has shape {np.shape(plane)}, residual has {shape}"
                )

    @property
    def scales(self):
        return len(self.planes)

    @property
    def shape(self):
        return np.shape(self.residual)

    def as_array(self):
        """Stack into ``(S + 1, H, W)`` with the residual as the last slice."""
        return np.stack(list(self.planes) + [self.residual])

    @classmethod
    def from_array(cls, stack):
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3 or stack.shape[0] < 2:
            raise InvariantError(f"pyramid stack must have shape (S+1, H, W), got {stack.shape}")
        return cls(planes=list(stack[:-1]), residual=stack[-1])

    def save(self, path):
        write_tensor(path, self.as_array())

    @classmethod
    def load(cls, path):
        return cls.from_array(read_tensor(path))


def _check_scales(scales):
    if not 1 <= scales <= MAX_SCALES:
        raise ParameterError(f"scales must lie in [1, {MAX_SCALES}], got {scales}")


def starlet_decompose(img, scales=4):
    """Starlet transform with the B3-spline filter dilated by ``2**(s-1)`` at scale ``s``.

    Parameters
    ----------
    img : array_like (2D)
        Input image.
    scales : int
        Number of wavelet planes, between 1 and 8.

    Returns
    -------
    WaveletPyramid
        ``planes[s-1] = smooth[s-1] - smooth[s]`` and ``residual = smooth[scales]``,
        so the planes plus the residual sum back to ``img``.
    """
    _check_scales(scales)
    smooth = as_image(img)
    planes = []
    for s in range(1, scales + 1):
        coarser = atrous_convolve(smooth, B3_TAPS, dilation=2 ** (s - 1))
        planes.append(smooth - coarser)
        smooth = coarser
    return WaveletPyramid(planes=planes, residual=smooth)


def starlet_reconstruct(pyr):
    """Invert :func:`starlet_decompose` by summing the planes onto the residual."""
    out = np.array(pyr.residual, dtype=np.float64)
    for plane in pyr.planes:
        if np.shape(plane) != out.shape:
            raise InvariantError("pyramid planes differ in shape")
        out = out + plane
    return out


def encoder_features(img, scales=4):
    """Fixed multi-scale feature extractor used to condition the denoiser.

    This is the starlet decomposition itself; the planes become extra input
    channels of the denoiser and nothing here is trainable.
    """
    return starlet_decompose(img, scales)


# -- Haar DWT ---------------------------------------------------------------

@dataclass
class DwtCoefficients:
    """Multi-level 2D Haar coefficients.

    ``details[l]`` holds the ``(LH, HL, HH)`` bands of level ``l + 1``; ``approx``
    is the final LL band. Level ``l`` bands have dims ``(H / 2**l, W / 2**l)``.
    """

    approx: np.ndarray
    details: list

    @property
    def levels(self):
        return len(self.details)

    def check(self):
        shape = np.shape(self.approx)
        for level in range(self.levels, 0, -1):
            bands = self.details[level - 1]
            if len(bands) != 3 or any(np.shape(b) != shape for b in bands):
                raise InvariantError(f"level {level} detail bands inconsistent with shape {shape}")
            shape = (2 * shape[0], 2 * shape[1])
        return shape


def _haar_analysis(x):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0  # horizontal differences: responds to vertical edges
    hl = (a + b - c - d) / 2.0  # vertical differences: responds to horizontal edges
    hh = (a - b - c + d) / 2.0
    return ll, (lh, hl, hh)


def _haar_synthesis(ll, bands):
    lh, hl, hh = bands
    h, w = ll.shape
    out = np.empty((2 * h, 2 * w))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 0::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def dwt2_forward(img, levels=1):
    """Orthonormal multi-level Haar analysis, recursing on the LL band."""
    img = as_image(img)
    if levels < 1:
        raise ParameterError(f"levels must be >= 1, got {levels}")
    h, w = img.shape
    if h % 2 ** levels or w % 2 ** levels:
        raise ParameterError(f"image dims {h}x{w} not divisible by 2**{levels}")
    details = []
    ll = img
    for _ in range(levels):
        ll, bands = _haar_analysis(ll)
        details.append(bands)
    return DwtCoefficients(approx=ll, details=details)


def dwt2_inverse(coeffs):
    """Perfect-reconstruction inverse of :func:`dwt2_forward`."""
    coeffs.check()
    ll = np.asarray(coeffs.approx, dtype=np.float64)
    for bands in reversed(coeffs.details):
        ll = _haar_synthesis(ll, [np.asarray(b, dtype=np.float64) for b in bands])
    return ll
