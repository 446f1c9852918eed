"""Discrete band-limited shearlet transform for denoising and edge detection.

The system is cone-adapted: the frequency plane is split into a horizontal
cone (|w1| >= |w2|), a vertical cone, and a low-frequency square. Scale j
uses the dilation a = 4^-j and integer shears k in [-2^j, 2^j] per cone
(2*2^j + 1 shears). Radial windows are Meyer-type and telescope to an exact
partition of unity together with the low-pass, so the frame function

    D(w) = |phi(w)|^2 + sum |psi_{j,k,cone}(w)|^2

satisfies 1 <= D <= 2 everywhere; reconstruction divides by D (dual frame)
and is exact to machine precision. All filters are real and even in w, so
real images produce real coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ImageTooSmall

MIN_IMAGE_SIDE = 32


def _meyer_aux(x: np.ndarray) -> np.ndarray:
    """Smooth 0->1 step on [0, 1] (quartic Meyer auxiliary polynomial)."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 4 * (35.0 - 84.0 * x + 70.0 * x ** 2 - 20.0 * x ** 3)


def _step(u: np.ndarray, a: float, b: float) -> np.ndarray:
    return _meyer_aux((u - a) / (b - a))


@dataclass
class ShearletSystem:
    """Frequency-domain filter bank for one image size."""

    width: int
    height: int
    num_scales: int
    shears_per_scale: int          # 2*2^j+1 at the finest scale, per cone
    filters: np.ndarray            # (n_bands, H, W) real
    lowpass: np.ndarray            # (H, W) real
    band_index: list[tuple[int, str, int]]  # (scale, cone, shear k) per band
    dual_weights: np.ndarray       # (H, W), = 1 / D

    @property
    def n_bands(self) -> int:
        return len(self.filters)

    def finest_band_slice(self) -> slice:
        j = self.num_scales - 1
        first = next(i for i, (s, _, _) in enumerate(self.band_index) if s == j)
        return slice(first, self.n_bands)

    def frame_bounds(self) -> tuple[float, float]:
        d = 1.0 / self.dual_weights
        return float(d.min()), float(d.max())


@dataclass
class ShearletCoefficients:
    """Per-band real coefficient planes plus one low-pass plane."""

    bands: np.ndarray              # (n_bands, H, W)
    lowpass: np.ndarray            # (H, W)
    band_index: list[tuple[int, str, int]]


@dataclass
class EdgeMap:
    """Edge mask with per-pixel orientation index and response strength.

    ``theta`` indexes the finest-scale band list (horizontal cone shears
    followed by vertical cone shears) and is -1 off the edge set.
    """

    is_edge: np.ndarray            # (H, W) bool
    theta: np.ndarray              # (H, W) int, -1 where not edge
    magnitude: np.ndarray          # (H, W) float
    n_orientations: int


def build_system(width: int, height: int, num_scales: int) -> ShearletSystem:
    """Construct the cone-adapted filter bank on the discrete frequency grid."""
    if num_scales < 1:
        raise ValueError("num_scales must be >= 1")
    if min(width, height) < MIN_IMAGE_SIDE or 4 ** num_scales > min(width, height):
        raise ImageTooSmall(
            f"need both sides >= {MIN_IMAGE_SIDE} and 4^scales <= min side; "
            f"got {width}x{height} with {num_scales} scales")

    fx = np.fft.fftfreq(width)
    fy = np.fft.fftfreq(height)
    FX = np.broadcast_to(fx[None, :], (height, width)).astype(np.float64)
    FY = np.broadcast_to(fy[:, None], (height, width)).astype(np.float64)
    u = np.hypot(FX, FY)

    J = num_scales
    boundaries = [0.5 * 4.0 ** (j - (J - 1)) for j in range(J)]

    lowpass = np.cos(0.5 * np.pi * _step(u, boundaries[0] / 4.0, boundaries[0]))

    with np.errstate(divide="ignore", invalid="ignore"):
        slope_h = np.where(FX != 0.0, FY / FX, np.inf)
        slope_v = np.where(FY != 0.0, FX / FY, np.inf)

    filters = []
    band_index = []
    for j in range(J):
        b = boundaries[j]
        radial = np.sin(0.5 * np.pi * _step(u, b / 4.0, b))
        if j < J - 1:
            radial = radial * np.cos(0.5 * np.pi * _step(u, b, boundaries[j + 1]))
        shear_max = 2 ** j
        for cone, slope in (("h", slope_h), ("v", slope_v)):
            for k in range(-shear_max, shear_max + 1):
                t = shear_max * slope - k
                ang = np.where(np.abs(t) <= 1.0,
                               np.cos(0.5 * np.pi * np.where(np.isfinite(t), t, 2.0)),
                               0.0)
                filters.append(radial * ang)
                band_index.append((j, cone, k))

    filters = np.stack(filters)
    # On even-sized grids the Nyquist bin is its own mirror image, which
    # makes the shear slope flip sign along the Nyquist row/column and the
    # filters lose their even symmetry there. Symmetrize explicitly (real
    # input -> real coefficients) and renormalize through the frame.
    mi = (-np.arange(height)) % height
    mj = (-np.arange(width)) % width
    filters = 0.5 * (filters + filters[:, mi][:, :, mj])
    frame = lowpass ** 2 + np.sum(filters ** 2, axis=0)
    if frame.min() <= 0.0:
        raise AssertionError("shearlet frame does not cover the plane")
    return ShearletSystem(width, height, num_scales,
                          2 * 2 ** (J - 1) + 1, filters, lowpass,
                          band_index, 1.0 / frame)


def _check_dims(system: ShearletSystem, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (system.height, system.width):
        raise DimensionMismatch(
            f"image is {image.shape}, system expects "
            f"{(system.height, system.width)}")
    return image


def forward(system: ShearletSystem, image: np.ndarray) -> ShearletCoefficients:
    image = _check_dims(system, image)
    spectrum = np.fft.fft2(image)
    bands = np.real(np.fft.ifft2(spectrum[None, :, :] * system.filters,
                                 axes=(-2, -1)))
    low = np.real(np.fft.ifft2(spectrum * system.lowpass))
    return ShearletCoefficients(bands, low, list(system.band_index))


def inverse(system: ShearletSystem, coeffs: ShearletCoefficients) -> np.ndarray:
    if coeffs.bands.shape != (system.n_bands, system.height, system.width):
        raise DimensionMismatch("coefficient planes do not match the system")
    acc = np.fft.fft2(coeffs.lowpass) * system.lowpass
    acc += np.sum(np.fft.fft2(coeffs.bands, axes=(-2, -1)) * system.filters,
                  axis=0)
    return np.real(np.fft.ifft2(acc * system.dual_weights))


def denoise(system: ShearletSystem, image: np.ndarray,
            threshold_mult: float = 3.0) -> np.ndarray:
    """Hard-threshold band coefficients at mult * sigma and reconstruct.

    sigma is the robust noise estimate median(|c|) / 0.6745 taken over the
    finest-scale coefficients; the low-pass plane passes through untouched.
    The output is clamped to [0, 1].
    """
    if threshold_mult < 0:
        raise ValueError("threshold_mult must be >= 0")
    coeffs = forward(system, image)
    finest = coeffs.bands[system.finest_band_slice()]
    sigma = float(np.median(np.abs(finest))) / 0.6745
    thresh = threshold_mult * sigma
    bands = np.where(np.abs(coeffs.bands) > thresh, coeffs.bands, 0.0)
    out = inverse(system, ShearletCoefficients(bands, coeffs.lowpass,
                                               coeffs.band_index))
    return np.clip(out, 0.0, 1.0)


def detect_edges(system: ShearletSystem, image: np.ndarray,
                 magnitude_quantile: float = 0.95) -> EdgeMap:
    """Mark pixels whose finest-scale shear response is in the top quantile.

    The orientation is the index of the maximizing finest-scale band (ties
    resolved toward the smaller index).
    """
    coeffs = forward(system, image)
    finest = np.abs(coeffs.bands[system.finest_band_slice()])
    magnitude = finest.max(axis=0)
    theta = finest.argmax(axis=0).astype(np.int64)
    cutoff = float(np.quantile(magnitude, magnitude_quantile))
    is_edge = magnitude > cutoff
    theta = np.where(is_edge, theta, -1)
    return EdgeMap(is_edge, theta, magnitude, finest.shape[0])
