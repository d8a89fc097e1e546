"""Discrete spectra, band energies and reference low-pass filters.

Signals are uniform samples over the unit interval, so DFT bin ``k`` is a
frequency of ``k`` cycles per unit length. Magnitudes are unnormalized
(``|X_k|``): a constant ``c`` over ``N`` samples has ``|X_0| = c N`` and a unit
sine has two peaks of ``N / 2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    n: int
    sample_rate: float = None  # samples per unit length; defaults to n

    def __post_init__(self):
        if self.sample_rate is None:
            object.__setattr__(self, "sample_rate", float(self.n))

    @property
    def frequencies(self) -> np.ndarray:
        """Signed frequency of every bin, cycles per unit length."""
        return np.fft.fftfreq(self.n, d=1.0 / self.sample_rate)

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def amplitude(self, freq: float) -> float:
        """Amplitude of a real sinusoid at ``freq`` (bin magnitude times 2/N)."""
        k = int(round(freq * self.n / self.sample_rate)) % self.n
        scale = 1.0 if k == 0 or 2 * k == self.n else 2.0
        return float(scale * self.magnitudes[k] / self.n)

    def one_sided(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-redundant bins ``0..N//2`` with their frequencies."""
        m = self.n // 2 + 1
        return np.arange(m) * self.sample_rate / self.n, self.magnitudes[:m]


def dft_spectrum(samples, sample_rate: float | None = None) -> Spectrum:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ConfigError("a spectrum needs at least 2 samples")
    return Spectrum(np.abs(np.fft.fft(x)), x.size, sample_rate)


def band_energy(s: Spectrum, lo: float, hi: float, include_dc: bool = False, closed: str = "left") -> float:
    """Fraction of spectral energy at frequencies between ``lo`` and ``hi``.

    Frequencies are folded to ``|f|``. ``closed`` picks which band ends are
    inclusive: ``"left"`` for ``[lo, hi)``, ``"right"`` for ``(lo, hi]``,
    ``"both"`` for ``[lo, hi]``.
    """
    if not lo < hi:
        raise ConfigError(f"band needs lo < hi, got [{lo}, {hi}]")
    if s.n == 0 or s.magnitudes.size == 0:
        raise ConfigError("empty spectrum")
    f = np.abs(s.frequencies)
    energy = s.magnitudes**2
    if not include_dc:
        energy = np.where(f == 0, 0.0, energy)
    total = energy.sum()
    if total == 0:
        return 0.0
    lo_ok = f >= lo if closed in ("left", "both") else f > lo
    hi_ok = f <= hi if closed in ("right", "both") else f < hi
    return float(energy[lo_ok & hi_ok].sum() / total)


def _filter_axis(x: np.ndarray, axis: int, cutoff: float, kind: str) -> np.ndarray:
    n = x.shape[axis]
    f = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    if kind == "ideal":
        response = (f <= cutoff).astype(np.float64)
    else:
        # triangle kernel of the lattice whose Nyquist frequency is the cutoff
        response = np.sinc(f / (2.0 * cutoff)) ** 2
    shape = [1] * x.ndim
    shape[axis] = n
    return np.real(np.fft.ifft(np.fft.fft(x, axis=axis) * response.reshape(shape), axis=axis))


def lowpass_reference(samples, cutoff: float, filter: str = "ideal") -> np.ndarray:
    """Low-pass filter uniform samples over the unit interval (or unit square).

    ``ideal`` zeroes every bin above ``cutoff`` cycles; ``linear`` multiplies
    bins by the triangle-kernel response ``sinc^2(f / r)`` of the lattice with
    resolution ``r = 2 * cutoff``. Multi-dimensional inputs are filtered
    separably along every axis.
    """
    if filter not in ("ideal", "linear"):
        raise ConfigError(f"unknown filter {filter!r}; expected 'ideal' or 'linear'")
    x = np.asarray(samples, dtype=np.float64)
    if cutoff <= 0:
        raise ConfigError("cutoff must be positive")
    if cutoff > min(x.shape) / 2.0:
        warnings.warn(f"cutoff {cutoff} above the sampling Nyquist frequency; returning input")
        return x.copy()
    out = x
    for axis in range(x.ndim):
        out = _filter_axis(out, axis, cutoff, filter)
    return out


def radial_spectrum(image) -> tuple[np.ndarray, np.ndarray]:
    """Radially binned magnitude of a 2-D spectrum: (radius in cycles, mean magnitude)."""
    img = np.asarray(image, dtype=np.float64)
    mag = np.abs(np.fft.fft2(img))
    fy = np.fft.fftfreq(img.shape[0], d=1.0 / img.shape[0])
    fx = np.fft.fftfreq(img.shape[1], d=1.0 / img.shape[1])
    rad = np.rint(np.hypot(fy[:, None], fx[None, :])).astype(np.int64)
    counts = np.bincount(rad.ravel())
    sums = np.bincount(rad.ravel(), weights=mag.ravel())
    keep = counts > 0
    return np.arange(len(counts))[keep], sums[keep] / counts[keep]
