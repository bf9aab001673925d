"""Fourier amplitude-phase stylization.

An image decomposes per channel into amplitude A and phase P with the
convention F(x) = A * exp(-j*P).  Swapping amplitude content between two
images while keeping the phase moves low-level style without touching
structure.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

SpectralImage = namedtuple("SpectralImage", ["amplitude", "phase"])


def dft2(image):
    """Full unshifted 2-D DFT over the trailing two axes, split into
    amplitude and phase (DC at index 0)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2 or image.shape[-2] < 1 or image.shape[-1] < 1:
        raise ValueError(f"need at least a 1x1 channel, got shape {image.shape}")
    spectrum = np.fft.fft2(image)
    # F = A * exp(-jP), so P is the negated numpy angle
    return SpectralImage(np.abs(spectrum), -np.angle(spectrum))


def idft2(spectral):
    """Invert dft2; the imaginary residue of the inverse is discarded."""
    amplitude = np.asarray(spectral.amplitude, dtype=np.float64)
    phase = np.asarray(spectral.phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ValueError(
            f"amplitude/phase shape mismatch: {amplitude.shape} vs {phase.shape}"
        )
    spectrum = amplitude * np.exp(-1j * phase)
    return np.fft.ifft2(spectrum).real


def amplitude_mix(x, x_style, lam):
    """Blend (1-lam) of x's amplitude with lam of x_style's, keep x's
    phase, invert, and clamp pixels to [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = np.asarray(x, dtype=np.float64)
    x_style = np.asarray(x_style, dtype=np.float64)
    if x.shape != x_style.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_style.shape}")
    content = dft2(x)
    style = dft2(x_style)
    mixed = (1.0 - lam) * content.amplitude + lam * style.amplitude
    out = idft2(SpectralImage(mixed, content.phase))
    return np.clip(out, 0.0, 1.0)


def sample_lambda(eta, rng):
    """Draw the mix weight uniformly from [0, eta]."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return float(rng.uniform(0.0, eta))
