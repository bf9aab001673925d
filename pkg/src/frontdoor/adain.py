"""Feature-statistics style transfer.

Stylization re-statisticizes a content feature map so its per-channel
mean and standard deviation match a style's, then optionally walks back
toward the content along a linear interpolation knob.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .tensor import Tensor

FeatureStats = namedtuple("FeatureStats", ["mu", "sigma"])

# divisor floor for degenerate (constant) content channels
EPS_SIGMA = 1e-6


def _as_tensor(z):
    return z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))


def channel_stats(z):
    """Per-channel mean and standard deviation of a feature map.

    Accepts a (C, H, W) map or an (N, C, H, W) batch; stats come back as
    Tensors of shape (C,) or (N, C).  The deviation uses the HW-1
    denominator, so each channel needs at least two spatial positions.
    """
    z = _as_tensor(z)
    if z.ndim not in (3, 4):
        raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {z.shape}")
    h, w = z.shape[-2], z.shape[-1]
    hw = h * w
    if hw < 2:
        raise ValueError(f"need at least 2 spatial positions per channel, got {hw}")
    mu = z.mean(axis=(-2, -1))
    wide = mu.reshape(mu.shape + (1, 1))
    var = ((z - wide) * (z - wide)).sum(axis=(-2, -1)) * (1.0 / (hw - 1))
    return FeatureStats(mu, var.sqrt())


def adain_from_stats(z, style):
    """Restyle a content map to match precomputed style FeatureStats."""
    z = _as_tensor(z)
    content = channel_stats(z)
    if content.mu.shape[-1] != style.mu.shape[-1]:
        raise ValueError(
            f"channel mismatch: content {content.mu.shape[-1]}, "
            f"style {style.mu.shape[-1]}"
        )

    def wide(v):
        v = _as_tensor(v)
        return v.reshape(v.shape + (1, 1))

    denom = wide(content.sigma).clip_min(EPS_SIGMA)
    return wide(style.mu) + wide(style.sigma) * (z - wide(content.mu)) / denom


def adain(z, z_style):
    """mu' + sigma' * (z - mu) / sigma: match z's channel stats to z_style's.

    Spatial sizes may differ between the two maps; channel counts must
    agree.  Differentiable through both arguments.
    """
    return adain_from_stats(z, channel_stats(_as_tensor(z_style)))


def interpolate_style(z_tilde, z, alpha):
    """alpha * z_tilde + (1 - alpha) * z, the content-to-style dial."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    z_tilde = _as_tensor(z_tilde)
    z = _as_tensor(z)
    if z_tilde.shape != z.shape:
        raise ValueError(f"shape mismatch: {z_tilde.shape} vs {z.shape}")
    return z_tilde * alpha + z * (1.0 - alpha)


def channel_stats_arrays(z):
    """channel_stats on a plain (N, C, H, W) array, no graph, dtype kept."""
    hw = z.shape[-2] * z.shape[-1]
    mu = z.mean(axis=(-2, -1))
    var = ((z - mu[..., None, None]) ** 2).sum(axis=(-2, -1)) / (hw - 1)
    return FeatureStats(mu, np.sqrt(var))


def adain_arrays(z, style_mu, style_sigma, alpha):
    """adain_from_stats then interpolate_style on plain arrays.

    The bulk path for stylized view construction: same arithmetic as the
    Tensor ops, computed in z's dtype with per-map style stat rows.
    """
    mu_c, sigma_c = channel_stats_arrays(z)
    denom = np.maximum(sigma_c, EPS_SIGMA)[..., None, None]
    z_tilde = (
        style_mu[..., None, None]
        + style_sigma[..., None, None] * (z - mu_c[..., None, None]) / denom
    )
    return alpha * z_tilde + (1.0 - alpha) * z
