"""Neural style-transfer model: small conv encoder, AdaIN, mirror decoder.

The encoder maps 3xHxW images to 64-channel features at H/4 x W/4: two
stride-2 conv blocks then a stride-1 block that deepens the channels.
The decoder mirrors it back with nearest-neighbor upsampling.
Stylization restyles encoder features toward a style's channel stats and
decodes.  Training minimizes a content loss in feature space, a
layerwise style-statistics loss, and a pixel reconstruction anchor that
pins the autoencoder pathway to the data.
"""

from __future__ import annotations

import numpy as np

from .adain import FeatureStats, adain_from_stats, channel_stats, interpolate_style
from .checkpoint import load_tensors, save_tensors
from .nn import Conv2d, Module
from .optim import SGD, NonFiniteGradient
from .tensor import Tensor, no_grad, upsample_nearest

CONTENT_WEIGHT = 1.0
STYLE_WEIGHT = 4.0
RECON_WEIGHT = 8.0


class NstEncoder(Module):
    def __init__(self, rng):
        self.conv1 = Conv2d(rng, 3, 16, stride=2)
        self.conv2 = Conv2d(rng, 16, 32, stride=2)
        self.conv3 = Conv2d(rng, 32, 64, stride=1)

    def features(self, x):
        """Post-activation maps of all three blocks, shallow to deep."""
        h1 = self.conv1(x).relu()
        h2 = self.conv2(h1).relu()
        h3 = self.conv3(h2).relu()
        return [h1, h2, h3]

    def forward(self, x):
        return self.features(x)[-1]


class NstDecoder(Module):
    """Mirror of the encoder: a conv at bottleneck resolution, then
    upsample by 2 before each of the two blocks that undo the strides."""

    def __init__(self, rng):
        self.conv1 = Conv2d(rng, 64, 32)
        self.conv2 = Conv2d(rng, 32, 16)
        self.conv3 = Conv2d(rng, 16, 3)

    def forward(self, z):
        h = self.conv1(z).relu()
        h = self.conv2(upsample_nearest(h, 2)).relu()
        return self.conv3(upsample_nearest(h, 2))


class NstModel(Module):
    def __init__(self, rng):
        self.encoder = NstEncoder(rng)
        self.decoder = NstDecoder(rng)
        self.trained = False


def save_nst(path, model):
    named = dict(model.state_dict())
    named["trained"] = np.array(1.0 if model.trained else 0.0)
    save_tensors(path, named)


def load_nst(path, rng):
    named = load_tensors(path)
    trained = named.pop("trained", np.array(0.0))
    model = NstModel(rng)
    model.load_state_dict(named)
    model.trained = bool(float(trained))
    return model


def _as_batch(images):
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise ValueError(f"expected (3,H,W) or (N,3,H,W) images, got shape {arr.shape}")


def encode(model, images, batch_size=256):
    """Deepest encoder features of images, without building a graph."""
    arr, squeeze = _as_batch(images)
    out = []
    with no_grad():
        for i in range(0, len(arr), batch_size):
            out.append(model.encoder(Tensor(arr[i : i + batch_size])).data)
    feats = np.concatenate(out, axis=0)
    return feats[0] if squeeze else feats


def style_stats(model, images, batch_size=256):
    """Channel stats of the deepest encoder features, one row per image."""
    feats = encode(model, images, batch_size)
    if feats.ndim == 3:
        feats = feats[None]
    with no_grad():
        stats = channel_stats(Tensor(feats))
    return stats.mu.data, stats.sigma.data


def restyle_features(content_features, style_mu, style_sigma, alpha):
    """Shift encoder features toward per-image style stats, blended by
    alpha.  Pure feature-space arithmetic; no model involved."""
    with no_grad():
        z = Tensor(np.asarray(content_features, dtype=np.float64))
        mu = Tensor(np.asarray(style_mu, dtype=np.float64).reshape(len(z.data), -1))
        sigma = Tensor(
            np.asarray(style_sigma, dtype=np.float64).reshape(len(z.data), -1)
        )
        z_tilde = adain_from_stats(z, FeatureStats(mu, sigma))
        return interpolate_style(z_tilde, z, alpha).data


def decode_features(model, features, batch_size=256):
    """Raw decoder output for already-encoded features.  No clamping, so
    differences between two decodes cancel exactly."""
    arr = np.asarray(features, dtype=np.float64)
    out = []
    with no_grad():
        for i in range(0, len(arr), batch_size):
            out.append(model.decoder(Tensor(arr[i : i + batch_size])).data)
    return np.concatenate(out, axis=0)


def _conv32(x, layer):
    # kernel 3, padding 1; stride folds into the window strides
    w, b, stride = layer
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oh = (h + 2 - 3) // stride + 1
    ow = (wd + 2 - 3) // stride + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, 3, 3, oh, ow), (s0, s1, s2, s3, s2 * stride, s3 * stride)
    )
    cols = win.reshape(n, c * 9, oh * ow)
    out = np.matmul(w.reshape(len(w), -1), cols) + b[:, None]
    return out.reshape(n, len(w), oh, ow)


def _up2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


class Nst32:
    """Frozen single-precision copy of a trained model for bulk encoding
    and decoding without a graph.  Half the arithmetic cost of the
    double-precision path; outputs agree to float32 round-off."""

    def __init__(self, model):
        def layer(conv):
            return (
                np.ascontiguousarray(conv.weight.data, dtype=np.float32),
                conv.bias.data.astype(np.float32),
                conv.stride,
            )

        e, d = model.encoder, model.decoder
        self.enc = [layer(c) for c in (e.conv1, e.conv2, e.conv3)]
        self.dec = [layer(c) for c in (d.conv1, d.conv2, d.conv3)]

    def encode(self, images, batch_size=256):
        arr = np.asarray(images, dtype=np.float32)
        out = []
        for i in range(0, len(arr), batch_size):
            h = np.maximum(_conv32(arr[i : i + batch_size], self.enc[0]), 0.0)
            h = np.maximum(_conv32(h, self.enc[1]), 0.0)
            out.append(np.maximum(_conv32(h, self.enc[2]), 0.0))
        return np.concatenate(out, axis=0)

    def decode(self, features, batch_size=256):
        arr = np.asarray(features, dtype=np.float32)
        out = []
        for i in range(0, len(arr), batch_size):
            h = np.maximum(_conv32(arr[i : i + batch_size], self.dec[0]), 0.0)
            h = np.maximum(_conv32(_up2(h), self.dec[1]), 0.0)
            out.append(_conv32(_up2(h), self.dec[2]))
        return np.concatenate(out, axis=0)


def decode_with_style(model, content_features, style_mu, style_sigma, alpha):
    """Restyle already-encoded content toward per-image style stats and
    decode to clamped images.  The workhorse of stylized training data."""
    feats, squeeze = (
        (content_features[None], True)
        if np.asarray(content_features).ndim == 3
        else (content_features, False)
    )
    mixed = restyle_features(feats, style_mu, style_sigma, alpha)
    out = np.clip(decode_features(model, mixed), 0.0, 1.0)
    return out[0] if squeeze else out


def nst_stylize(model, x, x_style, alpha):
    """Full stylization: encode both, restyle by the style's stats, blend
    by alpha, decode, clamp to [0,1]."""
    if not model.trained:
        raise RuntimeError("nst model is untrained; call train_nst first")
    arr, squeeze = _as_batch(x)
    style_arr, _ = _as_batch(x_style)
    if style_arr.shape[1] != arr.shape[1]:
        raise ValueError(
            f"channel mismatch: content {arr.shape[1]}, style {style_arr.shape[1]}"
        )
    mu, sigma = style_stats(model, style_arr)
    if len(style_arr) == 1 and len(arr) > 1:
        mu = np.repeat(mu, len(arr), axis=0)
        sigma = np.repeat(sigma, len(arr), axis=0)
    out = decode_with_style(model, encode(model, arr), mu, sigma, alpha)
    return out[0] if squeeze else out


def _stats_loss(got, want):
    d_mu = got.mu - want.mu.detach()
    d_sigma = got.sigma - want.sigma.detach()
    return (d_mu * d_mu).mean() + (d_sigma * d_sigma).mean()


def train_nst(
    model,
    images_by_domain,
    epochs,
    lr,
    rng,
    batch_size=32,
    momentum=0.9,
    content_weight=CONTENT_WEIGHT,
    style_weight=STYLE_WEIGHT,
    recon_weight=RECON_WEIGHT,
):
    """Fit encoder and decoder on a multi-domain image pool.

    Each step stylizes a content batch toward a style batch's stats at
    full strength and also auto-reconstructs the content batch.  Returns
    per-epoch mean losses; raises on divergence.
    """
    if len(images_by_domain) < 2:
        raise ValueError(
            f"need at least 2 source domains, got {len(images_by_domain)}"
        )
    parts = []
    for v in images_by_domain.values():
        arr = np.asarray(v)
        parts.append(arr / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64))
    pool = np.concatenate(parts, axis=0)
    opt = SGD(model.parameters(), lr=lr, momentum=momentum)
    # early full-rate momentum steps shear off relu channels for good;
    # a short quarter-rate warmup keeps them alive
    warmup = max(1, epochs // 10)
    history = []
    for epoch in range(epochs):
        opt.lr = lr * 0.25 if epoch < warmup else lr
        content_order = rng.permutation(len(pool))
        style_order = rng.permutation(len(pool))
        total, batches = 0.0, 0
        for i in range(0, len(pool), batch_size):
            x = Tensor(pool[content_order[i : i + batch_size]])
            x_style = Tensor(pool[style_order[i : i + batch_size]])
            # restyled features are a fixed target: detach both the style
            # stats and the adain output so no shortcut through the target
            with no_grad():
                style_feats = model.encoder.features(x_style)
                z_tilde = adain_from_stats(
                    model.encoder(x), channel_stats(style_feats[-1])
                )
            decoded = model.decoder(z_tilde)
            decoded_feats = model.encoder.features(decoded)
            d_content = decoded_feats[-1] - z_tilde
            loss = content_weight * (d_content * d_content).mean()
            for got, want in zip(decoded_feats, style_feats):
                loss = loss + style_weight * _stats_loss(
                    channel_stats(got), channel_stats(want)
                )
            recon = model.decoder(model.encoder(x))
            d_recon = recon - x
            loss = loss + recon_weight * (d_recon * d_recon).mean()
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"nst training diverged at epoch {epoch}: loss={value}"
                )
            model.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NonFiniteGradient as err:
                raise RuntimeError(
                    f"nst training diverged at epoch {epoch}: {err}"
                ) from err
            total += value
            batches += 1
        history.append(total / batches)
    model.trained = True
    return history
