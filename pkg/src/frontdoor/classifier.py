"""Interventional image classifier.

Predictions marginalize the style factor: the content image is re-styled
K ways (feature-statistics transfer, Fourier amplitude mixing, or both)
and the class probabilities of the restyled views are averaged, then
blended with the plain prediction by beta.  The same construction
defines the training losses and the inference rule.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .bench import generate
from .fourier import SpectralImage, dft2, idft2, sample_lambda
from .nn import Conv2d, Dense, Module
from .adain import adain_arrays, channel_stats_arrays
from .nst import (
    Nst32,
    NstModel,
    decode_features,
    encode,
    restyle_features,
    style_stats,
    train_nst,
)
from .optim import SGD, NonFiniteGradient, schedule_lr
from .rng import stream
from .tensor import Tensor, nll_probs, no_grad, softmax

STYLE_METHODS = ("fast", "faft", "fagt")
BATCH_SIZE = 32
# the style model needs palette and texture statistics, not the corpus
NST_POOL_CAP = 160


class DivergenceError(RuntimeError):
    pass


class Classifier(Module):
    """Three stride-2 conv blocks and a dense head; rows of forward()
    are class probabilities."""

    def __init__(self, rng, classes=4, size=32, width=8):
        if size % 8 != 0:
            raise ValueError(f"image size must be divisible by 8, got {size}")
        self.conv1 = Conv2d(rng, 3, width, stride=2)
        self.conv2 = Conv2d(rng, width, 2 * width, stride=2)
        self.conv3 = Conv2d(rng, 2 * width, 4 * width, stride=2)
        cell = size // 8
        self.head = Dense(rng, 4 * width * cell * cell, classes)
        self.classes = classes

    def logits(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        h = self.conv1(x).relu()
        h = self.conv2(h).relu()
        h = self.conv3(h).relu()
        return self.head(h.reshape(len(h.data), -1))

    def forward(self, x):
        return softmax(self.logits(x))


class StylePool:
    """Style images grouped by source domain; the held-out domain never
    appears here."""

    def __init__(self, images_by_domain):
        self.by_domain = {}
        for name in sorted(images_by_domain):
            arr = np.asarray(images_by_domain[name])
            if arr.dtype == np.uint8:
                arr = arr / 255.0
            else:
                arr = arr.astype(np.float64)
            if len(arr) == 0:
                raise ValueError(f"style domain {name!r} contributes no images")
            self.by_domain[name] = arr
        self.domains = tuple(self.by_domain)
        self._offsets = {}
        start = 0
        for name in self.domains:
            self._offsets[name] = start
            start += len(self.by_domain[name])
        self._flat = (
            np.concatenate(list(self.by_domain.values()), axis=0)
            if self.by_domain
            else np.zeros((0, 3, 0, 0))
        )

    def __len__(self):
        return len(self._flat)


def _style_indices(pool, k, strategy, rng):
    """Flat pool indices for one draw of k styles."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(pool) == 0:
        raise RuntimeError("empty style pool")
    if strategy == "random":
        return rng.integers(0, len(pool), size=k)
    if strategy == "domain-balance":
        order = [pool.domains[i] for i in rng.permutation(len(pool.domains))]
        picks = []
        for j in range(k):
            name = order[j % len(order)]
            picks.append(pool._offsets[name] + rng.integers(0, len(pool.by_domain[name])))
        return np.array(picks)
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def sample_styles(pool, k, strategy, rng):
    """Draw k style images: 'random' is uniform over the pool, while
    'domain-balance' round-robins the domains in a shuffled order and
    draws uniformly within each."""
    return pool._flat[_style_indices(pool, k, strategy, rng)]


DoPrediction = namedtuple("DoPrediction", ["content_probs", "style_probs", "blended"])


def _as_float_batch(x):
    arr = np.asarray(x)
    arr = arr / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise ValueError(f"expected (3,H,W) or (N,3,H,W) images, got shape {arr.shape}")


def _require_trained_nst(nst_model):
    if nst_model is None or not nst_model.trained:
        raise RuntimeError("stylization needs a trained nst model")


def _adain_views(nst_model, x, styles, alpha):
    """Re-style every (sample, style) pair in one pass.

    styles has shape (N, K, 3, H, W); result matches.  Each view is the
    sample plus the decoder's style delta: decoding restyled features
    minus decoding the features untouched.  Reconstruction error cancels,
    so a zero-strength restyle returns the sample exactly, and with a
    perfect autoencoder this is plain stylized decoding.
    """
    _require_trained_nst(nst_model)
    n, k = styles.shape[:2]
    feats = encode(nst_model, x)
    recon = decode_features(nst_model, feats)
    rep = np.repeat(feats, k, axis=0)
    flat = styles.reshape(n * k, *styles.shape[2:])
    mu, sigma = style_stats(nst_model, flat)
    mixed = restyle_features(rep, mu, sigma, alpha)
    delta = decode_features(nst_model, mixed) - np.repeat(recon, k, axis=0)
    views = np.clip(np.repeat(x, k, axis=0) + delta, 0.0, 1.0)
    return views.reshape(n, k, *x.shape[1:])


def _fourier_views(x, styles, eta, rng):
    """Amplitude-mixed views; a fresh mixing strength is drawn for every
    (sample, style) pair, sample-major, and the whole batch shares one
    transform round trip."""
    n, k = styles.shape[:2]
    lam = np.array(
        [[sample_lambda(eta, rng) for _ in range(k)] for _ in range(n)]
    ).reshape(n, k, 1, 1, 1)
    content = dft2(x[:, None])
    style = dft2(styles)
    mixed = (1.0 - lam) * content.amplitude + lam * style.amplitude
    phase = np.broadcast_to(content.phase, mixed.shape)
    return np.clip(idft2(SpectralImage(mixed, phase)), 0.0, 1.0)


class _StyleEngine:
    """Per-fold working set for styled training: channel statistics for
    every pool image are computed once, and content features plus their
    plain reconstructions are reused across styles, so a batch of views
    costs one single-precision decoder pass instead of repeated encoder
    passes."""

    def __init__(self, method, pool, nst_model, alpha, eta):
        if pool is None or len(pool) == 0:
            raise ValueError("style methods need a populated style pool")
        self.method = method
        self.pool = pool
        self.alpha = alpha
        self.eta = eta
        if method in ("fast", "fagt"):
            _require_trained_nst(nst_model)
            self.rt = Nst32(nst_model)
            self.mu, self.sigma = channel_stats_arrays(self.rt.encode(pool._flat))

    def content_cache(self, x):
        """(features, reconstruction) of x, or None when no view family
        needs the encoder."""
        if self.method == "faft":
            return None
        feats = self.rt.encode(x)
        return feats, self.rt.decode(feats)

    def view_groups(self, x, cache, style_idx, rng):
        groups = []
        n, k = style_idx.shape
        if self.method in ("fast", "fagt"):
            feats, recon = cache
            rep = np.repeat(feats, k, axis=0)
            flat = style_idx.reshape(-1)
            mixed = adain_arrays(rep, self.mu[flat], self.sigma[flat], self.alpha)
            delta = self.rt.decode(mixed) - np.repeat(recon, k, axis=0)
            views = np.clip(np.repeat(x, k, axis=0) + delta, 0.0, 1.0)
            groups.append(views.reshape(n, k, *x.shape[1:]))
        if self.method in ("faft", "fagt"):
            groups.append(_fourier_views(x, self.pool._flat[style_idx], self.eta, rng))
        return groups


def _mean_probs(groups):
    total = groups[0]
    for g in groups[1:]:
        total = total + g
    return total * (1.0 / len(groups))


def predict_do(F, x, styles, method, alpha, eta, beta, nst_model, rng):
    """Interventional prediction for one image or a batch, with a shared
    style list: blend F(x) with the mean prediction over restyled views.

    F is called on the content batch first, then once per view in order.
    """
    if method not in STYLE_METHODS:
        raise ValueError(f"method must be one of {', '.join(STYLE_METHODS)}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0,1], got {beta}")
    batch, single = _as_float_batch(x)
    content = F(batch)
    if beta == 1.0:
        dp = DoPrediction(content, [], content)
        return _squeeze_dp(dp) if single else dp
    style_arr = np.asarray(styles)
    style_arr = (
        style_arr / 255.0
        if style_arr.dtype == np.uint8
        else style_arr.astype(np.float64)
    )
    if style_arr.ndim != 4 or len(style_arr) < 1:
        raise ValueError("styles must be a nonempty list of (3,H,W) images")
    tiled = np.broadcast_to(
        style_arr[None], (len(batch),) + style_arr.shape
    ).copy()
    views = []
    if method in ("fast", "fagt"):
        views.append(_adain_views(nst_model, batch, tiled, alpha))
    if method in ("faft", "fagt"):
        views.append(_fourier_views(batch, tiled, eta, rng))
    style_probs = [F(v[:, j]) for v in views for j in range(v.shape[1])]
    blended = content * beta + _mean_probs(style_probs) * (1.0 - beta)
    dp = DoPrediction(content, style_probs, blended)
    return _squeeze_dp(dp) if single else dp


def _squeeze_dp(dp):
    def one(p):
        return Tensor(p.data[0]) if isinstance(p, Tensor) else np.asarray(p)[0]

    return DoPrediction(
        one(dp.content_probs), [one(p) for p in dp.style_probs], one(dp.blended)
    )


def predict_label(do_prediction):
    """Argmax of the blended probabilities; ties go to the lowest index."""
    blended = do_prediction.blended
    arr = blended.data if isinstance(blended, Tensor) else np.asarray(blended)
    idx = np.argmax(arr, axis=-1)
    return int(idx) if arr.ndim == 1 else idx


def _prep_batch(batch):
    images, labels = batch
    x, _ = _as_float_batch(images)
    y = np.asarray(labels)
    if len(x) == 0:
        raise ValueError("empty batch")
    return x, y


def _per_sample_styles(pool, k, strategy, rng, n):
    return np.stack([sample_styles(pool, k, strategy, rng) for _ in range(n)])


def _index_matrix(pool, k, strategy, rng, n):
    return np.stack([_style_indices(pool, k, strategy, rng) for _ in range(n)])


def _finite_or_abort(loss, what):
    if not np.isfinite(loss.data):
        raise DivergenceError(f"{what} produced a non-finite loss")
    return loss


def _views_for(method, x, styles, alpha, eta, nst_model, rng):
    groups = []
    if method in ("fast", "fagt"):
        groups.append(_adain_views(nst_model, x, styles, alpha))
    if method in ("faft", "fagt"):
        groups.append(_fourier_views(x, styles, eta, rng))
    return groups


def _blend_batch(F, x, view_groups, beta):
    content = F(x)
    groups = [F(v[:, j]) for v in view_groups for j in range(v.shape[1])]
    return content * beta + _mean_probs(groups) * (1.0 - beta)


def _loss_and_blend(
    F, method, x, y, pool, alpha, eta, beta, k, nst_model, rng, strategy,
    engine=None, cache=None,
):
    if method == "erm" or beta == 1.0:
        probs = F(x)
        return _finite_or_abort(nll_probs(probs, y), f"{method} loss"), probs
    if engine is None:
        styles = _per_sample_styles(pool, k, strategy, rng, len(x))
        groups = _views_for(method, x, styles, alpha, eta, nst_model, rng)
    else:
        idx = _index_matrix(pool, k, strategy, rng, len(x))
        groups = engine.view_groups(x, cache, idx, rng)
    blended = _blend_batch(F, x, groups, beta)
    return _finite_or_abort(nll_probs(blended, y), f"{method} loss"), blended


def loss_fast(F, batch, pool, alpha, beta, k, nst_model, rng, strategy="domain-balance"):
    """Cross-entropy of the beta-blend between F(x) and the mean
    prediction over k feature-statistics restylings, fresh per sample."""
    x, y = _prep_batch(batch)
    return _loss_and_blend(
        F, "fast", x, y, pool, alpha, 0.0, beta, k, nst_model, rng, strategy
    )[0]


def loss_faft(F, batch, pool, eta, beta, k, nst_model, rng, strategy="domain-balance"):
    """As loss_fast with Fourier amplitude mixing; eta bounds the mixing
    strength draws.  nst_model is accepted for signature parity, unused."""
    x, y = _prep_batch(batch)
    return _loss_and_blend(
        F, "faft", x, y, pool, 0.0, eta, beta, k, nst_model, rng, strategy
    )[0]


def loss_fagt(
    F, batch, pool, alpha, eta, beta, k, nst_model, rng, strategy="domain-balance"
):
    """Both restyling families on the same k styles per sample: the mean
    runs over 2k views before the blend."""
    x, y = _prep_batch(batch)
    return _loss_and_blend(
        F, "fagt", x, y, pool, alpha, eta, beta, k, nst_model, rng, strategy
    )[0]


def _split_arrays(split):
    if hasattr(split, "images"):
        return split.images, split.labels
    images, labels = split
    return images, labels


def _accuracy(model, images, labels, config, pool, nst_model, rng, engine=None, chunk=256):
    """Held-out accuracy under the same k-style interventional rule used
    in training; erm and beta=1 fall back to plain argmax."""
    x, _ = _as_float_batch(images)
    y = np.asarray(labels)
    plain = config.method == "erm" or config.beta == 1.0
    if not plain and engine is None:
        engine = _StyleEngine(config.method, pool, nst_model, config.alpha, config.eta)
    cache = None if plain else engine.content_cache(x)
    hits = 0
    with no_grad():
        for i in range(0, len(x), chunk):
            xb, yb = x[i : i + chunk], y[i : i + chunk]
            if plain:
                blended = model(xb)
            else:
                idx = _index_matrix(pool, config.k, config.sampling, rng, len(xb))
                cb = None if cache is None else (cache[0][i : i + chunk], cache[1][i : i + chunk])
                blended = _blend_batch(
                    model, xb, engine.view_groups(xb, cb, idx, rng), config.beta
                )
            hits += int((np.argmax(blended.data, axis=-1) == yb).sum())
    return hits / len(x)


def train(config, data, nst_model=None, scope=("classifier",), eval_every=1, engine=None):
    """Minibatch SGD on the configured loss; returns the classifier and
    one metrics row per epoch.

    data maps 'train'/'val'/'test' to (images, labels) pairs or splits,
    and 'style_pool' to a StylePool for the style methods.  On a
    non-finite loss or gradient, training stops and the parameters roll
    back to the end of the last finished epoch.
    """
    x_train, y_train = _prep_batch(_split_arrays(data["train"]))
    pool = data.get("style_pool")
    styled = config.method in STYLE_METHODS and config.beta < 1.0
    if styled and engine is None:
        engine = _StyleEngine(config.method, pool, nst_model, config.alpha, config.eta)
    cache_train = engine.content_cache(x_train) if styled else None
    classes = int(np.max(y_train)) + 1
    model = Classifier(
        stream(config.seed, *scope, "init"), classes=classes, size=x_train.shape[-1]
    )
    order_rng = stream(config.seed, *scope, "batches")
    style_rng = stream(config.seed, *scope, "styles")
    opt = SGD(
        model.parameters(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    snapshot = model.state_dict()
    metrics = []
    n = len(x_train)
    for epoch in range(config.epochs):
        opt.lr = schedule_lr(config.schedule, config.lr, epoch, config.epochs)
        order = order_rng.permutation(n)
        total, batches, hits = 0.0, 0, 0
        diverged = False
        for i in range(0, n, BATCH_SIZE):
            idx = order[i : i + BATCH_SIZE]
            xb, yb = x_train[idx], y_train[idx]
            try:
                loss, blended = _loss_and_blend(
                    model,
                    config.method,
                    xb,
                    yb,
                    pool,
                    config.alpha,
                    config.eta,
                    config.beta,
                    config.k,
                    nst_model,
                    style_rng,
                    config.sampling,
                    engine=engine,
                    cache=None
                    if cache_train is None
                    else (cache_train[0][idx], cache_train[1][idx]),
                )
                model.zero_grad()
                loss.backward()
                opt.step()
            except (DivergenceError, NonFiniteGradient):
                diverged = True
                break
            total += float(loss.data)
            batches += 1
            hits += int((np.argmax(blended.data, axis=-1) == yb).sum())
        if diverged:
            model.load_state_dict(snapshot)
            metrics.append({"epoch": epoch, "diverged": True})
            break
        snapshot = model.state_dict()
        row = {
            "epoch": epoch,
            "train_loss": total / batches,
            "train_acc": hits / n,
        }
        if (epoch + 1) % eval_every == 0 or epoch == config.epochs - 1:
            eval_rng = stream(config.seed, *scope, "eval", epoch)
            if "val" in data:
                xv, yv = _split_arrays(data["val"])
                row["val_acc"] = _accuracy(
                    model, xv, yv, config, pool, nst_model, eval_rng, engine
                )
            if "test" in data:
                xt, yt = _split_arrays(data["test"])
                row["test_acc"] = _accuracy(
                    model, xt, yt, config, pool, nst_model, eval_rng, engine
                )
        metrics.append(row)
    return model, metrics


def evaluate_lodo(config, dataset, folds=None, nst_cache=None):
    """Leave-one-domain-out table over the dataset's domains.

    Each fold regenerates the data with that domain held out, trains the
    style model (when the method uses one) and the classifier on the
    sources, then scores interventional predictions on the held-out
    domain.  Deterministic in config.seed.

    folds restricts the table to a subset of domain names.  nst_cache, a
    dict owned by the caller, reuses trained style models across
    configurations that share (seed, fold, nst budget); only valid while
    the dataset spec itself is fixed.
    """
    names = [d.name for d in dataset.domains]
    if len(names) < 2:
        raise ValueError("leave-one-domain-out needs at least 2 domains")
    if folds is None:
        folds = names
    else:
        unknown = [f for f in folds if f not in names]
        if unknown:
            raise ValueError(f"unknown fold domain(s): {', '.join(unknown)}")
    per_domain, logs = {}, {}
    for fold in folds:
        acc, rows = _run_fold(config, dataset, fold, nst_cache)
        per_domain[fold] = acc
        logs[fold] = rows
    return {
        "per_domain": per_domain,
        "mean": float(np.mean(list(per_domain.values()))),
        "metrics": logs,
    }


def _nst_training_pool(train_images, rng):
    """At most NST_POOL_CAP images per domain for style-model training."""
    pool = {}
    for name, imgs in train_images.items():
        if len(imgs) > NST_POOL_CAP:
            imgs = imgs[rng.permutation(len(imgs))[:NST_POOL_CAP]]
        pool[name] = imgs
    return pool


def _run_fold(config, dataset, fold, nst_cache=None):
    """Train on every domain but `fold` and score on `fold`."""
    names = [d.name for d in dataset.domains]
    split = generate(dataset, config.seed, holdout=fold)
    sources = [n for n in names if n != fold]
    train_images = {s: split[s]["train"].images for s in sources}
    xs = np.concatenate([train_images[s] for s in sources], axis=0)
    ys = np.concatenate([split[s]["train"].labels for s in sources], axis=0)
    xv = np.concatenate([split[s]["val"].images for s in sources], axis=0)
    yv = np.concatenate([split[s]["val"].labels for s in sources], axis=0)
    test = split[fold]["test"]
    style_method = config.method in STYLE_METHODS and config.beta < 1.0
    pool = StylePool(train_images) if style_method else None
    nst_model = None
    if config.method in ("fast", "fagt") and config.beta < 1.0:
        key = (fold, config.seed, config.nst_epochs, config.nst_lr)
        if nst_cache is not None and key in nst_cache:
            nst_model = nst_cache[key]
        else:
            nst_model = NstModel(stream(config.seed, "nst", fold, "init"))
            train_nst(
                nst_model,
                _nst_training_pool(
                    train_images, stream(config.seed, "nst", fold, "subset")
                ),
                epochs=config.nst_epochs,
                lr=config.nst_lr,
                rng=stream(config.seed, "nst", fold, "train"),
            )
            if nst_cache is not None:
                nst_cache[key] = nst_model
    engine = (
        _StyleEngine(config.method, pool, nst_model, config.alpha, config.eta)
        if style_method
        else None
    )
    data = {
        "train": (xs, ys),
        "val": (xv, yv),
        "style_pool": pool,
    }
    model, rows = train(
        config,
        data,
        nst_model,
        scope=("classifier", fold),
        eval_every=config.epochs,
        engine=engine,
    )
    acc = _accuracy(
        model,
        test.images,
        test.labels,
        config,
        pool,
        nst_model,
        stream(config.seed, "eval", fold),
        engine,
    )
    for row in rows:
        row["fold_domain"] = fold
    return acc, rows
