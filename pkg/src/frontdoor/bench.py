"""Synthetic multi-domain shape benchmark with a tunable spurious signal.

Each image is a rasterized shape (the label) over a domain-styled
background.  Two style cues can align with the label at strength rho on
the training split: the palette index picking the background/foreground
color pair, and a global brightness tint band.  Validation, test, and
held-out-domain images draw both cues uniformly, so the planted
correlation is worthless off the training split.
"""

from __future__ import annotations

import colorsys
import json
import os
import struct
from collections import namedtuple

import numpy as np

from .rng import stream

SHAPES = ("square", "circle", "triangle", "cross")

DATASET_MAGIC = b"FDD1"

DomainSpec = namedtuple(
    "DomainSpec",
    ["name", "palette", "texture_freq", "noise_level", "texture_amp"],
    defaults=[0.06],
)

SampleRecipe = namedtuple(
    "SampleRecipe", ["label", "domain", "nuisance", "seed", "palette_index"]
)

SyntheticDataset = namedtuple(
    "SyntheticDataset",
    ["domains", "per_class", "classes", "rho", "size"],
    defaults=[600, 4, 0.9, 32],
)

Split = namedtuple("Split", ["images", "labels", "recipes"])


class DatasetError(RuntimeError):
    pass


def default_domains():
    """Four domains with mutually disjoint palettes, so any held-out
    domain shows only never-seen colors."""
    names = ["agate", "basalt", "coral", "dune"]
    freqs = [3.0, 5.0, 7.0, 9.0]
    noises = [0.03, 0.02, 0.04, 0.025]
    domains = []
    for d, name in enumerate(names):
        palette = []
        for c in range(4):
            hue = (4 * d + c) / 16.0
            bg = colorsys.hsv_to_rgb(hue, 0.65, 0.40)
            fg = colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.55, 0.95)
            palette.append((bg, fg))
        domains.append(DomainSpec(name, tuple(palette), freqs[d], noises[d]))
    return domains


_GRID_CACHE = {}


def _grid(size):
    if size not in _GRID_CACHE:
        coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
        _GRID_CACHE[size] = np.meshgrid(coords, coords, indexing="xy")
    return _GRID_CACHE[size]


def shape_mask(label, seed, size):
    """Boolean pixel mask of the label's shape, jittered in scale and
    rotation by the seed.  Depends on (label, seed) only."""
    if not 0 <= label < len(SHAPES):
        raise ValueError(f"unknown shape label {label}, have {len(SHAPES)}")
    xs, ys = _grid(size)
    rng = stream(seed, "mask")
    r = rng.uniform(0.35, 0.55)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    xr = cos_t * xs + sin_t * ys
    yr = -sin_t * xs + cos_t * ys
    shape = SHAPES[label]
    if shape == "square":
        return np.maximum(np.abs(xr), np.abs(yr)) <= r
    if shape == "circle":
        return xs * xs + ys * ys <= r * r
    if shape == "triangle":
        return (yr >= -0.5 * r) & (yr <= r - np.sqrt(3.0) * xr) & (yr <= r + np.sqrt(3.0) * xr)
    arm = 0.35 * r
    return ((np.abs(xr) <= arm) & (np.abs(yr) <= r)) | (
        (np.abs(yr) <= arm) & (np.abs(xr) <= r)
    )


def render(recipe, size):
    """Draw one 3 x size x size float image in [0, 1] from its recipe.

    Deterministic: the same recipe renders bit-identically.  The shape
    mask never depends on the domain; palette, texture, tint, and noise
    never touch which pixels belong to the shape.
    """
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    if not isinstance(recipe.domain, DomainSpec):
        raise ValueError(f"unknown domain {recipe.domain!r}")
    if not 0.0 <= recipe.nuisance <= 1.0:
        raise ValueError(f"nuisance must lie in [0, 1], got {recipe.nuisance}")
    domain = recipe.domain
    if not 0 <= recipe.palette_index < len(domain.palette):
        raise ValueError(
            f"palette index {recipe.palette_index} outside domain "
            f"{domain.name!r} palette of {len(domain.palette)}"
        )
    bg, fg = domain.palette[recipe.palette_index]
    mask = shape_mask(recipe.label, recipe.seed, size)

    xs, ys = _grid(size)
    tex_rng = stream(recipe.seed, "texture")
    direction = tex_rng.uniform(0.0, 2.0 * np.pi)
    phase = tex_rng.uniform(0.0, 2.0 * np.pi)
    proj = np.cos(direction) * xs + np.sin(direction) * ys
    texture = domain.texture_amp * np.sin(np.pi * domain.texture_freq * proj + phase)

    img = np.empty((3, size, size))
    for ch in range(3):
        img[ch] = np.where(mask, fg[ch], bg[ch] + texture)

    img *= 0.55 + 0.45 * recipe.nuisance
    if domain.noise_level > 0:
        img += domain.noise_level * stream(recipe.seed, "noise").normal(size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _validate(spec, holdout):
    if len(spec.domains) < 2:
        raise ValueError(f"need at least 2 domains, got {len(spec.domains)}")
    if not 2 <= spec.classes <= len(SHAPES):
        raise ValueError(f"classes must lie in [2, {len(SHAPES)}], got {spec.classes}")
    if not 0.0 <= spec.rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {spec.rho}")
    if spec.per_class < 5:
        raise ValueError(f"per_class must be >= 5, got {spec.per_class}")
    names = [d.name for d in spec.domains]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate domain names in {names}")
    palettes = [tuple(d.palette) for d in spec.domains]
    if len(set(palettes)) != len(palettes):
        raise ValueError("palettes must be distinct across domains")
    for d in spec.domains:
        if d.texture_freq <= 0:
            raise ValueError(f"texture_freq must be > 0 in domain {d.name!r}")
        if len(d.palette) < spec.classes:
            raise ValueError(
                f"domain {d.name!r} has {len(d.palette)} palette pairs, "
                f"needs {spec.classes}"
            )
    if holdout is not None and holdout not in names:
        raise ValueError(f"holdout {holdout!r} not among domains {names}")


def _make_split(spec, domain, count_per_class, confounded, rng):
    labels = np.repeat(np.arange(spec.classes), count_per_class)
    labels = labels[rng.permutation(labels.size)]
    images = np.empty((labels.size, 3, spec.size, spec.size), dtype=np.uint8)
    recipes = []
    for i, label in enumerate(labels):
        label = int(label)
        aligned = confounded and rng.random() < spec.rho
        if aligned:
            palette_index = label
            nuisance = (label + rng.random()) / spec.classes
        else:
            palette_index = int(rng.integers(spec.classes))
            nuisance = rng.random()
        seed = int(rng.integers(0, 2 ** 63))
        recipe = SampleRecipe(label, domain, nuisance, seed, palette_index)
        images[i] = np.round(render(recipe, spec.size) * 255.0).astype(np.uint8)
        recipes.append(recipe)
    return Split(images, labels.astype(np.int64), tuple(recipes))


def generate(spec, rng, holdout=None):
    """Render the benchmark: 80/20 train/val per source domain, the
    held-out domain (if named) all-test.

    Training samples align their style cues with the label at rate rho;
    val and test draw cues uniformly.  Pure function of (spec, seed).
    """
    _validate(spec, holdout)
    if isinstance(rng, (int, np.integer)):
        rng = stream(int(rng), "data")
    n_train = int(round(0.8 * spec.per_class))
    out = {}
    for domain in spec.domains:
        if domain.name == holdout:
            out[domain.name] = {
                "test": _make_split(spec, domain, spec.per_class, False, rng)
            }
        else:
            out[domain.name] = {
                "train": _make_split(spec, domain, n_train, True, rng),
                "val": _make_split(spec, domain, spec.per_class - n_train, False, rng),
            }
    return out


def save_dataset(root, splits, manifest=None):
    """Write one binary file per (domain, split) plus a manifest."""
    os.makedirs(root, exist_ok=True)
    for domain_name, by_split in splits.items():
        domain_dir = os.path.join(root, domain_name)
        os.makedirs(domain_dir, exist_ok=True)
        for split_name, split in by_split.items():
            path = os.path.join(domain_dir, f"{split_name}.fdd")
            with open(path, "wb") as f:
                f.write(DATASET_MAGIC)
                f.write(struct.pack("<Q", len(split.labels)))
                for img, label in zip(split.images, split.labels):
                    c, h, w = img.shape
                    f.write(struct.pack("<4H", int(label), h, w, c))
                    f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    if manifest is not None:
        with open(os.path.join(root, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise DatasetError(f"truncated dataset file while reading {what}")
    return buf


def load_dataset(root):
    """Read a saved dataset tree back; recipes are not persisted."""
    splits = {}
    for domain_name in sorted(os.listdir(root)):
        domain_dir = os.path.join(root, domain_name)
        if not os.path.isdir(domain_dir):
            continue
        by_split = {}
        for fname in sorted(os.listdir(domain_dir)):
            if not fname.endswith(".fdd"):
                continue
            path = os.path.join(domain_dir, fname)
            with open(path, "rb") as f:
                if f.read(4) != DATASET_MAGIC:
                    raise DatasetError(f"bad dataset magic in {path}")
                (count,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))
                images, labels = [], []
                for _ in range(count):
                    label, h, w, c = struct.unpack(
                        "<4H", _read_exact(f, 8, "record header")
                    )
                    raw = _read_exact(f, c * h * w, "pixels")
                    images.append(
                        np.frombuffer(raw, dtype=np.uint8).reshape(c, h, w)
                    )
                    labels.append(label)
            by_split[fname[: -len(".fdd")]] = Split(
                np.array(images, dtype=np.uint8),
                np.array(labels, dtype=np.int64),
                None,
            )
        if by_split:
            splits[domain_name] = by_split
    manifest = None
    manifest_path = os.path.join(root, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            manifest = json.load(f)
    return splits, manifest
