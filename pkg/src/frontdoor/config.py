"""Experiment configuration: line-oriented `key = value` files.

Every key has a default, so an empty file is a valid config. Unknown
keys, malformed values, and out-of-range values are rejected with the
offending line number. The resolved config can be echoed back to text
that parses to an identical config.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


METHODS = ("erm", "fast", "faft", "fagt")
SAMPLING = ("random", "domain-balance")
SCHEDULES = ("step", "cosine")
DOMAIN_NAMES = ("agate", "basalt", "coral", "dune")

# keys that only make sense when a style method is active
STYLE_KEYS = ("alpha", "beta", "eta", "k", "sampling")


@dataclass
class ExperimentConfig:
    method: str = "fast"
    alpha: float = 0.7
    beta: float = 0.35
    eta: float = 1.0
    k: int = 3
    sampling: str = "domain-balance"
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "step"
    epochs: int = 50
    rho: float = 0.9
    per_class: int = 600
    size: int = 32
    domains: tuple = DOMAIN_NAMES
    seed: int = 0
    nst_epochs: int = 8
    nst_lr: float = 0.01


_UNIT = ("alpha", "beta", "eta", "rho")


def _parse_value(key, raw, line_no):
    def fail(why):
        raise ConfigError(f"line {line_no}: {why}")

    if key in ("method", "sampling", "schedule"):
        allowed = {"method": METHODS, "sampling": SAMPLING, "schedule": SCHEDULES}[key]
        if raw not in allowed:
            fail(f"{key} must be one of {', '.join(allowed)}, got {raw!r}")
        return raw
    if key == "domains":
        names = tuple(part.strip() for part in raw.split(",") if part.strip())
        bad = [n for n in names if n not in DOMAIN_NAMES]
        if bad:
            fail(f"unknown domain name(s) {', '.join(bad)}")
        if len(set(names)) != len(names):
            fail("duplicate domain names")
        if len(names) < 2:
            fail("need at least 2 domains")
        return names
    if key in ("k", "epochs", "per_class", "size", "seed", "nst_epochs"):
        try:
            value = int(raw)
        except ValueError:
            fail(f"{key} must be an integer, got {raw!r}")
        floor = {"seed": 0, "size": 16}.get(key, 1)
        if value < floor:
            fail(f"{key} must be >= {floor}, got {value}")
        return value
    try:
        value = float(raw)
    except ValueError:
        fail(f"{key} must be a number, got {raw!r}")
    if key in _UNIT and not 0.0 <= value <= 1.0:
        fail(f"{key} must lie in [0,1], got {raw}")
    if key == "momentum" and not 0.0 <= value < 1.0:
        fail(f"momentum must lie in [0,1), got {raw}")
    if key in ("lr", "weight_decay", "nst_lr") and value < 0.0:
        fail(f"{key} must be >= 0, got {raw}")
    return value


def parse_config_text(text):
    """Parse config text; '#' starts a comment, blank lines are ignored."""
    values = {}
    positions = {}
    defaults = ExperimentConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {body!r}")
        key, _, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if not hasattr(defaults, key) or key.startswith("_"):
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, line_no)
        positions[key] = line_no
    if values.get("method", defaults.method) == "erm":
        for key in STYLE_KEYS:
            if key in values:
                raise ConfigError(
                    f"line {positions[key]}: {key!r} is a style parameter; "
                    "method=erm takes none"
                )
    cfg = ExperimentConfig(**values)
    return cfg


def parse_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def echo_config(cfg):
    """Render a config back to text that parses to an equal config.

    erm configs omit the style keys, which erm parsing forbids.
    """
    lines = []
    for key in ExperimentConfig.__dataclass_fields__:
        if cfg.method == "erm" and key in STYLE_KEYS:
            continue
        value = getattr(cfg, key)
        if key == "domains":
            value = ",".join(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
