"""Plain key=value experiment configs with dotted sections.

Files look like:

    # corpus
    synth.n_utts = 600
    optim.learning_rate = 1e-3

Command-line ``--set key=value`` overrides win over file values.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def load_config(path=None) -> dict[str, str]:
    items: dict[str, str] = {}
    if path is None:
        return items
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{raw.strip()}'")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return items


def apply_overrides(items: dict[str, str], overrides) -> dict[str, str]:
    out = dict(items)
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got '{ov}'")
        key, _, value = ov.partition("=")
        out[key.strip()] = value.strip()
    return out


def take(items: dict[str, str], key: str, default=None, kind=str):
    """Typed lookup; kind is str, int, float, bool, or a parser callable."""
    if key not in items:
        return default
    raw = items[key]
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse '{raw}' as {getattr(kind, '__name__', kind)}")


def int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def str_tuple(raw: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in raw.split(",") if x.strip())
