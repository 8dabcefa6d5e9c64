"""Flat key-value config files with section prefixes.

Format: one `section.key = value` per line, `#` comments, blank lines
ignored.  Values stay strings until a consumer coerces them; the same
dict round-trips through save_config for effective-config echoes.
"""

from __future__ import annotations

from .errors import FormatError


def load_config(path):
    cfg = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
    return cfg


def save_config(cfg, path, header=None):
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(f"# {header}\n")
        for key in sorted(cfg):
            f.write(f"{key} = {cfg[key]}\n")


def get_typed(cfg, key, kind, default=None):
    if key not in cfg:
        return default
    raw = cfg[key]
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as e:
        raise FormatError(f"config key {key}: {e}") from e
