"""Flat ``key = value`` config files.

One setting per line; blank lines and lines starting with ``#`` are ignored.
Keys are case-sensitive, values are kept as strings for the caller to parse.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    # split on \n only: splitlines() would also break on U+0085, U+2028 and friends
    for n, line in enumerate(text.split("\n"), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
