"""Plain-text ``key=value`` files used for configs, specs and sidecars.

Blank lines and ``#`` comments are skipped.  A key may repeat; readers that
expect a list use :func:`get_all`.
"""

from __future__ import annotations

from pathlib import Path


def parse(text: str) -> list[tuple[str, str]]:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        items.append((key.strip(), value.strip()))
    return items


def load(path) -> list[tuple[str, str]]:
    return parse(Path(path).read_text())


def as_dict(items: list[tuple[str, str]]) -> dict[str, str]:
    """Last occurrence wins."""
    return dict(items)


def get_all(items: list[tuple[str, str]], key: str) -> list[str]:
    return [v for k, v in items if k == key]


def dump(items) -> str:
    return "".join(f"{k}={v}\n" for k, v in items)


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")
