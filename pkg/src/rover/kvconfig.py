"""Plain-text ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Values are coerced to the type of the matching dataclass field default.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import RejectedInput


def parse_kv(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RejectedInput(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise RejectedInput(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict:
    return parse_kv(Path(path).read_text(), source=str(path))


def parse_overrides(items) -> dict:
    """``["a=1", "b=x"]`` from repeated command-line flags."""
    return parse_kv("\n".join(items or []), source="--set")


def _coerce(value: str, like, key):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise RejectedInput(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(like, int):
            return int(float(value)) if "e" in value.lower() else int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if like and isinstance(like[0], (int, float)) and not isinstance(like[0], bool):
                return tuple(type(like[0])(float(p)) if isinstance(like[0], int) else float(p) for p in parts)
            return tuple(parts)
    except ValueError:
        raise RejectedInput(f"{key}: cannot parse {value!r} as {type(like).__name__}") from None
    if like is None and value.lower() == "none":
        return None
    if like is None:
        try:
            return int(value)
        except ValueError:
            try:
                return float(value)
            except ValueError:
                return value
    return value


def apply_kv(config, values: dict, strict: bool = True):
    """Return a copy of dataclass ``config`` with ``values`` applied.

    Dotted keys (``train.epochs``) reach into nested dataclass fields.
    """
    changes, nested = {}, {}
    names = {f.name for f in dataclasses.fields(config)}
    for key, value in values.items():
        head, _, rest = key.partition(".")
        if head not in names:
            if strict:
                raise RejectedInput(f"unknown configuration key {key!r}")
            continue
        if rest:
            nested.setdefault(head, {})[rest] = value
        else:
            changes[head] = _coerce(value, getattr(config, head), key)
    for head, sub in nested.items():
        changes[head] = apply_kv(getattr(config, head), sub, strict)
    return dataclasses.replace(config, **changes)


def dump_kv(config, prefix: str = "") -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if dataclasses.is_dataclass(v):
            lines.append(dump_kv(v, prefix + f.name + "."))
        elif isinstance(v, tuple):
            lines.append(f"{prefix}{f.name} = {','.join(str(x) for x in v)}")
        else:
            lines.append(f"{prefix}{f.name} = {v}")
    return "\n".join(l for l in lines if l)
