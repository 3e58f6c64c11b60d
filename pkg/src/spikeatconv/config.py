"""Dataclass <-> text conversion shared by every config type.

Configs are written as INI-style sections (``[model]``, ``[train]`` ...) with
one ``key = value`` per field. Sequences are comma separated, ``none`` marks
an absent optional value. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io

from .errors import ConfigError


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(kind: str, text: str):
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_value(annotation: str, text):
    """Convert ``text`` according to a field annotation such as ``tuple[int, ...] | None``."""
    if not isinstance(text, str):
        return text
    ann = annotation.replace(" ", "")
    optional = ann.endswith("|None")
    if optional:
        ann = ann[: -len("|None")]
        if text.strip().lower() in ("none", ""):
            return None
    if ann.startswith("tuple["):
        kind = ann[len("tuple["):].split(",")[0]
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(_parse_scalar(kind, p) for p in parts)
    return _parse_scalar(ann, text)


def to_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def from_dict(cls, values: dict, section: str | None = None):
    """Build ``cls`` from ``values`` (strings or native values); unknown keys raise."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    where = f"[{section}]" if section else cls.__name__
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        ann = known[key].type if isinstance(known[key].type, str) else known[key].type.__name__
        try:
            val = parse_value(ann, raw)
        except ValueError as exc:
            raise ConfigError(f"{where} {key}: {exc}") from None
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def sections_to_text(sections: dict) -> str:
    """``{"model": cfg, ...}`` -> INI text with fields in declaration order."""
    out = io.StringIO()
    for name, cfg in sections.items():
        out.write(f"[{name}]\n")
        for key, value in to_dict(cfg).items():
            out.write(f"{key} = {format_value(value)}\n")
        out.write("\n")
    return out.getvalue()


def read_sections(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
