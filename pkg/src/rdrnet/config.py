"""Plain-text network configuration files.

The format is line-oriented: ``key = value`` pairs, grouped by optional
``[section]`` headers, with ``#`` comments.  Unknown sections or keys are
rejected, and every violation reports its line number.  Example::

    variant = rdrnet-s
    num_classes = 19
    head_channels = 128
    aux_head = true

    [stem]
    widths = 32, 32, 64
    blocks = 1, 5, 4       # stage total; the first block carries stride 2

    [semantic]
    widths = 128, 256, 512
    blocks = 6, 6, 1

    [detail]
    widths = 64, 64, 128
    blocks = 4, 4, 1

    [rppm]                 # optional; branch defaults to stage-6 width / 4
    branch_width = 128

    [ablation]             # optional; everything defaults to enabled
    fusion1 = true
    fusion2 = true
    rppm = true
    rb_1x1_path = true
    rb_second_1x1 = true
    rb_residual = true
    rb_identity_bn = false
"""

from __future__ import annotations

import importlib.resources

from .errors import ConfigError, ContractError
from .network import NetworkDef

_TOP_KEYS = {"variant": "str", "num_classes": "int", "head_channels": "int",
             "aux_head": "bool"}
_SECTION_KEYS = {
    "stem": {"widths": "ints3", "blocks": "ints3"},
    "semantic": {"widths": "ints3", "blocks": "ints3"},
    "detail": {"widths": "ints3", "blocks": "ints3"},
    "rppm": {"branch_width": "int"},
    "ablation": {
        "fusion1": "bool", "fusion2": "bool", "rppm": "bool",
        "rb_1x1_path": "bool", "rb_second_1x1": "bool",
        "rb_residual": "bool", "rb_identity_bn": "bool",
    },
}
_REQUIRED = [
    ("", "variant"), ("", "num_classes"), ("", "head_channels"),
    ("stem", "widths"), ("stem", "blocks"),
    ("semantic", "widths"), ("semantic", "blocks"),
    ("detail", "widths"), ("detail", "blocks"),
]


def _parse_value(kind, raw, line_no):
    if kind == "str":
        return raw
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected an integer, got {raw!r}", line_no) from None
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"expected true/false, got {raw!r}", line_no)
    if kind == "ints3":
        parts = [p for chunk in raw.split(",") for p in chunk.split()]
        try:
            values = tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"expected integers, got {raw!r}", line_no) from None
        if len(values) != 3:
            raise ConfigError(f"expected exactly 3 integers, got {len(values)}", line_no)
        return values
    raise AssertionError(kind)


def parse_config(text) -> NetworkDef:
    section = ""
    seen = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", line_no)
            section = line[1:-1].strip()
            if section not in _SECTION_KEYS:
                raise ConfigError(f"unknown section [{section}]", line_no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line_no)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        schema = _TOP_KEYS if section == "" else _SECTION_KEYS[section]
        if key not in schema:
            where = f"section [{section}]" if section else "the top level"
            raise ConfigError(f"unknown key {key!r} in {where}", line_no)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r}", line_no)
        if not raw_value:
            raise ConfigError(f"empty value for {key!r}", line_no)
        seen[(section, key)] = _parse_value(schema[key], raw_value, line_no)

    for section, key in _REQUIRED:
        if (section, key) not in seen:
            where = f"[{section}] {key}" if section else key
            raise ConfigError(f"missing required key: {where}")

    def get(section, key, default=None):
        return seen.get((section, key), default)

    try:
        return NetworkDef(
            variant=get("", "variant"),
            stem_widths=get("stem", "widths"),
            stem_blocks=get("stem", "blocks"),
            semantic_widths=get("semantic", "widths"),
            semantic_blocks=get("semantic", "blocks"),
            detail_widths=get("detail", "widths"),
            detail_blocks=get("detail", "blocks"),
            head_channels=get("", "head_channels"),
            num_classes=get("", "num_classes"),
            aux_head=get("", "aux_head", True),
            rppm_branch_width=get("rppm", "branch_width"),
            enable_fusion1=get("ablation", "fusion1", True),
            enable_fusion2=get("ablation", "fusion2", True),
            enable_rppm=get("ablation", "rppm", True),
            rb_use_1x1=get("ablation", "rb_1x1_path", True),
            rb_use_second_1x1=get("ablation", "rb_second_1x1", True),
            rb_use_residual=get("ablation", "rb_residual", True),
            rb_identity_bn=get("ablation", "rb_identity_bn", False),
        )
    except ContractError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path) -> NetworkDef:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def resolve_config(name_or_path) -> NetworkDef:
    """Accept a filesystem path or the bare name of a shipped configuration
    (micro, rdrnet-s-simple, rdrnet-s, rdrnet-m, rdrnet-l)."""
    import os

    if os.path.exists(name_or_path):
        return load_config(name_or_path)
    resource = importlib.resources.files("rdrnet") / "configs" / f"{name_or_path}.cfg"
    if resource.is_file():
        return parse_config(resource.read_text())
    raise ConfigError(f"no such config file or shipped variant: {name_or_path!r}")
