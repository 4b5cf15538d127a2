"""Run configuration: a flat, typed ``key = value`` format.

Grammar, one item per line::

    # comment
    [section]
    key = value

Values are Python-style literals (``0.9``, ``16``, ``"adam"``, ``[1, 2, 4]``)
or ``true`` / ``false``; a bare word is read as a string.  Several pairs
may share a line when separated by commas outside brackets.  Keys are
unique across sections, so a key may also appear before any header.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

from .optimizer import RULE_NAMES
from .oracle import KINDS

REQUIRED = object()
SUBCOMMANDS = ("sweep", "bounds", "fit", "validate")


def _unit_interval(v):
    return None if 0.0 <= v < 1.0 else "must lie in [0, 1)"


def _positive(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _at_least_one(v):
    return None if v >= 1 else "must be >= 1"


def _delta(v):
    return None if 0.0 < v <= 1.0 else "must lie in (0, 1]"


def _batches(v):
    if not v or any(not isinstance(b, int) or b < 1 for b in v):
        return "must be a non-empty list of positive integers"
    if list(v) != sorted(v):
        return "must be sorted ascending"
    return None


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


# section -> key -> (type, default, check)
SCHEMA = {
    "problem": {
        "kind": (str, REQUIRED, _choice(KINDS)),
        "dimension": (int, REQUIRED, _at_least_one),
        "noise_variance": (float, REQUIRED, _nonneg),
        "samples": (int, 128, _at_least_one),
        "hidden": (int, 8, _at_least_one),
        "init": (float, 1.0, None),
        "data_seed": (int, 0, None),
    },
    "optimizer": {
        "rule": (str, REQUIRED, _choice(RULE_NAMES)),
        "alpha": (float, REQUIRED, _positive),
        "beta": (float, REQUIRED, _unit_interval),
        "gamma": (float, REQUIRED, _unit_interval),
        "eta": (float, 0.999, _unit_interval),
        "zeta": (float, 0.999, _unit_interval),
        "epsilon_floor": (float, 1e-8, _positive),
        "bound_scale": (float, 0.1, _positive),
    },
    "sweep": {
        "batches": (list, [1, 2, 4, 8, 16, 32, 64, 128, 256], _batches),
        "tau": (float, 0.1, _nonneg),
        "budget_epochs": (int, 200, _at_least_one),
        "epoch_steps": (int, 100, _at_least_one),
        "seeds": (int, 5, _at_least_one),
        "master_seed": (int, 0, None),
        "workers": (int, 1, _at_least_one),
        "sampling": (str, "with", _choice(("with", "without"))),
        "record_wall_time": (bool, False, None),
    },
    "bounds": {
        "eps": (float, 0.1, _positive),
        "delta": (float, 0.01, _delta),
        "A": (float, None, None),
        "B": (float, None, None),
        "C": (float, None, None),
        "D": (float, None, None),
        "E": (float, None, None),
        "F": (float, None, None),
        "G": (float, None, None),
        "trajectory_steps": (int, 2000, _at_least_one),
        "bound_batch": (int, 16, _at_least_one),
        "grid_min": (float, 1.0, _positive),
        "grid_max": (float, 1e4, _positive),
        "grid_points": (int, 64, _at_least_one),
        "stats_samples": (int, 2000, _at_least_one),
    },
    "validate": {
        "steps": (int, 300, _nonneg),
        "batch": (int, 16, _at_least_one),
        "corrupt_step": (int, -1, None),
    },
    "fit": {
        "input": (str, "", None),
    },
    "output": {
        "dir": (str, "", None),
    },
}

KEY_SECTION = {key: sec for sec, keys in SCHEMA.items() for key in keys}

DEFAULT_CONFIG = """\
[problem]
kind = "noisy-quadratic"
dimension = 20
noise_variance = 4.0

[optimizer]
rule = "adam"
alpha = 0.001
beta = 0.9
gamma = 0.9
"""


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class RunConfig:
    subcommand: str | None
    values: dict = field(default_factory=dict)

    def __getitem__(self, dotted):
        sec, key = dotted.split(".")
        return self.values[sec][key]

    def section(self, name):
        return self.values[name]

    def resolved_text(self):
        """The full configuration, every key filled, in parseable form."""
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                value = self.values[sec][key]
                if value is None:
                    continue
                lines.append(f"{key} = {_render(value)}")
            lines.append("")
        return "\n".join(lines)


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    return repr(v)


def _scan(line):
    """Yield (index, char, inside_quotes) with backslash escapes honoured."""
    quote, escaped = None, False
    for i, ch in enumerate(line):
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            yield i, ch, True
            continue
        if ch in "\"'":
            quote = ch
            yield i, ch, True
            continue
        yield i, ch, False


def _strip_comment(line):
    for i, ch, quoted in _scan(line):
        if ch == "#" and not quoted:
            return line[:i]
    return line


def _split_pairs(line):
    """Split on commas that sit outside brackets and quotes."""
    parts, depth, start = [], 0, 0
    for i, ch, quoted in _scan(line):
        if quoted:
            continue
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(line[start:i])
            start = i + 1
    parts.append(line[start:])
    return [p.strip() for p in parts if p.strip()]


def _literal(raw):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        if re.fullmatch(r"[A-Za-z_][\w.\-]*", raw):
            return raw
        raise ValueError(f"cannot read value {raw!r}")


def _coerce(value, typ):
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is list and isinstance(value, (list, tuple)):
        return list(value)
    if typ in (str, bool) and isinstance(value, typ):
        return value
    raise TypeError(f"expected {typ.__name__}, got {type(value).__name__}")


def parse_config(text, subcommand=None, overrides=None):
    """Parse and validate; raises :class:`ConfigError` listing every problem.

    ``overrides`` maps ``key`` or ``section.key`` to already-typed values or
    raw strings, applied after the text.
    """
    errors = []
    raw = {}
    section = None
    if subcommand is not None and subcommand not in SUBCOMMANDS:
        errors.append(f"unknown subcommand {subcommand!r}")

    for lineno, line in enumerate(text.splitlines(), 1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*(\w+)\s*\]", line)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        for pair in _split_pairs(line):
            if "=" not in pair:
                errors.append(f"line {lineno}: expected 'key = value', got {pair!r}")
                continue
            key, value = (s.strip() for s in pair.split("=", 1))
            _assign(raw, section, key, value, f"line {lineno}", errors)

    for key, value in (overrides or {}).items():
        sec, _, name = key.rpartition(".")
        _assign(raw, sec or None, name, value, f"override {key}", errors)

    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (typ, default, check) in keys.items():
            if key in raw.get(sec, {}):
                where, value = raw[sec][key]
                try:
                    value = _coerce(value, typ)
                except TypeError as exc:
                    errors.append(f"{where}: {sec}.{key} {exc}")
                    continue
                if check is not None and (msg := check(value)):
                    errors.append(f"{where}: {sec}.{key} = {value!r} {msg}")
                    continue
                values[sec][key] = value
            elif default is REQUIRED:
                errors.append(f"missing required key {sec}.{key}")
            else:
                values[sec][key] = default
    if errors:
        raise ConfigError(errors)
    return RunConfig(subcommand, values)


def _assign(raw, section, key, value, where, errors):
    sec = section if section is not None else KEY_SECTION.get(key)
    if sec is None or key not in SCHEMA.get(sec, {}):
        if sec in SCHEMA or section is None:
            errors.append(f"{where}: unknown key {key!r}")
        return
    if isinstance(value, str):
        try:
            value = _literal(value)
        except ValueError as exc:
            errors.append(f"{where}: {exc}")
            return
    raw.setdefault(sec, {})[key] = (where, value)
