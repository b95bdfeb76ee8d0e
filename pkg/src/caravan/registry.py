"""Self-describing plugin catalog.

Plugin parameter schemas are explicit data; the gateway serves them verbatim
and the web UI generates its forms from them, so registering a plugin is the
only integration step a new algorithm needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import Conflict, NotFound, ValidationFailure

PARAM_KINDS = ("int", "float", "bool", "enum", "string", "int_list")
PLUGIN_STAGES = ("preprocess", "train")


@dataclass(frozen=True)
class ParamDescriptor:
    name: str
    kind: str
    default: object
    description: str
    range: Optional[tuple] = None  # (min, max) for numeric kinds, allowed values for enum
    feature_sensitive_only: bool = False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "default": self.default,
            "description": self.description,
            "range": list(self.range) if self.range is not None else None,
            "feature_sensitive_only": self.feature_sensitive_only,
        }


@dataclass(frozen=True)
class PluginDescriptor:
    plugin_id: str
    version: str
    stage: str
    title: str
    description: str
    params: tuple[ParamDescriptor, ...] = ()
    algorithm_class: Optional[str] = None
    feature_sensitive: bool = False

    def to_dict(self) -> dict:
        return {
            "plugin_id": self.plugin_id,
            "version": self.version,
            "stage": self.stage,
            "algorithm_class": self.algorithm_class,
            "title": self.title,
            "description": self.description,
            "feature_sensitive": self.feature_sensitive,
            "params": [p.to_dict() for p in self.params],
        }


def _check_descriptor(descriptor: PluginDescriptor) -> None:
    problems: list[tuple[str, str]] = []
    if descriptor.stage not in PLUGIN_STAGES:
        problems.append(("stage", f"unknown stage {descriptor.stage!r}"))
    if not descriptor.description.strip():
        problems.append(("description", "plugin description must be nonempty"))
    if not descriptor.title.strip():
        problems.append(("title", "plugin title must be nonempty"))
    seen: set[str] = set()
    for param in descriptor.params:
        if param.kind not in PARAM_KINDS:
            problems.append((param.name, f"unknown kind {param.kind!r}"))
            continue
        if not param.description.strip():
            problems.append((param.name, "parameter description must be nonempty"))
        if param.name in seen:
            problems.append((param.name, "duplicate parameter name"))
        seen.add(param.name)
        if param.default is not None:
            errors = _check_value(param, param.default)
            if errors:
                problems.append((param.name, f"default out of range: {errors}"))
    if problems:
        raise ValidationFailure("invalid plugin descriptor", details=problems)


def _check_value(param: ParamDescriptor, value) -> Optional[str]:
    """Range/allowed-value check for an already-typed value."""
    if param.kind in ("int", "float") and param.range is not None:
        low, high = param.range
        if low is not None and value < low:
            return "below minimum"
        if high is not None and value > high:
            return "above maximum"
    elif param.kind == "enum":
        allowed = param.range or ()
        if value not in allowed:
            return f"must be one of {', '.join(map(str, allowed))}"
    elif param.kind == "int_list" and param.range is not None:
        low, high = param.range
        for element in value:
            if low is not None and element < low:
                return "element below minimum"
            if high is not None and element > high:
                return "element above maximum"
    return None


def encode_value(kind: str, value) -> str:
    """Canonical string form used in provenance params (lossless round-trip)."""
    if kind == "bool":
        return "true" if value else "false"
    if kind == "int_list":
        return ",".join(str(int(v)) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def _parse_value(param: ParamDescriptor, raw: str):
    kind = param.kind
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ValueError("not an integer") from None
    if kind == "float":
        try:
            value = float(raw)
        except ValueError:
            raise ValueError("not a number") from None
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value
    if kind == "bool":
        lowered = raw.strip().lower()
        if lowered in ("true", "1"):
            return True
        if lowered in ("false", "0"):
            return False
        raise ValueError("not a boolean (use true/false)")
    if kind == "int_list":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise ValueError("must list at least one integer")
        try:
            return [int(p) for p in parts]
        except ValueError:
            raise ValueError("not a comma-separated integer list") from None
    # enum and string stay as given
    return raw


class PluginRegistry:
    """Populated at startup, then read-only; reads need no locking."""

    def __init__(self):
        self._plugins: dict[tuple[str, str], tuple[PluginDescriptor, Callable]] = {}

    def register(self, descriptor: PluginDescriptor, executor: Callable) -> None:
        _check_descriptor(descriptor)
        key = (descriptor.stage, descriptor.plugin_id)
        if key in self._plugins:
            raise Conflict(f"plugin already registered: {descriptor.stage}/{descriptor.plugin_id}")
        self._plugins[key] = (descriptor, executor)

    def get(self, stage: str, plugin_id: str) -> tuple[PluginDescriptor, Callable]:
        entry = self._plugins.get((stage, plugin_id))
        if entry is None:
            raise NotFound(f"unknown plugin: {stage}/{plugin_id}")
        return entry

    def descriptor(self, stage: str, plugin_id: str) -> PluginDescriptor:
        return self.get(stage, plugin_id)[0]

    def executor(self, stage: str, plugin_id: str) -> Callable:
        return self.get(stage, plugin_id)[1]

    def list_plugins(
        self, stage: Optional[str] = None, algorithm_class: Optional[str] = None
    ) -> list[PluginDescriptor]:
        found = [
            descriptor
            for (plugin_stage, _), (descriptor, _) in self._plugins.items()
            if (stage is None or plugin_stage == stage)
            and (algorithm_class is None or descriptor.algorithm_class == algorithm_class)
        ]
        found.sort(key=lambda d: (d.stage, d.algorithm_class or "", d.plugin_id))
        return found

    def validate(self, plugin_id: str, stage: str, raw_params) -> dict:
        """Parse and normalize raw parameters against the plugin schema.

        ``raw_params`` may be a mapping or an ordered (name, value) list;
        values may be strings (the canonical wire form) or already-typed JSON
        values. Every violation is reported at once.
        """
        descriptor = self.descriptor(stage, plugin_id)
        if isinstance(raw_params, dict):
            items = list(raw_params.items())
        else:
            items = [(n, v) for n, v in raw_params]
        by_name = {p.name: p for p in descriptor.params}
        errors: list[tuple[str, str]] = []
        seen: dict[str, object] = {}
        for name, raw in items:
            param = by_name.get(name)
            if param is None:
                errors.append((name, "unknown parameter"))
                continue
            if not isinstance(raw, str):
                raw = encode_value(param.kind, raw)
            try:
                value = _parse_value(param, raw)
            except (ValueError, TypeError) as exc:
                errors.append((name, str(exc)))
                continue
            problem = _check_value(param, value)
            if problem:
                errors.append((name, problem))
                continue
            seen[name] = value
        normalized: dict[str, object] = {}
        for param in descriptor.params:
            if param.name in seen:
                normalized[param.name] = seen[param.name]
            elif param.default is not None:
                normalized[param.name] = param.default
            else:
                errors.append((param.name, "required parameter missing"))
        if errors:
            raise ValidationFailure(
                f"invalid parameters for {stage}/{plugin_id}", details=errors
            )
        return normalized

    def encode_params(self, plugin_id: str, stage: str, params: dict) -> list[tuple[str, str]]:
        """Canonical ordered (name, string) pairs for provenance records."""
        descriptor = self.descriptor(stage, plugin_id)
        return [
            (p.name, encode_value(p.kind, params[p.name]))
            for p in descriptor.params
            if p.name in params
        ]
