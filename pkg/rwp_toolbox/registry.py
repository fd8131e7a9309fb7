"""Registry of ``run`` subcommands.

A tool is a plain function whose parameters carry :func:`ToolParam`
defaults.  ``@tool`` reads the signature once at import time and keeps a
:class:`ToolInfo` that the CLI turns into Click options and JSON schemas.
"""

from __future__ import annotations

import enum
import inspect
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, List, Union

REQUIRED: Any = object()


@dataclass(frozen=True)
class Declared:
    """What :func:`ToolParam` leaves behind as a parameter default."""

    default: Any = REQUIRED
    help: str = ""
    placeholder: str | None = None
    choices: tuple[str, ...] | None = None


def ToolParam(
    default: Any = REQUIRED,
    *,
    help: str = "",
    placeholder: str | None = None,
    choices: tuple[str, ...] | None = None,
) -> Any:
    """Declare a tool parameter.

    Omitting *default* (or passing ``...``) makes the option required.
    *placeholder* names the value in ``schema --format template`` output.
    """
    return Declared(REQUIRED if default is ... else default, help, placeholder, choices)


class ParamKind(enum.Enum):
    SCALAR = "scalar"
    PATH = "path"
    LIST = "list"


@dataclass(frozen=True)
class ParamInfo:
    name: str
    kind: ParamKind
    element_type: type  # for LIST parameters, the item type
    required: bool
    default: Any
    help: str
    placeholder: str | None = None
    choices: tuple[str, ...] | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def is_list(self) -> bool:
        return self.kind is ParamKind.LIST

    @property
    def is_path(self) -> bool:
        return self.element_type is Path

    @property
    def type_name(self) -> str:
        base = "path" if self.is_path else self.element_type.__name__
        return f"list[{base}]" if self.is_list else base


@dataclass
class ToolInfo:
    name: str
    description: str
    func: Callable[..., Any]
    params: list[ParamInfo] = field(default_factory=list)
    sub_schemas: dict[str, dict[str, Any]] = field(default_factory=dict)


def _unwrap(annotation: Any) -> tuple[ParamKind, type]:
    origin = typing.get_origin(annotation)
    if origin is Union:
        inner = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(inner) == 1:
            return _unwrap(inner[0])
    if origin in (list, List):
        (item,) = typing.get_args(annotation) or (str,)
        return ParamKind.LIST, item
    if annotation is Path:
        return ParamKind.PATH, Path
    if annotation in (int, float, str, bool):
        return ParamKind.SCALAR, annotation
    raise TypeError(f"unsupported tool parameter type {annotation!r}")


def describe_params(func: Callable[..., Any]) -> list[ParamInfo]:
    hints = typing.get_type_hints(func)
    infos = []
    for name, parameter in inspect.signature(func).parameters.items():
        declared = parameter.default
        if declared is inspect.Parameter.empty:
            declared = Declared()
        elif not isinstance(declared, Declared):
            declared = Declared(default=declared)
        kind, element_type = _unwrap(hints.get(name, str))
        required = declared.default is REQUIRED
        infos.append(
            ParamInfo(
                name=name,
                kind=kind,
                element_type=element_type,
                required=required,
                default=None if required else declared.default,
                help=declared.help,
                placeholder=declared.placeholder,
                choices=declared.choices,
            )
        )
    return infos


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, ToolInfo] = {}

    def add(self, info: ToolInfo) -> None:
        known = self._tools.get(info.name)
        if known is not None and known.func is not info.func:
            raise ValueError(f"tool {info.name!r} is already registered by {known.func.__module__}")
        self._tools[info.name] = info

    def get(self, name: str) -> ToolInfo:
        try:
            return self._tools[name]
        except KeyError:
            raise KeyError(f"Unknown tool: {name!r} (see `rwp-toolbox list`)") from None

    def __iter__(self) -> Iterator[ToolInfo]:
        return iter(sorted(self._tools.values(), key=lambda info: info.name))


REGISTRY = ToolRegistry()


def get_tool(name: str) -> ToolInfo:
    return REGISTRY.get(name)


def list_tools() -> list[ToolInfo]:
    return list(REGISTRY)


def tool(
    name: str,
    description: str | None = None,
    sub_schemas: dict[str, dict[str, Any]] | None = None,
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Register *func* as ``rwp-toolbox run <name>``.

    *sub_schemas* maps a parameter name to the schema of the file it
    points to; experiment commands pass ``{"config": config_schema()}``.
    """

    def register(func: Callable[..., Any]) -> Callable[..., Any]:
        params = describe_params(func)
        unknown = set(sub_schemas or ()) - {p.name for p in params}
        if unknown:
            raise ValueError(f"sub_schemas name unknown parameters of {name}: {sorted(unknown)}")
        REGISTRY.add(
            ToolInfo(
                name=name,
                description=description or (func.__doc__ or "").strip().split("\n")[0],
                func=func,
                params=params,
                sub_schemas=dict(sub_schemas or {}),
            )
        )
        return func

    return register
