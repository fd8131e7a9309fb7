"""Command-line entry point.

``list`` and ``schema`` are Typer commands; ``run`` is a Click group whose
subcommands are generated from the tool registry, one per module in
``rwp_toolbox/tools``.
"""

from __future__ import annotations

import json
import logging
from importlib.metadata import PackageNotFoundError, metadata
from pathlib import Path
from typing import Annotated, Any, Optional

import click
import typer

from rwp_toolbox import __version__
from rwp_toolbox.errors import RwpError
from rwp_toolbox.registry import ParamInfo, ToolInfo, get_tool, list_tools
from rwp_toolbox.tools import discover_tools

log = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
PLACEHOLDER_STYLES = {
    "mustache": "{{{{{}}}}}",
    "shell": "${{{}}}",
    "plain": "{}",
}

app = typer.Typer(
    name="rwp-toolbox",
    help="Train and probe desk-scale models with SGD, SAM and random weight perturbation.",
    add_completion=False,
    rich_markup_mode=None,
)


def _readme() -> str:
    try:
        body = metadata("rwp-toolbox").get_payload()  # type: ignore[attr-defined]
    except PackageNotFoundError:
        body = None
    if isinstance(body, str) and body.strip():
        return body
    return (Path(__file__).resolve().parent.parent / "README.md").read_text(encoding="utf-8")


@app.callback(invoke_without_command=True)
def _root(
    ctx: typer.Context,
    readme: Annotated[bool, typer.Option("--readme", help="Print the README and exit.")] = False,
    version: Annotated[bool, typer.Option("--version", help="Print the version and exit.")] = False,
) -> None:
    if version:
        typer.echo(__version__)
        raise typer.Exit()
    if readme:
        typer.echo(_readme())
        raise typer.Exit()
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())


@app.command("list")
def list_cmd() -> None:
    """List the tools available under ``run``."""
    tools = list_tools()
    width = max((len(t.name) for t in tools), default=0) + 2
    for info in tools:
        typer.echo(f"{info.name:<{width}}{info.description}")


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


def render_placeholder(name: str, style: str = "mustache") -> str:
    """``{{name}}``, ``${name}`` or ``name``."""
    return PLACEHOLDER_STYLES.get(style, "{}").format(name)


def param_schema(p: ParamInfo, style: str) -> dict[str, Any]:
    entry: dict[str, Any] = {
        "name": p.name,
        "cli_name": p.flag,
        "type": p.type_name,
        "required": p.required,
    }
    if p.help:
        entry["help"] = p.help
    if p.choices:
        entry["choices"] = list(p.choices)
    if p.default not in (None, [], ()):
        entry["default"] = p.default
    if p.placeholder:
        entry["placeholder"] = render_placeholder(p.placeholder, style)
    if p.is_list:
        entry["note"] = f"Repeat {p.flag} for each value."
    return entry


def invocation_template(info: ToolInfo, style: str) -> str:
    """A ``run`` command line with one placeholder per parameter."""
    lines = [f"rwp-toolbox run {info.name}"]
    for p in info.params:
        value = render_placeholder(p.placeholder, style) if p.placeholder else f"<{p.name}>"
        lines.append(f"{p.flag} '{value}'" + (" [...]" if p.is_list else ""))
    return " \\\n  ".join(lines)


def tool_schema(info: ToolInfo, fmt: str = "json", style: str = "mustache") -> dict[str, Any]:
    schema: dict[str, Any] = {
        "tool": info.name,
        "description": info.description,
        "params": [param_schema(p, style) for p in info.params],
        "global_options": {
            "log_level": {"cli_name": "--log-level", "default": "INFO", "choices": LOG_LEVELS},
        },
        "exit_codes": {
            "0": "all requested artifacts written",
            "2": "configuration error",
            "3": "numeric abort",
            "4": "ingestion error",
        },
    }
    if info.sub_schemas:
        schema["sub_schemas"] = info.sub_schemas
    if fmt == "template":
        schema["template"] = invocation_template(info, style)
    return schema


@app.command("schema")
def schema_cmd(
    tool_name: Annotated[Optional[str], typer.Argument(help="Tool name.")] = None,
    all_tools: Annotated[bool, typer.Option("--all", help="Emit schemas for every tool.")] = False,
    fmt: Annotated[
        str,
        typer.Option("--format", help="json (full schema) or template (adds an invocation string)."),
    ] = "json",
    placeholder_style: Annotated[
        str,
        typer.Option("--placeholder-style", help="mustache, shell or plain."),
    ] = "mustache",
) -> None:
    """Print a tool's parameters (and its config file layout) as JSON."""
    if all_tools:
        payload: Any = [tool_schema(t, fmt, placeholder_style) for t in list_tools()]
    elif tool_name:
        try:
            payload = tool_schema(get_tool(tool_name), fmt, placeholder_style)
        except KeyError as exc:
            typer.echo(exc.args[0], err=True)
            raise typer.Exit(1)
    else:
        typer.echo("Provide a tool name or --all", err=True)
        raise typer.Exit(1)
    typer.echo(json.dumps(payload, indent=2))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def _click_type(p: ParamInfo) -> click.ParamType:
    if p.choices:
        return click.Choice(list(p.choices), case_sensitive=False)
    if p.is_path:
        return click.Path(path_type=Path)
    return {int: click.INT, float: click.FLOAT, bool: click.BOOL}.get(p.element_type, click.STRING)


def _option(p: ParamInfo) -> click.Option:
    if p.is_list:
        default: Any = tuple(p.default or ())
    else:
        default = p.default
    return click.Option(
        [p.flag],
        type=_click_type(p),
        multiple=p.is_list,
        required=p.required,
        default=default,
        show_default=default not in (None, ()),
        help=p.help,
    )


def _run_command(info: ToolInfo) -> click.Command:
    """Click command that sets up logging, calls the tool and turns
    :class:`RwpError` into its exit code."""

    def callback(log_level: str, **values: Any) -> None:
        configure_logging(log_level)
        kwargs = {p.name: list(values[p.name]) if p.is_list else values[p.name] for p in info.params}
        try:
            info.func(**kwargs)
        except RwpError as exc:
            log.debug("%s failed", info.name, exc_info=True)
            typer.echo(f"error: {exc}", err=True)
            raise typer.Exit(exc.exit_code)

    params: list[click.Parameter] = [
        click.Option(
            ["--log-level"],
            type=click.Choice(LOG_LEVELS, case_sensitive=False),
            default="INFO",
            show_default=True,
            help="Logging level.",
        )
    ]
    params.extend(_option(p) for p in info.params)
    return click.Command(name=info.name, params=params, callback=callback, help=info.description)


def build_run_group() -> click.Group:
    group = click.Group("run", help="Run a registered tool.")
    for info in list_tools():
        group.add_command(_run_command(info), info.name)
    return group


def build_cli() -> click.Group:
    """The Typer commands plus the generated ``run`` group."""
    discover_tools()
    group = typer.main.get_group(app)
    group.add_command(build_run_group(), "run")
    return group


def main() -> None:
    build_cli()(standalone_mode=True)
