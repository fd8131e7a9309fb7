from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import pytest

from rwp_toolbox.cli import build_cli, invocation_template, render_placeholder
from rwp_toolbox.registry import ParamKind, ToolInfo, ToolParam, ToolRegistry, describe_params, get_tool


def sample(
    config: Path = ToolParam(help="Config.", placeholder="experiment.config"),
    probe: List[str] = ToolParam([], choices=("a", "b")),
    seed_override: Optional[int] = ToolParam(None),
    rate: float = 0.5,
) -> None:
    pass


class TestDescribeParams:
    def test_kinds_and_defaults(self):
        config, probe, seed, rate = describe_params(sample)
        assert config.kind is ParamKind.PATH and config.required
        assert probe.kind is ParamKind.LIST and probe.element_type is str and probe.choices == ("a", "b")
        assert seed.kind is ParamKind.SCALAR and seed.element_type is int and seed.default is None
        assert rate.default == 0.5 and not rate.required

    def test_flags_and_type_names(self):
        params = {p.name: p for p in describe_params(sample)}
        assert params["seed_override"].flag == "--seed-override"
        assert params["config"].type_name == "path"
        assert params["probe"].type_name == "list[str]"

    def test_unsupported_type(self):
        def bad(x: dict = ToolParam({})) -> None:
            pass

        with pytest.raises(TypeError):
            describe_params(bad)


class TestToolRegistry:
    def test_sorted_and_duplicates_rejected(self):
        registry = ToolRegistry()
        registry.add(ToolInfo("b", "", sample))
        registry.add(ToolInfo("a", "", sample))
        assert [t.name for t in registry] == ["a", "b"]
        with pytest.raises(ValueError, match="already registered"):
            registry.add(ToolInfo("a", "", lambda: None))

    def test_unknown_tool(self):
        build_cli()
        with pytest.raises(KeyError, match="nope"):
            get_tool("nope")


class TestTemplates:
    @pytest.mark.parametrize(
        "style, expected", [("mustache", "{{x}}"), ("shell", "${x}"), ("plain", "x")]
    )
    def test_placeholder_styles(self, style, expected):
        assert render_placeholder("x", style) == expected

    def test_invocation_template_lists_every_flag(self):
        build_cli()
        info = get_tool("train")
        template = invocation_template(info, "plain")
        assert template.splitlines()[0] == "rwp-toolbox run train \\"
        for p in info.params:
            assert p.flag in template
