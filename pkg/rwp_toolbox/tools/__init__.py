"""``run`` subcommands, one module each.

Importing a module registers its ``@tool`` function; :func:`discover_tools`
imports every public module of this package.
"""

from __future__ import annotations

import importlib
import pkgutil
from typing import List


def discover_tools() -> List[str]:
    """Import all tool modules and return their dotted names, sorted."""
    names = sorted(
        f"{__name__}.{module.name}"
        for module in pkgutil.iter_modules(__path__)
        if not module.name.startswith("_")
    )
    for name in names:
        importlib.import_module(name)
    return names
