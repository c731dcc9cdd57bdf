"""Prompt templates stored as text assets under ``data/templates``.

Lines starting with ``##`` are template metadata (name, version) and are
not sent to the model.  Placeholders use ``{name}`` syntax.
"""

from __future__ import annotations

import string
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Union

from .errors import ConfigError


class _Strict(dict):
    def __missing__(self, key):
        raise ConfigError(f"prompt template placeholder {{{key}}} has no value")


class PromptTemplates:
    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory) if directory else None
        self._cache: Dict[str, str] = {}

    def raw(self, name: str) -> str:
        if name not in self._cache:
            if self.directory is not None and (self.directory / f"{name}.txt").is_file():
                text = (self.directory / f"{name}.txt").read_text(encoding="utf-8")
            else:
                res = resources.files("cardioagent.data").joinpath("templates").joinpath(f"{name}.txt")
                if not res.is_file():
                    raise ConfigError(f"unknown prompt template {name!r}")
                text = res.read_text("utf-8")
            body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("##"))
            self._cache[name] = body.strip("\n") + "\n"
        return self._cache[name]

    def placeholders(self, name: str):
        return {f for _, f, _, _ in string.Formatter().parse(self.raw(name)) if f}

    def render(self, name: str, **values) -> str:
        return self.raw(name).format_map(_Strict(values))


DEFAULT_TEMPLATES = PromptTemplates()
