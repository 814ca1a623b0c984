"""Access to packaged template circuits and prompt text."""

from __future__ import annotations

from importlib import resources


def template_text(name: str) -> str:
    """Text of a packaged template file, e.g. template_text('opamp.sp')."""
    return resources.files("sizekit").joinpath("templates", name).read_text()


def prompt_text(name: str) -> str:
    """Text of a packaged prompt template, e.g. prompt_text('expert_system.txt')."""
    return resources.files("sizekit").joinpath("prompts", name).read_text()
