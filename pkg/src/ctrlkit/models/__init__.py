"""Access to the shipped model files."""

from importlib import resources

from ctrlkit.model_ir import parse_model

BUILTIN = ("pendulum", "reactor")


def builtin_text(name: str) -> str:
    if name not in BUILTIN:
        raise KeyError(f"no builtin model {name!r}")
    return (
        resources.files("ctrlkit.models") / f"{name}.mdl"
    ).read_text(encoding="utf-8")


def load_builtin(name: str):
    return parse_model(builtin_text(name))
