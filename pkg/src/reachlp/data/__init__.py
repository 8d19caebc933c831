"""Bundled example models."""
from importlib import resources


def text(name):
    return resources.files(__name__).joinpath(f"{name}.json").read_text()


def load(name):
    """Load a bundled model by name (``"m5"``: the five-state counterexample)."""
    from ..model import load_model
    return load_model(text(name))
