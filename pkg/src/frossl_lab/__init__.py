"""Frobenius-norm self-supervised objectives, their gradients, and a desk-scale lab."""

from importlib.metadata import PackageNotFoundError, version

from .objectives import KINDS, ObjectiveResult, ObjectiveSpec, ViewSet, evaluate

try:
    __version__ = version("frossl-lab")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = ["KINDS", "ObjectiveResult", "ObjectiveSpec", "ViewSet", "evaluate", "__version__"]
