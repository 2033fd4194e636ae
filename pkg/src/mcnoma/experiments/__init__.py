"""Campaign driver: configuration, named recipes and the ``mcnoma`` command line."""

from .cli import main

__all__ = ["main"]
