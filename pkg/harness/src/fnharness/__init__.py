"""Runner for generated functions: reads one JSON job from stdin, executes
the code against its test cases, reports one JSON result document on stdout.
"""

from .runner import main

__version__ = "0.1.0"
__all__ = ["main"]
