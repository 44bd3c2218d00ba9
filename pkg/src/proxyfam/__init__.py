"""proxyfam: graph-kernel family attribution for SDK-embedded applications."""

__version__ = "0.1.0"
