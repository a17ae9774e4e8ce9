"""Six-view orthographic shape representation and drag surrogate tooling."""

__version__ = "0.1.0"
