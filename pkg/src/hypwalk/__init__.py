"""Random-walk kernels on free groups, free products, lattices and surface groups."""

__version__ = "0.1.0"
