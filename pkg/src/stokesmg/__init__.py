"""Monolithic multigrid and block-factorization preconditioners for the
2D Stokes equations on simplicial meshes."""

__version__ = "0.1.0"
