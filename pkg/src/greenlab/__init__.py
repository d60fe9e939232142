"""Numerical laboratory for discrete Dirichlet kernels of second-order
divergence-form elliptic operators on smooth bounded domains, with
quantitative decay, displacement-regularity, and global-extension
checks."""

__version__ = "0.1.0"
