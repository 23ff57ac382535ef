"""Spatio-temporal tensor graph convolution for traffic forecasting.

Subpackages: ``tensor_core`` (dense 3-way tensors), ``decomp`` (Tucker,
L1-Tucker, tensor train), ``stgraph`` (fusion graph build/reconstruct),
``net`` (numpy model and training), ``data_io`` and ``cli``.
"""
__version__ = "0.1.0"
