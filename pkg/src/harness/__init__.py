"""Test and benchmark harness for compute systems driven by a stencil workload."""

__version__ = "0.1.0"
