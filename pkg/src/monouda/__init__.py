"""Monocular 3D detection domain adaptation on a synthetic candidate-level world.

Submodules: ``camera_geom`` (pinhole geometry, multi-scale resizing),
``boxes3d`` (oriented boxes, rotated IoU, NMS), ``evalkit`` (matching and AP),
``synthworld`` (two-domain scene generator), ``detector`` (numpy MLP head),
``selftrain`` (mean-teacher self-training) and ``harness`` (experiment runs).
"""
__version__ = "0.1.0"
