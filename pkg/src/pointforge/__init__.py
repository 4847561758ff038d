"""Desk-scale point-cloud-to-mesh pipeline.

Stages: conditional point diffusion sampling, point-cloud editing, SDF
fitting, marching-tetrahedra surface extraction, physically based preview
rendering, and mesh/texture evaluation metrics. Every stage is seeded and
deterministic.
"""

__version__ = "0.1.0"
