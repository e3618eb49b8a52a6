"""Quadric Gaussian surfel splatting: deterministic differentiable renderer
and scene-fitting toolkit for paraboloid primitives with geodesic density."""

__version__ = "0.1.0"
