"""Dislocation-density crystal plasticity FEM for dual-phase steel plates.

Plane-strain tension of a ferrite/martensite plate: hexagonal-grain
microstructure generation, 24-system BCC slip kinetics with geometrically
necessary / statistically stored dislocation evolution, rate-form FEM on
bilinear quads, and phase-partitioned postprocessing.
"""

__version__ = "0.1.0"
