"""Fragment-level rigid-body diffusion on SE(3)^m for ligand docking."""

__version__ = "0.1.0"
