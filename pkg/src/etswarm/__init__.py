"""Swarm shape formation and regeneration on a triangular lattice.

Modules:

- :mod:`etswarm.gene` -- bitmap parsing, gene compilation, lattice geometry
  and scaled-down genes for regeneration.
- :mod:`etswarm.protocol` -- the pure per-robot state machine.
- :mod:`etswarm.wire` -- binary framing of protocol messages.
- :mod:`etswarm.engine` -- the deterministic discrete-tick world.
- :mod:`etswarm.scenario`, :mod:`etswarm.runner`, :mod:`etswarm.render`,
  :mod:`etswarm.cli` -- scenario files, run driver, figures and CLI.
"""

from .engine import World, build_world, detect_convergence, tick
from .gene import Gene, compile_gene, embed, generate_scaled_gene, neighbor_tags, parse_bitmap
from .protocol import State, step

__all__ = [
    "Gene",
    "State",
    "World",
    "build_world",
    "compile_gene",
    "detect_convergence",
    "embed",
    "generate_scaled_gene",
    "neighbor_tags",
    "parse_bitmap",
    "step",
    "tick",
]
