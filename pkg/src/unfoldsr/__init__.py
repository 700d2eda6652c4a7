"""Sparse coding with side information via deep unfolding.

Library + CLI for l1 / l1-l1 proximal solvers, LISTA and side-information
unfolded encoders, a minimal reverse-mode diff engine, and the DMSC /
DMSC+ multimodal image super-resolution networks.
"""

from . import (  # noqa: F401
    cli,
    dataset,
    diffengine,
    errors,
    imageops,
    models,
    proximal,
    solvers,
    unfolded,
)

__version__ = "0.1.0"
