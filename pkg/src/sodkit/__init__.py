"""sodkit: boundary-aware supervision, losses and evaluation for saliency maps."""
from __future__ import annotations

__version__ = "0.1.0"

from . import grid, hda_loss, integral, metrics, morphology, synth, topology, trainer  # noqa: E402

__all__ = ["grid", "hda_loss", "integral", "metrics", "morphology", "synth", "topology", "trainer", "__version__"]
