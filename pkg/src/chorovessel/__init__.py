"""Choroidal vessel segmentation workbench.

Subpackages cover the full loop: proposal generation (`presegment`), human
correction rounds (`hitl`, `server`), vessel graphs (`vesselgraph`),
morphometry (`morphometry`), accuracy evaluation (`evaluation`),
disease-association statistics (`stats`), and synthetic oracles (`synth`).
"""

__version__ = "0.1.0"
