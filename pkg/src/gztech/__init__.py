"""Guzheng playing-technique detection.

Pipeline: log-mel front end (`dsp`), synthetic clip corpus (`data`), a
numpy differentiable-operator substrate (`nncore`), the FCN technique
detector and multi-shape onset detector (`models`, `training`), decision
fusion of the two (`fusion`), and frame/note evaluation (`metrics`).
"""

__version__ = "0.1.0"
