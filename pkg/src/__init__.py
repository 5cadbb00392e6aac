#Turn this directory into a package by adding an __init__.py file
#Dosctring for the package
"""
Dual-Expert Adaptation Engine

This package contains the modules for:

- Generating a seeded two-domain benchmark with a controllable shift
- Pretraining a source expert and calibrating a prompt expert
- Adapting both experts on unlabeled target data (retrieval, augmentation, interaction)
- Writing run reports, ablation tables and checkpoints

Subpackages:
- core
- engines
- outputs

"""

#Import modules to be exposed at the package level
from . import core, engines, outputs
__all__ = [
    "core",
    "engines",
    "outputs",
]
