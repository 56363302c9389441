"""
smoothreg - Random-smoothing kernel regression
Kernel gradient descent on data-augmented (randomly smoothed) kernels, the
MLP augmentation experiment, convergence-rate schedules and the harness that
reproduces the simulation tables and curves.
"""

__version__ = "1.0.0"
__author__ = "smoothreg Contributors"
