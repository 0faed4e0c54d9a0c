"""Hybrid quantum-classical regression with explanation-guided feedback.

The package bundles a dense statevector simulator with parameter-shift
gradients, a small dense-network engine with manual backprop, a local
surrogate explainer, four training procedures built from those parts,
and a statistical evaluation harness, all behind one CLI.
"""

__version__ = "0.1.0"
