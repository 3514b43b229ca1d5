"""
proxdiff - proximal diffusion sampling toolkit.

Moreau scores from proximal operators, the exponential-interpolation reverse
sampler, a learned proximal network trained by Moreau score matching,
baseline samplers and brute-force reference oracles.
"""

__version__ = "0.1.0"
__author__ = "proxdiff developers"
