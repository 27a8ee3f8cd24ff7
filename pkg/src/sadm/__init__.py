"""Neural construction solver for the capacitated vehicle routing problem.

Attention encoder/decoder with optional 1.5-entmax sparsity, dynamic
re-encoding of the remaining subproblem, entropy-regularized policy-gradient
training over mixed instance sizes, inference-time rotation/dilation
augmentation, and classical baselines with an exact oracle for verification.
"""

__version__ = "0.1.0"
