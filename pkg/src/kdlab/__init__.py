"""kdlab: a desk-scale knowledge-distillation laboratory.

Trains small MLP students against pre-trained teachers and co-trained
self-learning teachers, logs the divergence trajectories between them, and
reproduces the relational claims (distillation gains, ablation orderings,
capacity-gap trends) on fast synthetic tasks.
"""

from kdlab._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
