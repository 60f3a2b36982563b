"""Forward-only continual learning engine.

A small, fully deterministic implementation of forward-only class-incremental
learning: gradient-free prompt search (CMA-ES) over a frozen surrogate
transformer, an activation-discrepancy-regularized fitness function, and an
exact recursive ridge classifier built on a knowledge-encoding matrix with
nonlinear random projection features.
"""

from foro.cma import CmaState, Candidate, cma_init, cma_ask, cma_tell, cma_best
from foro.backbone import Backbone, BackboneConfig, LayerStats
from foro.fitness import GlobalStats, cross_entropy, discrepancy, update_history
from foro.encoding import (
    Classifier,
    Kem,
    RandomProjection,
    batch_solve_oracle,
    classifier_extend,
    kem_init,
    kem_update,
    nrp_build,
    nrp_project,
    predict,
    weights_update,
)

__version__ = "0.1.0"
