"""Graph-clustered importance sampling for physics-informed network training.

Pipeline: collocation cloud -> kNN graph -> edge effective resistances ->
low-resistance-diameter clusters -> cluster scoring (probe losses, optional
spectral stability) -> ranked epoch assembly feeding the PDE trainer.
"""

from .graph import Laplacian, SparseGraph, build_knn, laplacian, rebuild_with_outputs
from .isr import isr_compute, node_scores_subset
from .lrd import Clustering, decompose, verify_diameter
from .network import Network, Optimizer, forward, forward_jet, init_network, param_grad, step
from .pde import batch_loss, get_problem, reference_error, residual, train
from .pointcloud import FeatureSchema, PointCloud, generate, load, save
from .resistance import EdgeResistances, er_exact, er_krylov
from .sampler import (
    ClusterSampler,
    Epoch,
    MISSampler,
    SamplerConfig,
    ScoreTable,
    UniformSampler,
    assemble_epoch,
    make_sampler,
    mis_distribution,
    probe_losses,
    score_and_map,
)

__version__ = "0.1.0"
