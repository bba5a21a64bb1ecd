"""Prototype-routed ensembles of small trainable-activation MLPs.

The pieces: ``nn`` (networks, gradients, Adam), ``partition`` (prototypes
and Voronoi assignment), ``routing`` (hierarchical prototype search),
``training`` (the two-stage pipeline), ``store`` (bit-exact persistence
and budgeted inference), ``bounds`` (closed-form complexity/VC
calculators), ``data`` (benchmark targets and datasets), and ``cli``.
"""

from .bounds import (ComplexityEstimate, CurseScaling, HolderModulus,
                     complexity_estimate, curse_scaling, modulus_inverse,
                     pathway_depth_width, theorem_delta, tree_complexity,
                     vc_mlp_dstar, vc_pathways_bound, vc_pathways_bound_value)
from .data import (Dataset, ackley, fbm_path, fbm_path_chunked,
                   gaussian_mixture, load_features, rastrigin, regular_grid,
                   save_features, split)
from .errors import (BudgetError, DataFormatError, TrainingError, UsageError,
                     WeightsFileError)
from .nn import (LayerParams, MlpParams, OptimizerState, adam_step, deepen,
                 init_adam_state, init_mlp, mlp_backward, mlp_forward,
                 param_count, prelu, stored_param_count, super_expressive)
from .partition import (PrototypeSet, assign, cell_histogram, init_prototypes,
                        kmeans, softmax_routing)
from .routing import (CoveringNet, RoutingTree, build_tree, greedy_cover,
                      height_bound, tree_counts, tree_nodes_variant, tree_route)
from .store import (Manifest, MemoryLedger, PathwayRunner, WeightsFile,
                    forward_with_budget, ledger_report, load_ensemble,
                    load_manifest, load_weights, save_ensemble, save_manifest,
                    save_weights)
from .training import (PathwayEnsemble, TrainConfig, TrainReport, class_weights,
                       cross_entropy, deepen_ensemble, discover_prototypes,
                       energy_loss, evaluate, infer, mse, run_kmeans_training,
                       run_training, soft_predict, train_baseline,
                       train_pathways)

__version__ = "0.1.0"
