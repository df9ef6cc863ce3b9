"""Robust fitting of multiple geometric model instances (lines, vanishing
points, plane homographies) with learned conditional hypothesis sampling."""

# Single-threaded BLAS and kernels: results become independent of the host
# core count (the determinism contract) and the network's interleaved
# matmul/kernel passes stop contending for cores.
import numba as _numba
from threadpoolctl import threadpool_limits as _threadpool_limits

_threadpool_limits(limits=1, user_api="blas")
_numba.set_num_threads(1)

from .data import (Scene, SynthLineConfig, generate_homography_scene,
                   generate_line_scene, load_scene, save_scene)
from .geometry import (ModelClassSpec, ModelInstance, fit_homography_minimal,
                       fit_line_minimal, fit_vp_minimal, get_model_class,
                       homography_residual, line_residual, vp_residual,
                       weighted_refit)
from .metrics import (auc_recall, f1_instances, hungarian_assign,
                      misclassification_error, vp_angle_error)
from .network import NetworkConfig, SamplingNetwork, load_network, make_weight_fn, save_network
from .pipeline import FitOptions, FitResult, fit_scene
from .refine import RefineConfig, consensus_refit, em_refine, rank_instances, select_instances
from .sampling import (MultiHypothesis, SamplerConfig, consensus_search,
                       default_sampler_config, generate_hypothesis_pool,
                       sample_minimal_set, sequential_ransac,
                       sequential_ransac_best_of)
from .scoring import (ScoringParams, compute_state, cumulative_inlier_ratio,
                      multi_instance_score, single_instance_score, soft_inlier)
from .training import (TrainConfig, default_train_config, imr_penalty,
                       reinforce_step, self_supervised_loss, supervised_loss,
                       train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
