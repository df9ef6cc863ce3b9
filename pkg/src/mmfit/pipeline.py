"""End-to-end fitting pipeline: sample, refine, rank, select, assign."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Scene
from .geometry import ModelInstance, get_model_class
from .metrics import assign_observations
from .network import SamplingNetwork, make_weight_fn
from .refine import (RefineConfig, consensus_refit, default_refine_config,
                     em_refine, rank_instances, select_instances)
from .sampling import (MultiHypothesis, SamplerConfig, consensus_search,
                       default_sampler_config, removal_weights,
                       sequential_ransac_best_of, uniform_weights)
from .scoring import ScoringParams


@dataclass
class FitOptions:
    """Everything needed to turn a scene into a set of model instances."""

    sampler: SamplerConfig
    refine: RefineConfig
    refine_mode: str = "consensus"  # none | consensus | em
    conditional: bool = True        # feed the state to the network
    sequential: bool = False        # use the sequential-RANSAC baseline

    @classmethod
    def defaults(cls, kind: str, seed: int = 0) -> "FitOptions":
        return cls(sampler=default_sampler_config(kind, seed=seed),
                   refine=default_refine_config(kind))


@dataclass
class FitResult:
    """Models in ranked order plus the bookkeeping needed to recompute any
    metric offline."""

    kind: str
    scene_id: str | None
    search: MultiHypothesis
    models: list[ModelInstance]       # refined, in ranking order
    ranking: np.ndarray               # permutation of the search output
    selected: int                     # length of the selected prefix
    assignments: np.ndarray           # per-observation selected-model index or -1
    score: float
    log_prob: float

    @property
    def selected_models(self) -> list[ModelInstance]:
        return self.models[:self.selected]


def _run_search(scene: Scene, net: SamplingNetwork | None,
                options: FitOptions) -> MultiHypothesis:
    spec = get_model_class(scene.kind)
    cfg = options.sampler
    if options.sequential:
        return sequential_ransac_best_of(
            scene.observations, spec, cfg.num_instances, cfg.single_samples,
            cfg.multi_samples, cfg.tau, cfg.rng_seed)
    if cfg.weight_source == "network":
        if net is None:
            raise ValueError("weight_source 'network' requires network weights")
        weight_fn = make_weight_fn(net, conditional=options.conditional)
    elif cfg.weight_source == "uniform":
        weight_fn = uniform_weights
    elif cfg.weight_source == "uniform-with-removal":
        weight_fn = removal_weights
    else:
        raise ValueError(f"unknown weight source {cfg.weight_source!r}")
    return consensus_search(scene.observations, spec, cfg, weight_fn)


def fit_scene(scene: Scene, net: SamplingNetwork | None,
              options: FitOptions) -> FitResult:
    """Full pipeline for one scene."""
    search = _run_search(scene, net, options)
    models = list(search.models)
    params = ScoringParams(options.sampler.tau)
    if options.refine_mode == "consensus":
        models = consensus_refit(models, scene.observations, params)
    elif options.refine_mode == "em":
        models, _ = em_refine(models, scene.observations, options.refine)
    elif options.refine_mode != "none":
        raise ValueError(f"unknown refine mode {options.refine_mode!r}")
    ranking = rank_instances(models, scene.observations, params)
    ranked = [models[i] for i in ranking]
    kept = select_instances(ranked, scene.observations, options.refine)
    assignments = assign_observations(kept, scene.observations,
                                      options.refine.theta)
    return FitResult(
        kind=scene.kind,
        scene_id=scene.scene_id,
        search=search,
        models=ranked,
        ranking=ranking,
        selected=len(kept),
        assignments=assignments,
        score=search.score,
        log_prob=search.log_prob,
    )
