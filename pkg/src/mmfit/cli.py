"""Command-line interface: synth, train, fit, eval and sweep subcommands.

Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors. All
randomness flows from --seed, and identical invocations produce byte-identical
output files, including SVGs and under --jobs parallelism.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys

import numpy as np

from . import data as data_mod
from .errors import FormatError, MMFitError
from .geometry import ModelInstance, get_model_class
from .metrics import (auc_recall, f1_instances, matched_vp_errors,
                      misclassification_from_labels)
from .network import load_network, save_network
from .pipeline import FitOptions, FitResult, fit_scene
from .refine import RefineConfig, default_refine_config
from .sampling import SamplerConfig, default_sampler_config
from .training import TrainConfig, default_train_config, train

RESULT_FORMAT_VERSION = 1
KIND_ALIASES = {"lines": "line", "line": "line", "vps": "vp", "vp": "vp",
                "homographies": "homography", "homography": "homography"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_sampler_flags(p: _Parser):
    p.add_argument("--instances", type=int, help="model instances per hypothesis (M)")
    p.add_argument("--single-samples", type=int, help="hypothesis pool size (S)")
    p.add_argument("--multi-samples", type=int, help="multi-hypothesis samples (P)")
    p.add_argument("--tau", type=float, help="inlier threshold")


def _add_refine_flags(p: _Parser):
    p.add_argument("--refine", choices=["none", "consensus", "em"],
                   default="consensus", help="post-processing mode")
    p.add_argument("--sigma", type=float, help="EM residual standard deviation")
    p.add_argument("--em-iterations", type=int, help="EM iteration count")
    p.add_argument("--theta", type=float, help="selection inlier threshold")
    p.add_argument("--min-increment", type=int,
                   help="minimum joint-inlier gain to keep a ranked instance")


def build_parser() -> _Parser:
    parser = _Parser(prog="mmfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate synthetic scenes")
    p.add_argument("--kind", choices=sorted(KIND_ALIASES), help="scene kind")
    p.add_argument("--count", type=int, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--num-lines", type=int, default=4)
    p.add_argument("--planes", type=int, default=2)
    p.add_argument("--points-per-plane", type=int, default=140)
    p.add_argument("--noise", type=float, default=3e-3)
    p.add_argument("--outlier-fraction", type=float, default=0.3)
    p.add_argument("--config", help="JSON config file with flag defaults")

    p = sub.add_parser("train", help="train the conditional sampling network")
    p.add_argument("--scenes", help="directory of scene files")
    p.add_argument("--out", help="output weights document")
    p.add_argument("--mode", choices=["supervised", "self-supervised"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--sample-count", type=int, help="selected samples per scene (K)")
    p.add_argument("--kappa", type=float, help="inlier-masking penalty weight")
    p.add_argument("--observations", type=int, help="observations per scene")
    p.add_argument("--batch-norm", choices=["on", "off"])
    p.add_argument("--log", help="training log path (JSON lines)")
    p.add_argument("--checkpoint-dir", help="per-epoch checkpoint directory")
    p.add_argument("--config", help="JSON config file with flag defaults")
    _add_sampler_flags(p)

    p = sub.add_parser("fit", help="fit model instances to scenes")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scene", help="one scene file (or correspondence .txt)")
    src.add_argument("--scenes", help="directory of scene files")
    p.add_argument("--weights", help="network weights document")
    p.add_argument("--weight-source",
                   choices=["network", "uniform", "uniform-with-removal"],
                   help="sampling weight source (default: network when "
                        "--weights is given, else uniform)")
    p.add_argument("--unconditional", action="store_true",
                   help="feed a zero state to the network (ablation)")
    p.add_argument("--sequential", action="store_true",
                   help="use the sequential-RANSAC baseline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="result file (or directory)")
    p.add_argument("--svg", help="SVG visualization file (or directory)")
    p.add_argument("--jobs", type=int, default=1, help="parallel scene workers")
    p.add_argument("--config", help="JSON config file with flag defaults")
    _add_sampler_flags(p)
    _add_refine_flags(p)

    p = sub.add_parser("eval", help="evaluate result files against ground truth")
    p.add_argument("--pred", help="directory of result files")
    p.add_argument("--gt", help="directory of ground-truth scenes")
    p.add_argument("--metric", choices=["f1", "me", "auc"])
    p.add_argument("--match-threshold", type=float,
                   help="instance match threshold for f1")
    p.add_argument("--out", help="write per-scene records to this JSONL file")
    p.add_argument("--config", help="JSON config file with flag defaults")

    p = sub.add_parser("sweep", help="F1 over a grid of sampling budgets")
    p.add_argument("--scenes", help="directory of scene files")
    p.add_argument("--weights", help="network weights document")
    p.add_argument("--methods", default="conditional,sequential",
                   help="comma list: conditional,unconditional,uniform,sequential")
    p.add_argument("--grid", default="1,2,4,8,16,32",
                   help="comma list of budgets used for both S and P")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write records to this JSONL file")
    p.add_argument("--config", help="JSON config file with flag defaults")
    _add_sampler_flags(p)
    _add_refine_flags(p)

    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    """Parse argv, honoring a --config JSON file as flag defaults.

    Unknown keys in the config file are rejected (usage error).
    """
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    with open(config_path) as f:
        try:
            overrides = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{config_path}: invalid JSON ({e})") from e
    if not isinstance(overrides, dict):
        raise FormatError(f"{config_path}: expected an object")
    sub = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub = action.choices[args.command]
    allowed = {a.dest for a in sub._actions} - {"help", "config"}
    unknown = sorted(set(overrides) - allowed)
    if unknown:
        parser.error(f"unknown config keys: {unknown}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


REQUIRED_FLAGS = {
    "synth": ["kind", "count", "out"],
    "train": ["scenes", "out"],
    "fit": ["out"],
    "eval": ["pred", "gt", "metric"],
    "sweep": ["scenes"],
}


def _check_required(parser: _Parser, args) -> None:
    missing = [f"--{name}" for name in REQUIRED_FLAGS[args.command]
               if getattr(args, name) is None]
    if args.command == "fit" and not (args.scene or args.scenes):
        missing.insert(0, "--scene or --scenes")
    if args.command == "fit" and args.scene and args.scenes:
        parser.error("--scene and --scenes are mutually exclusive")
    if missing:
        parser.error(f"missing required arguments: {', '.join(missing)}")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    kind = KIND_ALIASES[args.kind]
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        if kind == "line":
            scene = data_mod.generate_line_scene(
                data_mod.SynthLineConfig(num_lines=args.num_lines), seed=seed)
        elif kind == "homography":
            scene = data_mod.generate_homography_scene(
                num_planes=args.planes, points_per_plane=args.points_per_plane,
                noise=args.noise, outlier_fraction=args.outlier_fraction,
                seed=seed)
        else:
            raise FormatError("synth supports line and homography scenes")
        data_mod.save_scene(scene, os.path.join(args.out, f"scene_{i:05d}.json"))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _scene_paths(directory: str) -> list[str]:
    paths = sorted(p for p in os.listdir(directory) if p.endswith(".json"))
    if not paths:
        raise FileNotFoundError(f"{directory}: no scene files found")
    return [os.path.join(directory, p) for p in paths]


def _cmd_train(args) -> int:
    scenes = [data_mod.load_scene(p) for p in _scene_paths(args.scenes)]
    kind = scenes[0].kind
    config = default_train_config(kind, mode=args.mode)
    config.rng_seed = args.seed
    for attr, flag in [("epochs", "epochs"), ("batch_size", "batch_size"),
                       ("learning_rate", "learning_rate"),
                       ("sample_count", "sample_count"), ("kappa", "kappa"),
                       ("observations_per_scene", "observations"),
                       ("num_instances", "instances"),
                       ("single_samples", "single_samples"),
                       ("multi_samples", "multi_samples"), ("tau", "tau")]:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)
    if args.batch_norm is not None:
        config.batch_norm = args.batch_norm == "on"
    net, _records = train(scenes, config, log_path=args.log,
                          checkpoint_dir=args.checkpoint_dir)
    save_network(net, args.out)
    print(f"trained {config.epochs} epochs on {len(scenes)} scenes -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _load_any_scene(path: str) -> data_mod.Scene:
    if path.endswith(".txt"):
        return data_mod.load_correspondences(path)
    return data_mod.load_scene(path)


def _fit_options_from_args(args, kind: str, seed: int) -> FitOptions:
    sampler = default_sampler_config(kind, seed=seed)
    if args.instances is not None:
        sampler.num_instances = args.instances
    if args.single_samples is not None:
        sampler.single_samples = args.single_samples
    if args.multi_samples is not None:
        sampler.multi_samples = args.multi_samples
    if args.tau is not None:
        sampler.tau = args.tau
    weight_source = getattr(args, "weight_source", None)
    if weight_source is None:
        weight_source = "network" if getattr(args, "weights", None) else "uniform"
    sampler.weight_source = weight_source
    refine = default_refine_config(kind)
    if args.sigma is not None:
        refine.sigma = args.sigma
    if args.em_iterations is not None:
        refine.em_iterations = args.em_iterations
    if args.theta is not None:
        refine.theta = args.theta
    if args.min_increment is not None:
        refine.min_increment = args.min_increment
    return FitOptions(sampler=sampler, refine=refine, refine_mode=args.refine,
                      conditional=not getattr(args, "unconditional", False),
                      sequential=getattr(args, "sequential", False))


def result_to_dict(scene_path: str, seed: int, result: FitResult,
                   options: FitOptions) -> dict:
    return {
        "version": RESULT_FORMAT_VERSION,
        "scene": scene_path,
        "seed": seed,
        "kind": result.kind,
        "config": {
            "instances": options.sampler.num_instances,
            "single_samples": options.sampler.single_samples,
            "multi_samples": options.sampler.multi_samples,
            "tau": options.sampler.tau,
            "weight_source": options.sampler.weight_source,
            "conditional": options.conditional,
            "sequential": options.sequential,
            "refine": options.refine_mode,
            "theta": options.refine.theta,
            "min_increment": options.refine.min_increment,
        },
        "models": [m.params.ravel().tolist() for m in result.models],
        "ranking": result.ranking.tolist(),
        "selected": result.selected,
        "assignments": result.assignments.tolist(),
        "score": result.score,
        "log_prob": result.log_prob,
    }


def result_models(doc: dict, ranked_only_selected: bool) -> list[ModelInstance]:
    kind = doc["kind"]
    models = []
    for params in doc["models"]:
        arr = np.array(params, dtype=np.float64)
        if kind == "homography":
            arr = arr.reshape(3, 3)
        models.append(ModelInstance(kind, arr))
    if ranked_only_selected:
        models = models[:doc["selected"]]
    return models


def _fit_one(job) -> tuple[str, str, str | None]:
    scene_path, weights_path, args_dict, seed = job
    scene = _load_any_scene(scene_path)
    net = load_network(weights_path) if weights_path else None
    ns = argparse.Namespace(**args_dict)
    options = _fit_options_from_args(ns, scene.kind, seed)
    result = fit_scene(scene, net, options)
    doc = result_to_dict(scene_path, seed, result, options)
    text = json.dumps(doc, indent=1) + "\n"
    svg_text = None
    if args_dict["svg"]:
        from .svg import render_fit_svg
        svg_text = render_fit_svg(scene.kind, scene.observations,
                                  result.search.weights, result.assignments)
    return os.path.basename(scene_path), text, svg_text


def _cmd_fit(args) -> int:
    if args.weight_source == "network" and not args.weights:
        raise FormatError("--weight-source network requires --weights")
    scene_paths = [args.scene] if args.scene else _scene_paths(args.scenes)
    many = args.scenes is not None
    args_dict = {k: getattr(args, k) for k in
                 ("instances", "single_samples", "multi_samples", "tau",
                  "weight_source", "weights", "unconditional", "sequential",
                  "refine", "sigma", "em_iterations", "theta", "min_increment",
                  "svg")}
    jobs = [(p, args.weights, args_dict, args.seed) for p in scene_paths]
    if args.jobs > 1 and len(jobs) > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            outputs = pool.map(_fit_one, jobs, chunksize=1)
    else:
        outputs = [_fit_one(j) for j in jobs]
    if many:
        os.makedirs(args.out, exist_ok=True)
        if args.svg:
            os.makedirs(args.svg, exist_ok=True)
    for name, text, svg_text in outputs:
        out_path = os.path.join(args.out, name) if many else args.out
        with open(out_path, "w") as f:
            f.write(text)
        if svg_text is not None:
            base = name.rsplit(".", 1)[0] + ".svg"
            svg_path = os.path.join(args.svg, base) if many else args.svg
            with open(svg_path, "w") as f:
                f.write(svg_text)
    print(f"fitted {len(outputs)} scene(s) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _cmd_eval(args) -> int:
    pred_paths = sorted(p for p in os.listdir(args.pred) if p.endswith(".json"))
    if not pred_paths:
        raise FileNotFoundError(f"{args.pred}: no result files found")
    records = []
    per_run: dict[int, list] = {}
    for name in pred_paths:
        with open(os.path.join(args.pred, name)) as f:
            doc = json.load(f)
        gt_path = os.path.join(args.gt, os.path.basename(doc["scene"]))
        scene = data_mod.load_scene(gt_path)
        seed = int(doc.get("seed", 0))
        if args.metric == "f1":
            if scene.gt_models is None:
                raise FormatError(f"{gt_path}: scene has no ground-truth models")
            value = f1_instances(result_models(doc, True), scene.gt_models,
                                 scene.observations,
                                 match_threshold=args.match_threshold,
                                 intrinsics=scene.intrinsics)
            per_run.setdefault(seed, []).append(value)
            records.append({"scene": doc["scene"], "seed": seed, "f1": value})
        elif args.metric == "me":
            if scene.gt_labels is None:
                raise FormatError(f"{gt_path}: scene has no ground-truth labels")
            value = misclassification_from_labels(
                np.array(doc["assignments"]), scene.gt_labels)
            per_run.setdefault(seed, []).append(value)
            records.append({"scene": doc["scene"], "seed": seed, "me": value})
        else:  # auc
            if scene.gt_models is None:
                raise FormatError(f"{gt_path}: scene has no ground-truth models")
            errors = matched_vp_errors(result_models(doc, False),
                                       scene.gt_models, scene.intrinsics)
            per_run.setdefault(seed, []).append((errors, len(scene.gt_models)))
            records.append({"scene": doc["scene"], "seed": seed,
                            "matched_errors": errors})
    if args.metric == "auc":
        run_values = {}
        for seed, entries in per_run.items():
            errors = [e for errs, _n in entries for e in errs]
            total = sum(n for _errs, n in entries)
            run_values[seed] = auc_recall(errors, total)
    else:
        run_values = {seed: float(np.mean(v)) for seed, v in per_run.items()}
    for rec in records:
        print(json.dumps(rec))
    values = [run_values[s] for s in sorted(run_values)]
    mean, std = float(np.mean(values)), float(np.std(values))
    print()
    print(f"{'metric':<8}{'runs':>6}{'scenes':>8}{'mean':>12}{'std':>12}")
    print(f"{args.metric:<8}{len(values):>6}{len(records):>8}"
          f"{mean:>12.4f}{std:>12.4f}")
    if args.out:
        with open(args.out, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
            f.write(json.dumps({"metric": args.metric, "mean": mean,
                                "std": std, "runs": len(values)}) + "\n")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _cmd_sweep(args) -> int:
    scenes = [data_mod.load_scene(p) for p in _scene_paths(args.scenes)]
    kind = scenes[0].kind
    net = load_network(args.weights) if args.weights else None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    budgets = [int(v) for v in args.grid.split(",")]
    records = []
    for method in methods:
        if method in ("conditional", "unconditional") and net is None:
            raise FormatError(f"method {method!r} requires --weights")
        for s in budgets:
            for p in budgets:
                f1s = []
                for scene in scenes:
                    options = _fit_options_from_args(args, kind, args.seed)
                    options.sampler.single_samples = s
                    options.sampler.multi_samples = p
                    options.sequential = method == "sequential"
                    options.conditional = method == "conditional"
                    if method in ("conditional", "unconditional"):
                        options.sampler.weight_source = "network"
                    elif method == "uniform":
                        options.sampler.weight_source = "uniform"
                    result = fit_scene(scene, net, options)
                    f1s.append(f1_instances(result.selected_models,
                                            scene.gt_models, scene.observations,
                                            intrinsics=scene.intrinsics))
                records.append({"method": method, "S": s, "P": p,
                                "mean_f1": float(np.mean(f1s))})
    for rec in records:
        print(json.dumps(rec))
    print()
    for method in methods:
        print(f"mean F1, method={method} (rows P, cols S)")
        header = "P\\S".ljust(6) + "".join(f"{s:>8}" for s in budgets)
        print(header)
        for p in budgets:
            row = f"{p:<6}"
            for s in budgets:
                value = next(r["mean_f1"] for r in records
                             if r["method"] == method and r["S"] == s and r["P"] == p)
                row += f"{value:>8.3f}"
            print(row)
        print()
    if args.out:
        with open(args.out, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, list(sys.argv[1:] if argv is None else argv))
        _check_required(parser, args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as e:
        return int(e.code or 0)
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"mmfit: error: {e}", file=sys.stderr)
        return 2
    except MMFitError as e:
        print(f"mmfit: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"mmfit: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
