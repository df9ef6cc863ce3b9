"""Pilot run for the line-fitting training experiment (tuning scratchpad)."""

import argparse
import time

import numpy as np

from mmfit.data import SynthLineConfig, generate_line_scene
from mmfit.geometry import get_model_class
from mmfit.metrics import f1_instances
from mmfit.network import make_weight_fn
from mmfit.pipeline import FitOptions, fit_scene
from mmfit.refine import RefineConfig
from mmfit.sampling import SamplerConfig
from mmfit.training import TrainConfig, train

LINE = get_model_class("line")


def make_options(s, p, seed, sequential=False, conditional=True, m=4,
                 weight_source="network"):
    sampler = SamplerConfig("line", num_instances=m, single_samples=s,
                            multi_samples=p, tau=0.015,
                            weight_source=weight_source, rng_seed=seed)
    refine = RefineConfig(sigma=1e-2, em_iterations=10, theta=0.015, min_increment=6)
    return FitOptions(sampler=sampler, refine=refine, refine_mode="consensus",
                      conditional=conditional, sequential=sequential)


def mean_f1(scenes, net, budget, seed, **kwargs):
    values = []
    for i, scene in enumerate(scenes):
        options = make_options(budget[0], budget[1], seed + i, **kwargs)
        result = fit_scene(scene, net, options)
        values.append(f1_instances(result.selected_models, scene.gt_models,
                                   scene.observations))
    return float(np.mean(values))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-scenes", type=int, default=500)
    ap.add_argument("--eval-scenes", type=int, default=30)
    ap.add_argument("--epochs", type=int, default=1)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--m-train", type=int, default=3)
    ap.add_argument("--obs", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    t0 = time.time()
    dataset = [generate_line_scene(SynthLineConfig(), seed=i)
               for i in range(args.train_scenes)]
    held_out = [generate_line_scene(SynthLineConfig(), seed=10000 + i)
                for i in range(args.eval_scenes)]
    print(f"data: {time.time()-t0:.0f}s")

    config = TrainConfig(kind="line", mode="supervised",
                         learning_rate=args.lr, batch_size=args.batch_size,
                         epochs=args.epochs, sample_count=args.k,
                         single_samples=2, multi_samples=2,
                         num_instances=args.m_train, tau=0.015,
                         observations_per_scene=args.obs, rng_seed=args.seed)
    t0 = time.time()
    net, records = train(dataset, config)
    print(f"train: {time.time()-t0:.0f}s")
    epoch_means = [r["epoch_mean_loss"] for r in records if "epoch_mean_loss" in r]
    print("epoch mean losses:", [round(v, 4) for v in epoch_means])
    if args.out:
        from mmfit.network import save_network
        save_network(net, args.out)

    t0 = time.time()
    for budget in [(2, 2), (32, 32)]:
        cond = mean_f1(held_out, net, budget, seed=1000)
        seq = mean_f1(held_out, None, budget, seed=1000, sequential=True)
        extra = ""
        if budget == (2, 2):
            uncond = mean_f1(held_out, net, budget, seed=1000, conditional=False)
            extra = f" uncond={uncond:.3f}"
        print(f"S={budget[0]} P={budget[1]}: cond={cond:.3f}{extra} seq={seq:.3f}")
    print(f"eval: {time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
