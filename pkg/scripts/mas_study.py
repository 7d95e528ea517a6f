"""Multi-atlas segmentation of phantom targets: posterior fusion, majority vote
and the individual atlas propagations, scored by mean foreground Dice."""
import argparse
import sys
import time

import numpy as np

from mvmmreg.appearance import AppearanceVariant
from mvmmreg.mas import mas_pipeline
from mvmmreg.metrics import mean_foreground_dice
from mvmmreg.mvmm import MvmmConfig
from mvmmreg.optim import OptimConfig
from mvmmreg.phantom import PhantomSpec, make_registration_case

MODALITIES = ("mr", "ct", "lge")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--targets", type=int, default=10)
    p.add_argument("--pool", type=int, default=8)
    p.add_argument("--n-atlases", type=int, default=3)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--variant", default="NCC")
    p.add_argument("--lam", type=float, default=4.0)
    p.add_argument("--patch-radius", type=int, default=16)
    p.add_argument("--roi-radius", type=int, default=16)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    cfg = MvmmConfig(lam=args.lam, appearance=AppearanceVariant(args.variant, patch_radius=args.patch_radius,
                                                                roi_dilation_radius=args.roi_radius))
    fused, single, vote = [], [], []
    for t in range(args.targets):
        t0 = time.perf_counter()
        specs = [PhantomSpec(intensities=MODALITIES[j % 3], noise_std=0.03, bias_amplitude=0.1)
                 for j in range(args.pool + 1)]
        case = make_registration_case(specs, 100 + t, cfg)
        target, atlases = case.group.subjects[0], case.group.subjects[1:]
        res = mas_pipeline(atlases, target, cfg, args.n_atlases, args.rounds,
                           OptimConfig(iters_per_level=args.iters, seed=t), seed=t, jobs=args.jobs)
        fused.append(mean_foreground_dice(res.fused, target.labels))
        vote.append(mean_foreground_dice(res.majority, target.labels))
        per_atlas = [mean_foreground_dice(w, target.labels) for w in res.warped_labels]
        single.append(np.mean(per_atlas))
        print(f"target {t}: fused {fused[-1]:.4f}  majority {vote[-1]:.4f}  "
              f"single {single[-1]:.4f} (min {min(per_atlas):.4f})  {time.perf_counter() - t0:.0f}s", flush=True)
    print(f"mean: fused {np.mean(fused):.4f} ± {np.std(fused):.4f}  majority {np.mean(vote):.4f}  "
          f"single {np.mean(single):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
