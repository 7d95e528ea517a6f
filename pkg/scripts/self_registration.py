"""Register a phantom to itself and report how far the field drifts from identity.

Identity is not a stationary point of the likelihood: smoothed labels pull
samples toward class interiors, and zero-weight voxels outside the ROI band
are pulled into it. This script measures both effects per appearance model.
"""
import argparse
import sys

import numpy as np

from mvmmreg.appearance import VARIANTS, AppearanceVariant, roi_band
from mvmmreg.mvmm import MvmmConfig, Subject
from mvmmreg.optim import register_pair
from mvmmreg.phantom import PhantomSpec, make_phantom


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--lams", type=float, nargs="+", default=[0.5, 4.0])
    p.add_argument("--noise", type=float, default=0.0)
    args = p.parse_args()

    img, lv = make_phantom(PhantomSpec(dims=(args.size, args.size), max_disp=1.0, noise_std=args.noise))
    band = roi_band(lv, 6)
    for tag in VARIANTS:
        for lam in args.lams:
            cfg = MvmmConfig(lam=lam, appearance=AppearanceVariant(tag))
            s = Subject.build(img, lv, cfg)
            r = register_pair(s, s, cfg)
            mag = np.linalg.norm(r.disps[1].vectors, axis=-1)
            print(f"{tag:4s} lam {lam:<4g} mean|u| {np.abs(r.disps[1].vectors).mean():.3f}  "
                  f"in band {mag[band].mean():.3f}  off band {mag[~band].mean():.3f}  "
                  f"loss {r.initial_loss[0]:.4f} -> {r.final_loss[0]:.4f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
