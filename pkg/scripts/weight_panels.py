"""Side-by-side PNG of the four appearance weight maps for one phantom subject."""
import argparse
import sys

import numpy as np
from PIL import Image

from mvmmreg.appearance import VARIANTS, AppearanceVariant, compute_weight_map
from mvmmreg.io import slice_image
from mvmmreg.phantom import PhantomSpec, make_phantom


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="weight_panels.png")
    p.add_argument("--modality", default="ct")
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--bias", type=float, default=0.1)
    p.add_argument("--patch-radius", type=int, default=3)
    p.add_argument("--roi-radius", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    image, labels = make_phantom(PhantomSpec(intensities=args.modality, noise_std=args.noise,
                                             bias_amplitude=args.bias, seed=args.seed))
    tiles = [slice_image(image.values)]
    for tag in VARIANTS:
        v = AppearanceVariant(tag, patch_radius=args.patch_radius, roi_dilation_radius=args.roi_radius)
        w = compute_weight_map(image, labels, v).weights
        print(f"{tag:4s} mean {w.mean():.3f}  nonzero {np.mean(w > 0):.2%}")
        tiles.append(slice_image(w))
    gap = np.full((tiles[0].shape[0], 4), 255, np.uint8)
    row = np.concatenate([t for tile in tiles for t in (tile, gap)][:-1], axis=1)
    Image.fromarray(row, mode="L").save(args.out)
    print(f"image | {' | '.join(VARIANTS)} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
