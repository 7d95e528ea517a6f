"""Multi-atlas segmentation through repeated groupwise registration.

Each round draws ``n_atlases`` atlases without replacement, registers them
jointly with the target held at the identity (the common space is the
target's), and keeps their warped smoothed labels. After ``rounds`` rounds all
warped label maps are fused by the voxel posterior argmax.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import LabelVolume, ProbLabelVolume, interpolate, warp_labels
from .mvmm import MvmmConfig, Subject, SubjectGroup, fuse_prob_maps, majority_vote, posterior_array
from .optim import OptimConfig, register


@dataclass
class MasResult:
    fused: LabelVolume
    majority: LabelVolume
    posterior: ProbLabelVolume
    warped_labels: list
    warped_probs: list
    atlas_indices: list
    results: list


def round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index)]))


def _register_round(target, atlases, cfg, opt):
    group = SubjectGroup([target] + atlases, target.grid, fixed=[True] + [False] * len(atlases))
    result = register(group, cfg, opt)
    return group.disps[1:], result


def mas_pipeline(atlas_pool, target: Subject, cfg: MvmmConfig, n_atlases: int, rounds: int,
                 opt: OptimConfig = None, seed: int = 0, jobs: int = 1) -> MasResult:
    """Segment ``target`` with ``n_atlases * rounds`` atlas propagations.

    ``target`` may be unlabeled (see ``Subject.unlabeled``), in which case it
    only fixes the common grid and the atlases register among themselves.
    Rounds are independent; ``jobs > 1`` runs them in worker processes with
    identical results.
    """
    atlas_pool = list(atlas_pool)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if n_atlases < 1:
        raise ValueError("n_atlases must be >= 1")
    if len(atlas_pool) < n_atlases:
        raise ValueError(f"atlas pool of {len(atlas_pool)} cannot supply {n_atlases} atlases per round")
    opt = opt or OptimConfig(seed=seed)
    grid = target.grid
    nd = grid.ndim
    mesh = grid.index_mesh()
    picks = [sorted(round_rng(seed, r).choice(len(atlas_pool), size=n_atlases, replace=False).tolist())
             for r in range(rounds)]
    chosen = [[atlas_pool[i] for i in idx] for idx in picks]
    if jobs > 1 and rounds > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, rounds)) as pool:
            runs = list(pool.map(_register_round, [target] * rounds, chosen, [cfg] * rounds,
                                 [opt] * rounds))
    else:
        runs = [_register_round(target, atlases, cfg, opt) for atlases in chosen]
    warped_probs, warped_lbls, results = [], [], []
    for atlases, (disps, result) in zip(chosen, runs):
        results.append(result)
        for atlas, disp in zip(atlases, disps):
            warped_probs.append(interpolate(atlas.smoothed_labels.probs, mesh + disp.vectors,
                                            spatial_ndim=nd))
            warped_lbls.append(warp_labels(atlas.labels, disp))
    fused = LabelVolume(grid, fuse_prob_maps(warped_probs, cfg.prior, cfg.eps), cfg.n_classes)
    post = ProbLabelVolume(grid, posterior_array(warped_probs, cfg.prior, cfg.eps))
    return MasResult(fused, majority_vote(warped_lbls), post, warped_lbls, warped_probs, picks, results)
