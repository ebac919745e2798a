"""Length-based curriculum: bucket assignment by word count and the
per-epoch schedule that feeds training subsets in order of difficulty.
Longest utterances are subset 1 (easiest); epoch i trains on the union of
subsets 1..min(i, N).
"""

import math

import numpy as np

DEFAULT_BOUNDARIES = ((21, None), (11, 20), (3, 10), (1, 2))


def _norm_bounds(boundaries):
    out = []
    for lo, hi in boundaries:
        hi = math.inf if hi is None else int(hi)
        out.append((int(lo), hi))
    return out


def bucket_label(bounds):
    lo, hi = bounds
    if hi is None or hi == math.inf:
        return f"{lo}+"
    return f"{lo}-{hi}"


class CurriculumPlan:
    def __init__(self, boundaries, subsets):
        self.boundaries = boundaries
        self.subsets = subsets  # subsets[0] is subset 1, the longest bucket

    @property
    def n_subsets(self):
        return len(self.boundaries)

    def subset_of(self, utt):
        for k, (lo, hi) in enumerate(self.boundaries):
            if lo <= utt.n_words <= hi:
                return k + 1
        raise ValueError(f"n_words {utt.n_words} not covered by any bucket")


def assign_buckets(utts, boundaries=DEFAULT_BOUNDARIES):
    """Partition utterances into word-count buckets.

    Boundaries are (lo, hi) ranges in descending word-count order; hi=None
    means unbounded. Together they must tile [1, inf) exactly.
    """
    bounds = _norm_bounds(boundaries)
    if not bounds:
        raise ValueError("need at least one bucket")
    if bounds[0][1] != math.inf:
        raise ValueError("first bucket must be unbounded above")
    for k in range(1, len(bounds)):
        if bounds[k][1] != bounds[k - 1][0] - 1:
            raise ValueError(
                f"buckets {bounds[k]} and {bounds[k - 1]} leave a gap or "
                f"overlap: expected upper bound {bounds[k - 1][0] - 1}")
    if bounds[-1][0] != 1:
        raise ValueError(f"last bucket must start at 1, got {bounds[-1][0]}")
    for lo, hi in bounds:
        if lo > hi:
            raise ValueError(f"empty bucket ({lo}, {hi})")
    subsets = [[] for _ in bounds]
    for u in utts:
        for k, (lo, hi) in enumerate(bounds):
            if lo <= u.n_words <= hi:
                subsets[k].append(u)
                break
    return CurriculumPlan(bounds, subsets)


def epoch_subset(plan, epoch, seed):
    """Utterances used in training epoch `epoch` (1-based), shuffled.

    The shuffle seed is seed XOR epoch so every epoch gets a fresh but
    reproducible order.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    take = min(epoch, plan.n_subsets)
    pool = [u for subset in plan.subsets[:take] for u in subset]
    order = np.random.default_rng(int(seed) ^ int(epoch)).permutation(len(pool))
    return [pool[i] for i in order]
