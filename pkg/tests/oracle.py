"""Slow, independent reference implementations used as test oracles.

Everything here works on Python sets of (x, y, z) tuples and never calls
into the package under test.
"""
import itertools
from collections import deque

import numpy as np

_RANK = {6: 1, 18: 2, 26: 3}


def neighbour_offsets(connectivity=26):
    return [d for d in itertools.product((-1, 0, 1), repeat=3) if any(d) and sum(map(abs, d)) <= _RANK[connectivity]]


def bfs_components(mask, connectivity=26):
    """Components as frozensets of coordinates, ordered by x-fastest minimum index."""
    offsets = neighbour_offsets(connectivity)
    seen = np.zeros(mask.shape, dtype=bool)
    comps = []
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = set(), deque([start])
        while queue:
            v = queue.popleft()
            comp.add(v)
            for d in offsets:
                w = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
                if all(0 <= w[i] < mask.shape[i] for i in range(3)) and mask[w] and not seen[w]:
                    seen[w] = True
                    queue.append(w)
        comps.append(frozenset(comp))
    return sorted(comps, key=lambda c: min((z, y, x) for x, y, z in c))


def set_iou(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def coords(mask):
    return frozenset(zip(*np.nonzero(mask)))


def brute_segment(prob, alpha, min_voxels=10, connectivity=26):
    comps = [c for c in bfs_components(prob > alpha, connectivity) if len(c) >= min_voxels]
    return comps


def brute_lsu(lesion, member_masks, connectivity=26, member_components=None):
    if member_components is None:
        member_components = [bfs_components(mask, connectivity) for mask in member_masks]
    total = 0.0
    for comps in member_components:
        best = 0.0
        for comp in comps:
            if lesion & comp:
                best = max(best, set_iou(lesion, comp))
        total += best
    return 1.0 - total / len(member_components)


def brute_psu(s, member_masks):
    return 1.0 - sum(set_iou(s, coords(m)) for m in member_masks) / len(member_masks)


def brute_structural(members, alpha, member_alphas, min_voxels=10, connectivity=26):
    """(per-lesion LSU, per-lesion LSU+, PSU, PSU+) by exhaustive enumeration."""
    members = np.asarray(members, dtype=np.float64)
    lesions = brute_segment(members.mean(axis=0), alpha, min_voxels, connectivity)
    shared = [p > alpha for p in members]
    specific = [p > a for p, a in zip(members, member_alphas)]
    s = frozenset().union(*lesions)
    shared_comps = [bfs_components(m, connectivity) for m in shared]
    specific_comps = [bfs_components(m, connectivity) for m in specific]
    return (
        [brute_lsu(les, shared, connectivity, shared_comps) for les in lesions],
        [brute_lsu(les, specific, connectivity, specific_comps) for les in lesions],
        brute_psu(s, shared),
        brute_psu(s, specific),
    )


def brute_dsc(pred, gt):
    tp = len(pred & gt)
    den = 2 * tp + len(pred - gt) + len(gt - pred)
    return 1.0 if den == 0 else 2 * tp / den


def brute_voxel_curve(unc, pred, gt, brain, n_steps=400):
    """Replace the ceil((1-f)|B|) most uncertain brain voxels by gt, one grid point at a time."""
    idx = [i for i in range(brain.size) if brain.ravel(order="F")[i]]
    u = unc.ravel(order="F")
    p = pred.ravel(order="F")
    g = gt.ravel(order="F")
    order = sorted(idx, key=lambda i: (-u[i], i))
    out = []
    for step in range(n_steps + 1):
        f = step / n_steps
        k = 0
        while k < len(order) and k < (1 - f) * len(order) - 1e-9:
            k += 1
        replaced = set(order[:k])
        pr = {i for i in idx if (g[i] if i in replaced else p[i])}
        gs = {i for i in idx if g[i]}
        out.append(brute_dsc(pr, gs))
    return out


def hand_percentile(sorted_values, q):
    """Linear-interpolation percentile on a sorted list (q in [0, 100])."""
    n = len(sorted_values)
    pos = q / 100 * (n - 1)
    lo = int(pos)
    hi = min(lo + 1, n - 1)
    return sorted_values[lo] + (pos - lo) * (sorted_values[hi] - sorted_values[lo])
