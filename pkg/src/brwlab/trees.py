"""Tree arenas and exact samplers for critical trees.

Trees are stored in a flat arena (parent / height / attachment arrays) so that
million-node instances stay cache friendly and embeddings can be vectorized.
All conditioned samplers are exact: conditioning on extinction before a level
is an h-transform of the offspring law with weights from the survival table,
never rejection.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ImpossibleConditioning, InvalidHeight, ParseError
from .offspring import (
    OffspringDistribution,
    Pmf,
    conditioned_first_generation,
    conditioned_offspring,
    size_biased_minus_one,
)


@dataclass
class Tree:
    """Rooted tree in arena form.

    parents[i] is the arena id of the parent (-1 for the root), heights[i] the
    distance from the root.  For backbone trees, ids 0..n are the backbone
    V_0..V_n and attach[i] is the backbone level a side node hangs from
    (-1 on the backbone itself).
    """

    parents: np.ndarray
    heights: np.ndarray
    attach: np.ndarray
    backbone: np.ndarray
    n: int | None = None
    m: float = math.inf
    truncated: bool = False
    _children: list = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.parents)

    @property
    def n_edges(self) -> int:
        return len(self.parents) - 1

    def on_backbone(self) -> np.ndarray:
        flags = np.zeros(self.size, dtype=bool)
        flags[self.backbone] = True
        return flags

    def children(self):
        if self._children is None:
            kids = [[] for _ in range(self.size)]
            for i, pa in enumerate(self.parents):
                if pa >= 0:
                    kids[pa].append(i)
            self._children = kids
        return self._children

    def height(self) -> int:
        return int(self.heights.max())

    def ancestor_at(self, nodes, level):
        """Ancestors of `nodes` at height `level` (vectorized parent walk)."""
        cur = np.asarray(nodes, dtype=np.int64)
        steps = self.heights[cur] - level
        if np.any(steps < 0):
            raise ValueError("node below requested level")
        out = cur.copy()
        while True:
            todo = self.heights[out] > level
            if not todo.any():
                return out
            out[todo] = self.parents[out[todo]]

    def export_parent_lines(self) -> str:
        """Line format: 'id parent height backbone_flag'."""
        bb = self.on_backbone()
        lines = [
            f"{i} {self.parents[i]} {self.heights[i]} {int(bb[i])}"
            for i in range(self.size)
        ]
        return "\n".join(lines) + "\n"


def parse_parent_lines(text: str) -> Tree:
    parents, heights, flags = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 'id parent height backbone_flag' on line {lineno}", line=lineno)
        i, pa, h, fl = (int(x) for x in parts)
        if i != len(parents):
            raise ParseError(f"ids must be consecutive from 0 (line {lineno})", line=lineno)
        parents.append(pa)
        heights.append(h)
        flags.append(fl)
    parents = np.asarray(parents, dtype=np.int64)
    heights = np.asarray(heights, dtype=np.int32)
    flags = np.asarray(flags, dtype=bool)
    backbone = np.nonzero(flags)[0]
    attach = np.full(len(parents), -1, dtype=np.int32)
    for i in range(len(parents)):
        if not flags[i]:
            pa = i
            while pa >= 0 and not flags[pa]:
                pa = parents[pa]
            attach[i] = heights[pa] if pa >= 0 else -1
    return Tree(parents=parents, heights=heights, attach=attach, backbone=backbone)


def _sample_counts(pmf: Pmf, size: int, rng) -> np.ndarray:
    cdf = np.cumsum(pmf.probs)
    idx = np.searchsorted(cdf, rng.random(size), side="right").clip(max=len(pmf.ks) - 1)
    return pmf.ks[idx]


class _ArenaBuilder:
    def __init__(self, n_backbone: int):
        # backbone ids 0..n_backbone (or a single root when n_backbone == 0)
        base = np.arange(n_backbone + 1)
        self.parents = [base - 1]
        self.heights = [base.astype(np.int32)]
        self.attach = [np.full(n_backbone + 1, -1, dtype=np.int32)]
        self.total = n_backbone + 1

    def append(self, parents, heights, attach):
        ids = np.arange(self.total, self.total + len(parents))
        self.parents.append(parents.astype(np.int64))
        self.heights.append(heights.astype(np.int32))
        self.attach.append(attach.astype(np.int32))
        self.total += len(parents)
        return ids

    def finish(self, backbone, n, m, truncated) -> Tree:
        return Tree(
            parents=np.concatenate(self.parents),
            heights=np.concatenate(self.heights),
            attach=np.concatenate(self.attach),
            backbone=backbone,
            n=n,
            m=m,
            truncated=truncated,
        )


def sample_gw_tree(p: OffspringDistribution, max_height: int, rng) -> Tree:
    """Unconditioned critical Galton-Watson tree, truncated at max_height.

    Truncation is a safety cap only; the `truncated` flag marks samples whose
    frontier was still alive at the cap.
    """
    if max_height < 0:
        raise InvalidHeight("max_height must be >= 0")
    builder = _ArenaBuilder(0)
    frontier = np.array([0], dtype=np.int64)
    pmf = Pmf(ks=p.ks, probs=p.probs)
    truncated = False
    for h in range(1, max_height + 1):
        counts = _sample_counts(pmf, len(frontier), rng)
        total = int(counts.sum())
        if total == 0:
            frontier = np.empty(0, dtype=np.int64)
            break
        parents = np.repeat(frontier, counts)
        ids = builder.append(parents, np.full(total, h), np.full(total, -1))
        frontier = ids
    else:
        # nodes reached the cap; anything below them was never drawn
        truncated = bool(len(frontier))
    return builder.finish(np.empty(0, dtype=np.int64), None, math.inf, truncated)


def sample_conditioned_dying_tree(first_gen: Pmf, p: OffspringDistribution, theta, m: int, rng) -> Tree:
    """Tree with first-generation law `first_gen`, then p, of height < m exactly.

    Sampled depth-by-depth with the h-transformed offspring laws, so every
    return satisfies height < m by construction.
    """
    if m < 1:
        raise InvalidHeight("m must be >= 1")
    builder = _ArenaBuilder(0)
    root_law = conditioned_first_generation(first_gen, theta, m)
    frontier = np.array([0], dtype=np.int64)
    for h in range(1, m):
        # children at height h: the parent sits at h-1, so each child subtree
        # must die within m - h further generations
        law = root_law if h == 1 else conditioned_offspring(p, theta, m - h + 1)
        counts = _sample_counts(law, len(frontier), rng)
        total = int(counts.sum())
        if total == 0:
            break
        parents = np.repeat(frontier, counts)
        frontier = builder.append(parents, np.full(total, h), np.full(total, -1))
    return builder.finish(np.empty(0, dtype=np.int64), None, m, False)


def sample_tnm(
    p: OffspringDistribution,
    n: int,
    m: int,
    rng,
    levels=None,
    height_cap: int | None = None,
) -> Tree:
    """Backbone of length n with side trees conditioned to die before level m.

    The side tree at V_i draws its first-generation count k with probability
    proportional to p_tilde(k) (1 - theta(m-i-1))^k and then grows each branch
    with the depth-indexed conditioned offspring law.

    `levels` restricts which backbone vertices get side trees and `height_cap`
    stops growth early; both are exact restrictions of the full sample and are
    meant for experiments that provably ignore the omitted structure.
    """
    if n < 1:
        raise InvalidHeight("n must be >= 1")
    if m < 2 * n:
        raise ValueError("m must be >= 2n")
    theta = p.survival(m)
    p_tilde = size_biased_minus_one(p)
    cap = m - 1 if height_cap is None else min(height_cap, m - 1)
    truncated = height_cap is not None and height_cap < m - 1
    level_set = range(n) if levels is None else sorted(set(int(l) for l in levels))
    for lv in level_set:
        if lv < 0 or lv >= n:
            raise ValueError("side-tree levels must lie in [0, n)")
    roots_at = {}
    for lv in level_set:
        roots_at.setdefault(lv + 1, []).append(lv)

    builder = _ArenaBuilder(n)
    # offspring cdf for a side node at height h-1 (children at height h)
    cond = {}
    frontier_ids = np.empty(0, dtype=np.int64)
    frontier_attach = np.empty(0, dtype=np.int32)
    for h in range(1, cap + 1):
        new_parents = []
        new_attach = []
        if len(frontier_ids):
            law = cond.get(h)
            if law is None:
                law = cond[h] = conditioned_offspring(p, theta, m - h + 1)
            counts = _sample_counts(law, len(frontier_ids), rng)
            new_parents.append(np.repeat(frontier_ids, counts))
            new_attach.append(np.repeat(frontier_attach, counts))
        for lv in roots_at.get(h, ()):
            first = conditioned_first_generation(p_tilde, theta, m - lv)
            k = int(_sample_counts(first, 1, rng)[0])
            if k:
                new_parents.append(np.full(k, lv, dtype=np.int64))
                new_attach.append(np.full(k, lv, dtype=np.int32))
        if not new_parents:
            frontier_ids = np.empty(0, dtype=np.int64)
            frontier_attach = np.empty(0, dtype=np.int32)
            if h > max(roots_at, default=0):
                break
            continue
        parents = np.concatenate(new_parents)
        attach = np.concatenate(new_attach)
        frontier_ids = builder.append(parents, np.full(len(parents), h), attach)
        frontier_attach = attach
    return builder.finish(np.arange(n + 1), n, m, truncated)


def sample_iibp(p: OffspringDistribution, height: int, rng) -> Tree:
    """Truncated incipient infinite branching process up to `height`.

    Backbone of length `height`; unconditioned side trees (first generation
    size-biased-minus-one, then p); all growth above `height` is discarded and
    flagged.
    """
    if height < 1:
        raise InvalidHeight("height must be >= 1")
    p_tilde = size_biased_minus_one(p)
    pmf = Pmf(ks=p.ks, probs=p.probs)
    builder = _ArenaBuilder(height)
    frontier_ids = np.empty(0, dtype=np.int64)
    frontier_attach = np.empty(0, dtype=np.int32)
    truncated = False
    for h in range(1, height + 1):
        new_parents = []
        new_attach = []
        if len(frontier_ids):
            counts = _sample_counts(pmf, len(frontier_ids), rng)
            new_parents.append(np.repeat(frontier_ids, counts))
            new_attach.append(np.repeat(frontier_attach, counts))
        lv = h - 1  # side tree of V_{h-1} starts at height h
        k = int(_sample_counts(p_tilde, 1, rng)[0])
        if k:
            new_parents.append(np.full(k, lv, dtype=np.int64))
            new_attach.append(np.full(k, lv, dtype=np.int32))
        if new_parents:
            parents = np.concatenate(new_parents)
            attach = np.concatenate(new_attach)
            frontier_ids = builder.append(parents, np.full(len(parents), h), attach)
            frontier_attach = attach
        else:
            frontier_ids = np.empty(0, dtype=np.int64)
            frontier_attach = np.empty(0, dtype=np.int32)
    truncated = bool(len(frontier_ids))
    return builder.finish(np.arange(height + 1), height, math.inf, truncated)


def check_backbone_invariants(tree: Tree):
    """Per-sample invariants: backbone is a root path, heights below m, side
    trees attach strictly below V_n."""
    n = tree.n
    assert n is not None and len(tree.backbone) == n + 1
    assert np.array_equal(tree.heights[tree.backbone], np.arange(n + 1))
    assert np.array_equal(tree.parents[tree.backbone], np.arange(n + 1) - 1)
    if math.isfinite(tree.m):
        assert tree.heights.max() < tree.m
    side = np.setdiff1d(np.arange(tree.size), tree.backbone)
    if len(side):
        assert tree.attach[side].min() >= 0
        assert tree.attach[side].max() < n
