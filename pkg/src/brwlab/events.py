"""Block-event detectors and intersection counters for embedded backbone trees.

Implements the combinatorial machinery on a sampled backbone tree and its
embedding: the unique descendant property (UDP), K-tree-good conditions
(1)-(4), typical spacing, K-spatially-good conditions (5)-(6), the block
event A(i), intersect-well pairs between two independent embedded trees with
the count |I|, and the abundance event B(i, c0).

Fractional level cutoffs (1/4, 3/4, 5/6, 1/2, 4/6 of delta*n) are rounded by
floor for lower bounds and ceiling for upper bounds, so classifications are
reproducible bit-for-bit.

A lazy exact sampler for block classification is included: condition (1)/(3)
only read, per side tree, the indicator of reaching a fixed level, whose
probability has a closed form in the survival table.  The sampler draws those
indicators first and only grows the (at most two) side trees that the
remaining conditions actually inspect, which makes block frequencies
measurable at realistic block lengths.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ConfigInvalid, NotDescendant
from .offspring import (
    OffspringDistribution,
    Pmf,
    conditioned_first_generation,
    conditioned_offspring,
    size_biased_minus_one,
)
from .trees import Tree, _ArenaBuilder, _sample_counts


def _frac_floor(num: int, den: int, dn: int) -> int:
    return (num * dn) // den


def _frac_ceil(num: int, den: int, dn: int) -> int:
    return -((-num * dn) // den)


@dataclass(frozen=True)
class BlockConfig:
    """Block geometry: backbone length n cut into stretches of delta*n levels."""

    n: int
    delta: float
    K: int = 2
    c0: float = 0.05
    i: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ConfigInvalid("K must be an integer >= 2")
        if not 0 < self.delta:
            raise ConfigInvalid("delta must be positive")
        if self.K * self.delta > 0.5 + 1e-12:
            raise ConfigInvalid("need K * delta <= 1/2")
        if self.delta >= 1.0 / (self.K + 4):
            raise ConfigInvalid("need delta < 1/(K+4)")
        if self.c0 <= 0:
            raise ConfigInvalid("c0 must be positive")
        if self.i < 0:
            raise ConfigInvalid("block index i must be >= 0")
        dn = self.delta * self.n
        if abs(dn - round(dn)) > 1e-9 or round(dn) < 1:
            raise ConfigInvalid(f"delta * n = {dn!r} must be a positive integer")

    @property
    def delta_n(self) -> int:
        return int(round(self.delta * self.n))


@dataclass
class BlockClassification:
    tree_good: bool
    spatially_good: bool
    good: bool
    ell1: int | None = None
    ell2: int | None = None
    y_chain: list = field(default_factory=list)
    xprime_chain: list = field(default_factory=list)
    failure_reason: int | None = None


@dataclass
class IntersectionReport:
    count: int
    pairs: list
    tallies: dict


def _is_backbone_vertex(tree: Tree, v: int) -> bool:
    h = int(tree.heights[v])
    return h < len(tree.backbone) and int(tree.backbone[h]) == v


def _udp_descendant(tree: Tree, v: int, level_a: int, level_b: int):
    """(holds, unique level_a descendant reaching level_b) for vertex v.

    For a backbone vertex only its off-backbone subtree is read; for any other
    vertex all descendants count.
    """
    hv = int(tree.heights[v])
    if not hv < level_a < level_b:
        raise ValueError("need height(v) < level_a < level_b")
    at_b = np.nonzero(tree.heights == level_b)[0]
    if _is_backbone_vertex(tree, v):
        cands = at_b[tree.attach[at_b] == hv]
    else:
        cands = at_b[tree.attach[at_b] == tree.attach[v]]
        if len(cands):
            cands = cands[tree.ancestor_at(cands, hv) == v]
    if not len(cands):
        return False, None
    anc = np.unique(tree.ancestor_at(cands, level_a))
    if len(anc) != 1:
        return False, None
    return True, int(anc[0])


def has_udp(tree: Tree, v: int, band) -> bool:
    """Unique descendant of v at band[0] having a descendant at band[1]."""
    ok, _ = _udp_descendant(tree, v, int(band[0]), int(band[1]))
    return ok


def side_reach_levels(tree: Tree, lo: int, hi: int, target: int) -> list:
    """Backbone levels in [lo, hi) whose side tree reaches height >= target."""
    mask = (tree.attach >= lo) & (tree.attach < hi) & (tree.heights >= target)
    return sorted(int(l) for l in np.unique(tree.attach[mask]))


def typically_spaced(trace, u: int, w: int) -> bool:
    """||w - u|| <= sqrt(h(W) - h(U)) in the step law's norm; W below U."""
    tree = trace.tree
    hu, hw = int(tree.heights[u]), int(tree.heights[w])
    if hw <= hu or int(tree.ancestor_at([w], hu)[0]) != u:
        raise NotDescendant(f"node {w} is not a strict descendant of {u}")
    disp = trace.positions[w] - trace.positions[u]
    return float(trace.step.norm2(disp)[0]) <= hw - hu


def _ts(trace, u: int, w: int) -> bool:
    # internal fast path: ancestry is guaranteed by the caller
    disp = trace.positions[w] - trace.positions[u]
    gap = int(trace.tree.heights[w]) - int(trace.tree.heights[u])
    return float(trace.step.norm2(disp)[0]) <= gap


def classify_block(tree: Tree, trace, cfg: BlockConfig) -> BlockClassification:
    """Evaluate conditions (1)-(4) on the tree and (5)-(6) on the embedding."""
    dn, K, i = cfg.delta_n, cfg.K, cfg.i
    top = (i + K + 2) * dn
    if len(tree.backbone) <= top:
        raise ConfigInvalid(f"backbone must extend to level {top}")

    out = BlockClassification(tree_good=False, spatially_good=False, good=False)

    # (1) unique reaching side tree in [i dn, (i+1) dn), inside the 1/4..3/4 window
    reached = side_reach_levels(tree, i * dn, (i + 1) * dn, (i + 2) * dn)
    if len(reached) != 1:
        out.failure_reason = 1
        return out
    ell1 = reached[0]
    if not _frac_floor(4 * i + 1, 4, dn) <= ell1 <= _frac_ceil(4 * i + 3, 4, dn):
        out.failure_reason = 1
        return out
    out.ell1 = ell1

    # (2) UDP chain Y_{i+1}, .., Y_{i+K} inside the side tree of V_{ell1}
    y_chain = []
    cur = int(tree.backbone[ell1])
    for j in range(i + 1, i + K + 1):
        ok, nxt = _udp_descendant(tree, cur, j * dn, (j + 1) * dn)
        if not ok:
            out.failure_reason = 2
            out.y_chain = y_chain
            return out
        y_chain.append(nxt)
        cur = nxt
    out.y_chain = y_chain

    # (3) unique reaching side tree in [(i+K-1) dn, (i+K) dn)
    reached2 = side_reach_levels(tree, (i + K - 1) * dn, (i + K) * dn, (i + K + 1) * dn)
    if len(reached2) != 1:
        out.failure_reason = 3
        return out
    ell2 = reached2[0]
    if not _frac_floor(4 * (i + K) - 3, 4, dn) <= ell2 <= _frac_ceil(4 * (i + K) - 1, 4, dn):
        out.failure_reason = 3
        return out
    out.ell2 = ell2

    # (4) X'_{i+K}, X'_{i+K+1} off V_{ell2}; one more UDP step for Y_{i+K+1}
    ok, xp = _udp_descendant(tree, int(tree.backbone[ell2]), (i + K) * dn, (i + K + 1) * dn)
    if not ok:
        out.failure_reason = 4
        return out
    ok, xp1 = _udp_descendant(tree, xp, (i + K + 1) * dn, (i + K + 2) * dn)
    if not ok:
        out.failure_reason = 4
        out.xprime_chain = [xp]
        return out
    ok, y_last = _udp_descendant(tree, y_chain[-1], (i + K + 1) * dn, (i + K + 2) * dn)
    if not ok:
        out.failure_reason = 4
        out.xprime_chain = [xp, xp1]
        return out
    out.xprime_chain = [xp, xp1]
    out.y_chain = y_chain + [y_last]
    out.tree_good = True

    # (5) typical spacing along the backbone
    bb = tree.backbone
    pairs5 = [(bb[i * dn], bb[ell1]), (bb[ell1 + 1], bb[(i + 1) * dn])]
    pairs5 += [(bb[j * dn], bb[(j + 1) * dn]) for j in range(i + 1, i + K - 1)]
    pairs5 += [(bb[(i + K - 1) * dn], bb[ell2]), (bb[ell2 + 1], bb[(i + K) * dn])]
    for u, w in pairs5:
        if not _ts(trace, int(u), int(w)):
            out.failure_reason = 5
            return out

    # (6) typical spacing along the Y / X' chains, plus the meeting bound
    v1_plus = int(tree.ancestor_at([y_chain[0]], ell1 + 1)[0])
    v2_plus = int(tree.ancestor_at([xp], ell2 + 1)[0])
    pairs6 = [(v1_plus, y_chain[0])]
    pairs6 += list(zip(y_chain, y_chain[1:]))[: K - 1]
    pairs6.append((v2_plus, xp))
    for u, w in pairs6:
        if not _ts(trace, int(u), int(w)):
            out.failure_reason = 6
            return out
    meet = trace.positions[xp] - trace.positions[y_chain[K - 1]]
    if float(trace.step.norm2(meet)[0]) > dn:
        out.failure_reason = 6
        return out

    out.spatially_good = True
    out.good = True
    return out


# --- intersections between two independent embedded trees -------------------

def _intersection_candidates(trace, dn: int, tallies: dict, tag: str):
    """Side nodes satisfying every single-tree intersect-well condition.

    Heights in [floor(5/6 dn), dn]; junction (= backbone attachment) level in
    [floor(1/2 dn), ceil(4/6 dn)]; TS(root, Z) and TS(Z+, U).
    """
    tree = trace.tree
    u_lo = _frac_floor(5, 6, dn)
    z_lo = _frac_floor(1, 2, dn)
    z_hi = _frac_ceil(4, 6, dn)
    side = tree.attach >= 0
    cand = np.nonzero(side & (tree.heights >= u_lo) & (tree.heights <= dn))[0]
    ok_z = (tree.attach[cand] >= z_lo) & (tree.attach[cand] <= z_hi)
    tallies[f"{tag}:junction_window"] = int((~ok_z).sum())
    cand = cand[ok_z]
    if len(cand):
        # TS(root, Z): per attachment level, displacement of V_l from the root
        root = int(tree.backbone[0])
        levels = tree.attach[cand].astype(np.int64)
        bb_disp = trace.positions[tree.backbone[levels]] - trace.positions[root]
        ok_ts1 = trace.step.norm2(bb_disp) <= levels
        tallies[f"{tag}:ts_root_junction"] = int((~ok_ts1).sum())
        cand = cand[ok_ts1]
    if len(cand):
        levels = tree.attach[cand].astype(np.int64)
        # Z+ is the ancestor of U one level above the junction
        zplus = np.empty(len(cand), dtype=np.int64)
        for lv in np.unique(levels):
            sel = levels == lv
            zplus[sel] = tree.ancestor_at(cand[sel], int(lv) + 1)
        disp = trace.positions[cand] - trace.positions[zplus]
        gap = tree.heights[cand].astype(np.int64) - (levels + 1)
        ok_ts2 = trace.step.norm2(disp) <= gap
        tallies[f"{tag}:ts_branch"] = int((~ok_ts2).sum())
        cand = cand[ok_ts2]
    return cand


def count_intersections(trace1, trace2, delta_n: int, max_pairs: int = 10_000) -> IntersectionReport:
    """|I| for two independent embedded trees by site-and-height bucket join."""
    tallies = {}
    c1 = _intersection_candidates(trace1, delta_n, tallies, "t1")
    c2 = _intersection_candidates(trace2, delta_n, tallies, "t2")
    buckets = {}
    for u in c1:
        key = (int(trace1.tree.heights[u]), *(int(c) for c in trace1.positions[u]))
        buckets.setdefault(key, []).append(int(u))
    count = 0
    pairs = []
    for w in c2:
        key = (int(trace2.tree.heights[w]), *(int(c) for c in trace2.positions[w]))
        mates = buckets.get(key)
        if mates:
            count += len(mates)
            if len(pairs) < max_pairs:
                pairs.extend((u, int(w), key[1:]) for u in mates[: max_pairs - len(pairs)])
    return IntersectionReport(count=count, pairs=pairs, tallies=tallies)


def count_intersections_exhaustive(trace1, trace2, delta_n: int) -> int:
    """Oracle: test every side-node pair directly against the definition."""
    dn = delta_n
    u_lo = _frac_floor(5, 6, dn)
    z_lo = _frac_floor(1, 2, dn)
    z_hi = _frac_ceil(4, 6, dn)

    def qualifies(trace, u):
        tree = trace.tree
        lv = int(tree.attach[u])
        if lv < 0 or not u_lo <= int(tree.heights[u]) <= dn:
            return False
        if not z_lo <= lv <= z_hi:
            return False
        root = int(tree.backbone[0])
        z = int(tree.backbone[lv])
        if not typically_spaced(trace, root, z):
            return False
        zp = int(tree.ancestor_at([u], lv + 1)[0])
        if zp == u:
            return False
        if not typically_spaced(trace, zp, int(u)):
            return False
        return True

    total = 0
    good2 = [w for w in range(trace2.tree.size) if qualifies(trace2, w)]
    for u in range(trace1.tree.size):
        if not qualifies(trace1, u):
            continue
        for w in good2:
            if int(trace1.tree.heights[u]) != int(trace2.tree.heights[w]):
                continue
            if np.array_equal(trace1.positions[u], trace2.positions[w]):
                total += 1
    return total


def b_threshold(c0: float, sigma2: float, D: float, d: int, delta_n: int) -> float:
    """|I| threshold c0 * sigma^4 * D^{-d} * (delta n)^{(6-d)/2}."""
    return c0 * sigma2**2 * D ** (-d) * delta_n ** ((6 - d) / 2)


def b_event(report: IntersectionReport, cfg: BlockConfig, sigma2: float, D: float, d: int) -> bool:
    return report.count >= b_threshold(cfg.c0, sigma2, D, d, cfg.delta_n)


# --- lazy exact block sampling ----------------------------------------------

def reach_probabilities(
    p: OffspringDistribution, m: int, levels, target: int
) -> np.ndarray:
    """P(side tree of V_l reaches height `target`), per level, in closed form.

    The side tree at level l has first generation k ~ p_tilde conditioned to
    die before m; each of the k branches independently reaches `target` (while
    dying before m) with probability
    (theta(target-l-1) - theta(m-l-1)) / (1 - theta(m-l-1)).
    """
    theta = p.survival(m)
    p_tilde = size_biased_minus_one(p)
    out = np.empty(len(levels))
    for idx, lv in enumerate(levels):
        lv = int(lv)
        first = conditioned_first_generation(p_tilde, theta, m - lv)
        u = (theta[target - lv - 1] - theta[m - lv - 1]) / (1.0 - theta[m - lv - 1])
        out[idx] = 1.0 - float(np.dot(first.probs, (1.0 - u) ** first.ks))
    return out


def _weighted_pick(ks, weights, rng):
    total = weights.sum()
    cdf = np.cumsum(weights) / total
    return int(ks[np.searchsorted(cdf, rng.random(), side="right").clip(max=len(ks) - 1)])


def sample_reaching_side_tree(
    p: OffspringDistribution,
    ell: int,
    target: int,
    m: int,
    cap: int,
    rng,
):
    """Side tree of V_ell conditioned to reach `target` and die before m.

    Exact h-transform sampler: children of a must-reach node split into
    "reach and die before m" (weight a) and "die before `target`" (weight b)
    branches; at least one child must reach.  Growth stops at height `cap`.
    Returns (parents, heights) with parent -1 meaning the backbone vertex.
    """
    theta = p.survival(m)
    p_tilde = size_biased_minus_one(p)
    parents, heights = [], []
    must = [-1]  # local ids of must-reach frontier nodes (-1 = virtual root)
    front1 = np.empty(0, dtype=np.int64)  # die-before-target frontier
    front0 = np.empty(0, dtype=np.int64)  # die-before-m frontier
    law1, law0 = {}, {}
    for h in range(ell + 1, cap + 1):
        new_must, chunks1, chunks0 = [], [], []
        if must and h <= target:
            a = theta[target - h] - theta[m - h]
            b = 1.0 - theta[target - h]
            base = p_tilde if h == ell + 1 else Pmf(ks=p.ks, probs=p.probs)
            w = base.probs * ((a + b) ** base.ks - b**base.ks)
            for node in must:
                k = _weighted_pick(base.ks, w, rng)
                jw = np.array(
                    [comb(k, j) * a**j * b ** (k - j) for j in range(1, k + 1)]
                )
                j = _weighted_pick(np.arange(1, k + 1), jw, rng)
                ids = np.arange(len(parents), len(parents) + k)
                parents.extend([node] * k)
                heights.extend([h] * k)
                if h < target:
                    new_must.extend(ids[:j].tolist())
                    chunks1.append(ids[j:])
                else:
                    chunks0.append(ids[:j])
                    chunks1.append(ids[j:])
        if len(front1) and h < target:
            law = law1.get(h)
            if law is None:
                law = law1[h] = conditioned_offspring(p, theta, target - h + 1)
            counts = _sample_counts(law, len(front1), rng)
            pa = np.repeat(front1, counts)
            ids = np.arange(len(parents), len(parents) + len(pa))
            parents.extend(pa.tolist())
            heights.extend([h] * len(pa))
            chunks1.append(ids)
        if len(front0):
            law = law0.get(h)
            if law is None:
                law = law0[h] = conditioned_offspring(p, theta, m - h + 1)
            counts = _sample_counts(law, len(front0), rng)
            pa = np.repeat(front0, counts)
            ids = np.arange(len(parents), len(parents) + len(pa))
            parents.extend(pa.tolist())
            heights.extend([h] * len(pa))
            chunks0.append(ids)
        must = new_must
        front1 = np.concatenate(chunks1) if chunks1 else np.empty(0, dtype=np.int64)
        front0 = np.concatenate(chunks0) if chunks0 else np.empty(0, dtype=np.int64)
        if not must and not len(front1) and not len(front0):
            break
    return np.asarray(parents, dtype=np.int64), np.asarray(heights, dtype=np.int32)


def assemble_block_tree(cfg: BlockConfig, m: int, side_trees) -> Tree:
    """Backbone up to level (i+K+2) dn plus the given (level, parents, heights)
    side trees, as one arena tree."""
    top = (cfg.i + cfg.K + 2) * cfg.delta_n
    builder = _ArenaBuilder(top)
    for lv, parents, heights in side_trees:
        if len(parents):
            base = builder.total
            pa = np.where(parents >= 0, parents + base, lv)
            builder.append(pa, heights, np.full(len(parents), lv, dtype=np.int32))
    return builder.finish(np.arange(top + 1), top, m, False)


def sample_block_classification(
    p: OffspringDistribution,
    step,
    cfg: BlockConfig,
    m: int,
    rng,
    embed_fn=None,
    reach1: np.ndarray = None,
    reach2: np.ndarray = None,
) -> BlockClassification:
    """One exact draw of the block classification, built lazily.

    `reach1` / `reach2` are the precomputed per-level reach probabilities for
    the two stretches (computed on the fly when omitted).
    """
    from .embedding import embed

    dn, K, i = cfg.delta_n, cfg.K, cfg.i
    lv1 = np.arange(i * dn, (i + 1) * dn)
    lv2 = np.arange((i + K - 1) * dn, (i + K) * dn)
    if reach1 is None:
        reach1 = reach_probabilities(p, m, lv1, (i + 2) * dn)
    if reach2 is None:
        reach2 = reach_probabilities(p, m, lv2, (i + K + 1) * dn)

    hit1 = lv1[rng.random(len(lv1)) < reach1]
    out = BlockClassification(tree_good=False, spatially_good=False, good=False)
    if len(hit1) != 1:
        out.failure_reason = 1
        return out
    ell1 = int(hit1[0])
    if not _frac_floor(4 * i + 1, 4, dn) <= ell1 <= _frac_ceil(4 * i + 3, 4, dn):
        out.failure_reason = 1
        out.ell1 = ell1
        return out
    hit2 = lv2[rng.random(len(lv2)) < reach2]
    if len(hit2) != 1:
        out.failure_reason = 3
        out.ell1 = ell1
        return out
    ell2 = int(hit2[0])
    if not _frac_floor(4 * (i + K) - 3, 4, dn) <= ell2 <= _frac_ceil(4 * (i + K) - 1, 4, dn):
        out.failure_reason = 3
        out.ell1 = ell1
        out.ell2 = ell2
        return out

    cap = (i + K + 2) * dn
    t1 = sample_reaching_side_tree(p, ell1, (i + 2) * dn, m, cap, rng)
    t2 = sample_reaching_side_tree(p, ell2, (i + K + 1) * dn, m, cap, rng)
    tree = assemble_block_tree(cfg, m, [(ell1, *t1), (ell2, *t2)])
    trace = embed(tree, step, rng) if embed_fn is None else embed_fn(tree, step, rng)
    return classify_block(tree, trace, cfg)
