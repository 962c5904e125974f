"""Random-walk embedding of trees into Z^d x Z_+ and the induced trace.

The trace is the multigraph on (site, height) pairs whose edge multiplicities
count how many tree edges map onto them.  Also holds the rejection bridge
sampler and an exact dynamic-programming oracle for conditional moments of the
walk, used to cross-check the bridge law.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AttemptsExhausted, BrwError, ParityMismatch, TooLarge
from .steps import StepDistribution
from .trees import Tree

_COORD_BOUND = 1 << 15


@dataclass
class Trace:
    """Embedded multigraph of a tree.

    site_coords[s] / site_heights[s] give the lattice point and height of site
    s; node_site maps tree arena ids to sites; edges are (site_a, site_b,
    multiplicity) with parallel tree edges already accumulated.
    """

    tree: Tree
    step: StepDistribution
    site_coords: np.ndarray
    site_heights: np.ndarray
    node_site: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_mult: np.ndarray
    positions: np.ndarray  # per tree node, lattice coordinates

    @property
    def n_sites(self) -> int:
        return len(self.site_heights)

    @property
    def backbone_sites(self) -> np.ndarray:
        return self.node_site[self.tree.backbone]

    def multiplicity_total(self) -> int:
        return int(self.edge_mult.sum())

    def export_edge_lines(self) -> str:
        """One edge per line: coords_a h_a coords_b h_b multiplicity."""
        out = []
        for a, b, w in zip(self.edge_a, self.edge_b, self.edge_mult):
            ca = " ".join(str(int(c)) for c in self.site_coords[a])
            cb = " ".join(str(int(c)) for c in self.site_coords[b])
            out.append(f"{ca} {self.site_heights[a]} {cb} {self.site_heights[b]} {w}")
        return "\n".join(out) + "\n"


def _positions_for(tree: Tree, step: StepDistribution, rng, root_x, backbone_path=None):
    d = step.dim
    pos = np.zeros((tree.size, d), dtype=np.int64)
    pos[0] = root_x
    if backbone_path is not None:
        pos[tree.backbone] = backbone_path
    order = np.argsort(tree.heights, kind="stable")
    heights = tree.heights[order]
    bounds = np.searchsorted(heights, np.arange(heights[-1] + 2))
    on_backbone = np.zeros(tree.size, dtype=bool)
    if backbone_path is not None:
        on_backbone[tree.backbone] = True
    for h in range(1, int(heights[-1]) + 1):
        ids = order[bounds[h]:bounds[h + 1]]
        if backbone_path is not None:
            ids = ids[~on_backbone[ids]]
        if not len(ids):
            continue
        pos[ids] = pos[tree.parents[ids]] + step.sample(len(ids), rng)
    if np.abs(pos).max(initial=0) >= _COORD_BOUND:
        raise BrwError("lattice coordinate overflow (|coordinate| >= 2^15)")
    return pos


def build_trace(tree: Tree, step: StepDistribution, positions: np.ndarray) -> Trace:
    """Merge per-node positions into the site-indexed trace multigraph."""
    rows = np.column_stack([tree.heights.astype(np.int64), positions])
    sites, node_site = np.unique(rows, axis=0, return_inverse=True)
    child = np.nonzero(tree.parents >= 0)[0]
    pairs = np.column_stack([node_site[tree.parents[child]], node_site[child]])
    uniq, mult = np.unique(pairs, axis=0, return_counts=True)
    return Trace(
        tree=tree,
        step=step,
        site_coords=sites[:, 1:],
        site_heights=sites[:, 0].astype(np.int64),
        node_site=node_site.astype(np.int64),
        edge_a=uniq[:, 0],
        edge_b=uniq[:, 1],
        edge_mult=mult.astype(np.int64),
        positions=positions,
    )


def embed(tree: Tree, step: StepDistribution, rng, root_x=None, backbone_path=None) -> Trace:
    """Map a tree into Z^d x Z_+: each child steps from its parent by p^1.

    `backbone_path` pins the backbone image (a (n+1, d) walk); side trees are
    embedded unconditionally either way.
    """
    d = step.dim
    root_x = np.zeros(d, dtype=np.int64) if root_x is None else np.asarray(root_x, dtype=np.int64)
    if backbone_path is not None:
        backbone_path = np.asarray(backbone_path, dtype=np.int64)
        if backbone_path.shape != (len(tree.backbone), d):
            raise ValueError("backbone_path shape mismatch")
        root_x = backbone_path[0]
    positions = _positions_for(tree, step, rng, root_x, backbone_path)
    return build_trace(tree, step, positions)


def _parity_functionals(step: StepDistribution):
    d = step.dim
    nz = step.support[(step.probs > 0) & np.any(step.support != 0, axis=1)]
    mods = nz % 2
    found = []
    for c in range(1, 1 << d):
        mask = np.array([(c >> i) & 1 for i in range(d)], dtype=np.int64)
        if np.all((mods @ mask) % 2 == 1):
            found.append(mask)
    return found


def check_bridge_parity(step: StepDistribution, n: int, x) -> None:
    x = np.asarray(x, dtype=np.int64)
    for mask in _parity_functionals(step):
        if (int(x @ mask) - n) % 2 != 0:
            raise ParityMismatch(f"endpoint {tuple(x)} unreachable in {n} steps (parity)")


def bridge_sample(step: StepDistribution, n: int, x, rng, max_attempts: int = 1_000_000):
    """Walk path S(0)=o, .., S(n)=x by rejection; exact conditional law.

    Raises AttemptsExhausted with the empirical acceptance estimate when the
    attempt budget runs out.
    """
    x = np.asarray(x, dtype=np.int64)
    check_bridge_parity(step, n, x)
    attempts = 0
    batch = max(64, min(8192, max_attempts))
    while attempts < max_attempts:
        size = min(batch, max_attempts - attempts)
        steps = step.sample((size, n), rng)
        ends = steps.sum(axis=1)
        hits = np.nonzero(np.all(ends == x, axis=1))[0]
        attempts += size
        if len(hits):
            path = np.zeros((n + 1, step.dim), dtype=np.int64)
            path[1:] = np.cumsum(steps[hits[0]], axis=0)
            return path
    raise AttemptsExhausted(
        f"no bridge to {tuple(x)} in {attempts} attempts",
        acceptance_estimate=1.0 / attempts,
    )


def estimate_bridge_acceptance(step: StepDistribution, n: int, x, rng, probes: int = 2000) -> float:
    x = np.asarray(x, dtype=np.int64)
    ends = step.sample((probes, n), rng).sum(axis=1)
    return float(np.all(ends == x, axis=1).mean())


def _step_distribution_grids(step: StepDistribution, n: int):
    reach = int(np.abs(step.support).max()) * n
    shape = (2 * reach + 1,) * step.dim
    return reach, shape


def walk_distribution(step: StepDistribution, n: int):
    """Exact law of S(n) as a dense array centred at the origin."""
    reach, shape = _step_distribution_grids(step, n)
    if step.dim > 2 or n > 24:
        raise TooLarge("exact walk distribution restricted to d <= 2, n <= 24")
    grid = np.zeros(shape)
    grid[(reach,) * step.dim] = 1.0
    for _ in range(n):
        nxt = np.zeros_like(grid)
        for y, q in zip(step.support, step.probs):
            src = tuple(
                slice(max(0, -y[i]), grid.shape[i] - max(0, y[i])) for i in range(step.dim)
            )
            dst = tuple(
                slice(max(0, y[i]), grid.shape[i] - max(0, -y[i])) for i in range(step.dim)
            )
            nxt[dst] += q * grid[src]
        grid = nxt
    return grid, reach


def conditional_moment_oracle(step: StepDistribution, n: int, k: int, x) -> float:
    """Exact E[ ||S(k)||^2 | S(n) = x ] by forward/backward products.

    Small instances only (d <= 2, n <= 24); raises TooLarge otherwise.
    """
    if step.dim > 2 or n > 24:
        raise TooLarge("oracle restricted to d <= 2, n <= 24")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    x = np.asarray(x, dtype=np.int64)
    fwd, reach = walk_distribution(step, k)
    bwd, reach_b = walk_distribution(step, n - k)
    coords = np.indices(fwd.shape).reshape(step.dim, -1).T - reach
    probs_k = fwd.reshape(-1)
    # P(S(n-k) = x - y) for every grid point y, by symmetry of the step law
    diff = x[None, :] - coords
    inside = np.all(np.abs(diff) <= reach_b, axis=1)
    tail = np.zeros(len(coords))
    idx = tuple((diff[inside] + reach_b).T)
    tail[inside] = bwd[idx]
    weights = probs_k * tail
    total = weights.sum()
    if total <= 0:
        raise ParityMismatch(f"S({n}) = {tuple(x)} has probability zero")
    return float(np.dot(weights, step.norm2(coords)) / total)
