"""Effective resistance on weighted multigraphs.

Parallel edges are merged into conductances up front.  The solver pipeline is
exact-reduction first (drop dangling trees, contract series chains), then a
Jacobi-preconditioned conjugate-gradient solve of the grounded Laplacian;
small systems go dense.  Independent oracles (dense pseudoinverse, explicit
flow-energy minimization, commute-time Monte Carlo) live alongside.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import Disconnected, NotConverged, ParseError, TooLarge


@dataclass
class Network:
    """Undirected weighted graph; conductances positive, parallels pre-merged."""

    n_nodes: int
    edge_a: np.ndarray
    edge_b: np.ndarray
    conductance: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.conductance)

    def laplacian(self) -> sp.csr_matrix:
        i = np.concatenate([self.edge_a, self.edge_b])
        j = np.concatenate([self.edge_b, self.edge_a])
        w = np.concatenate([self.conductance, self.conductance])
        off = sp.coo_matrix((-w, (i, j)), shape=(self.n_nodes, self.n_nodes)).tocsr()
        deg = -np.asarray(off.sum(axis=1)).ravel()
        return off + sp.diags(deg)

    def adjacency(self) -> sp.csr_matrix:
        i = np.concatenate([self.edge_a, self.edge_b])
        j = np.concatenate([self.edge_b, self.edge_a])
        w = np.concatenate([self.conductance, self.conductance])
        return sp.coo_matrix((w, (i, j)), shape=(self.n_nodes, self.n_nodes)).tocsr()


@dataclass
class ResistanceResult:
    value: float
    method: str
    iterations: int = 0
    residual: float = 0.0


def make_network(n_nodes: int, edges) -> Network:
    """Build a network from (a, b, conductance) triples, merging parallels."""
    edges = [(int(a), int(b), float(c)) for a, b, c in edges]
    if not edges:
        return Network(n_nodes, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    arr = np.asarray(edges, dtype=float)
    a = arr[:, 0].astype(np.int64)
    b = arr[:, 1].astype(np.int64)
    c = arr[:, 2]
    if np.any(c <= 0):
        raise ValueError("conductances must be positive")
    keep = a != b
    a, b, c = a[keep], b[keep], c[keep]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * n_nodes + hi
    order = np.argsort(key, kind="stable")
    key, lo, hi, c = key[order], lo[order], hi[order], c[order]
    uniq, start = np.unique(key, return_index=True)
    csum = np.concatenate([[0.0], np.cumsum(c)])
    ends = np.append(start[1:], len(c))
    merged = csum[ends] - csum[start]
    return Network(n_nodes, lo[start], hi[start], merged)


def network_from_trace(trace) -> Network:
    """Trace multigraph as a unit-conductance network (multiplicity = conductance)."""
    return make_network(
        trace.n_sites, zip(trace.edge_a, trace.edge_b, trace.edge_mult.astype(float))
    )


def _component_mask(net: Network, a: int) -> np.ndarray:
    adj = net.adjacency()
    _, labels = csgraph.connected_components(adj, directed=False)
    return labels == labels[a]


def reduce_network(net: Network, protected) -> tuple[Network, np.ndarray]:
    """Exact reduction: peel dangling trees and contract series chains.

    Nodes in `protected` survive.  Returns the reduced network and the mapping
    old-id -> new-id (-1 for removed nodes).  Resistance between protected
    nodes is unchanged.
    """
    protected = set(int(v) for v in protected)
    adj = {}  # node -> {neighbor: conductance}
    for a, b, c in zip(net.edge_a, net.edge_b, net.conductance):
        adj.setdefault(int(a), {})[int(b)] = float(c)
        adj.setdefault(int(b), {})[int(a)] = float(c)
    changed = True
    while changed:
        changed = False
        # peel degree-1 nodes
        stack = [v for v, nb in adj.items() if len(nb) == 1 and v not in protected]
        while stack:
            v = stack.pop()
            nb = adj.get(v)
            if nb is None or len(nb) != 1 or v in protected:
                continue
            (u,) = nb
            del adj[v]
            del adj[u][v]
            changed = True
            if len(adj[u]) == 1 and u not in protected:
                stack.append(u)
            elif len(adj[u]) == 0 and u not in protected:
                del adj[u]
        # contract maximal chains of degree-2 nodes
        for v in [v for v, nb in adj.items() if len(nb) == 2 and v not in protected]:
            nb = adj.get(v)
            if nb is None or len(nb) != 2 or v in protected:
                continue
            (u, cu), (w, cw) = nb.items()
            new_c = 1.0 / (1.0 / cu + 1.0 / cw)
            del adj[v]
            del adj[u][v]
            del adj[w][v]
            changed = True
            if u == w:
                # hanging loop: carries no current
                if len(adj[u]) == 0 and u not in protected:
                    del adj[u]
                continue
            if w in adj[u]:
                adj[u][w] += new_c
                adj[w][u] = adj[u][w]
            else:
                adj[u][w] = new_c
                adj[w][u] = new_c
    kept = sorted(set(adj) | protected)
    remap = np.full(net.n_nodes, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    edges = []
    for v, nb in adj.items():
        for u, c in nb.items():
            if v < u:
                edges.append((remap[v], remap[u], c))
    return make_network(len(kept), edges), remap


def _solve_grounded(net: Network, a: int, z: int, tol: float, method: str):
    """Solve L v = e_a with v[z] = 0; returns (v[a], method, iters, residual)."""
    lap = net.laplacian().tocsc()
    keep = np.arange(net.n_nodes) != z
    sub = lap[keep][:, keep].tocsr()
    rhs = np.zeros(net.n_nodes - 1)
    a_idx = a - (1 if a > z else 0)
    rhs[a_idx] = 1.0
    n = net.n_nodes - 1
    if method == "dense" or (method == "auto" and n <= 400):
        v = np.linalg.solve(sub.toarray(), rhs)
        res = float(np.linalg.norm(sub @ v - rhs))
        return float(v[a_idx]), "dense", 0, res
    diag = sub.diagonal()
    M = sp.diags(1.0 / diag)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    cap = int(20 * np.sqrt(n) + 1000)
    v, info = spla.cg(sub, rhs, rtol=tol, atol=0.0, maxiter=cap, M=M, callback=count)
    res = float(np.linalg.norm(sub @ v - rhs))
    if info != 0:
        raise NotConverged(
            f"conjugate gradient stopped after {iters} iterations (residual {res:.3e})",
            residual=res,
            iterations=iters,
        )
    return float(v[a_idx]), "cg", iters, res


def effective_resistance(
    net: Network, a: int, z: int, tol: float = 1e-8, method: str = "auto", reduce: bool = True
) -> ResistanceResult:
    """R_eff(a <-> z); raises Disconnected / NotConverged."""
    a, z = int(a), int(z)
    if a == z:
        return ResistanceResult(0.0, "identified")
    mask = _component_mask(net, a)
    if not mask[z]:
        raise Disconnected(f"nodes {a} and {z} are in different components")
    if reduce:
        red, remap = reduce_network(net, (a, z))
        value, meth, iters, res = _solve_grounded(red, int(remap[a]), int(remap[z]), tol, method)
    else:
        # restrict to the common component so the grounded system is definite
        keep = np.nonzero(mask)[0]
        remap = np.full(net.n_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        emask = mask[net.edge_a]
        red = make_network(
            len(keep),
            zip(remap[net.edge_a[emask]], remap[net.edge_b[emask]], net.conductance[emask]),
        )
        value, meth, iters, res = _solve_grounded(red, int(remap[a]), int(remap[z]), tol, method)
    return ResistanceResult(value, meth, iters, res)


def shorted_resistance(
    net: Network, a: int, terminal_set, tol: float = 1e-8, method: str = "auto"
) -> ResistanceResult:
    """Resistance from a to the terminal set merged into one super node."""
    terminals = sorted(set(int(t) for t in terminal_set))
    if not terminals:
        raise ValueError("terminal_set is empty")
    if a in terminals:
        raise ValueError("source belongs to the terminal set")
    remap = np.arange(net.n_nodes, dtype=np.int64)
    remap[terminals] = terminals[0]
    # compact ids
    uniq, remap2 = np.unique(remap, return_inverse=True)
    merged = make_network(
        len(uniq), zip(remap2[net.edge_a], remap2[net.edge_b], net.conductance)
    )
    return effective_resistance(merged, int(remap2[a]), int(remap2[terminals[0]]), tol, method)


def dense_resistance(net: Network, a: int, z: int) -> float:
    """Laplacian-pseudoinverse oracle; dense, <= 200 nodes."""
    if net.n_nodes > 200:
        raise TooLarge("dense oracle restricted to <= 200 nodes")
    lap = net.laplacian().toarray()
    pinv = np.linalg.pinv(lap)
    e = np.zeros(net.n_nodes)
    e[a] += 1.0
    e[z] -= 1.0
    return float(e @ pinv @ e)


def thomson_resistance(net: Network, a: int, z: int) -> float:
    """Minimum energy over unit flows from a to z; tiny graphs (<= 12 edges)."""
    if net.n_edges > 12:
        raise TooLarge("flow-space oracle restricted to <= 12 edges")
    m = net.n_edges
    B = np.zeros((net.n_nodes, m))
    for e, (u, v) in enumerate(zip(net.edge_a, net.edge_b)):
        B[u, e] += 1.0
        B[v, e] -= 1.0
    r = 1.0 / net.conductance
    div = np.zeros(net.n_nodes)
    div[a] = 1.0
    div[z] = -1.0
    # KKT system for min theta' R theta subject to B theta = div
    kkt = np.block([[2.0 * np.diag(r), B.T], [B, np.zeros((net.n_nodes, net.n_nodes))]])
    rhs = np.concatenate([np.zeros(m), div])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    theta = sol[:m]
    if np.linalg.norm(B @ theta - div) > 1e-8:
        raise Disconnected("no unit flow exists (graph disconnects the terminals)")
    return float(theta @ (r * theta))


def brute_force_resistance(net: Network, a: int, z: int) -> float:
    """Dense pseudoinverse value, cross-checked against the flow oracle when tiny."""
    value = dense_resistance(net, a, z)
    if net.n_edges <= 12:
        flow = thomson_resistance(net, a, z)
        if abs(flow - value) > 1e-8 * max(1.0, abs(value)):
            raise AssertionError(f"flow oracle {flow} disagrees with dense value {value}")
    return value


def commute_time_mc(net: Network, a: int, z: int, rng, reps: int) -> float:
    """Monte Carlo estimate of E_a tau_z + E_z tau_a on the weighted walk."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    adj = net.adjacency()
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    cum = [None] * net.n_nodes
    nbrs = [None] * net.n_nodes
    for v in range(net.n_nodes):
        w = data[indptr[v]:indptr[v + 1]]
        nbrs[v] = indices[indptr[v]:indptr[v + 1]]
        cum[v] = np.cumsum(w) / w.sum()
    total = 0
    for _ in range(reps):
        for src, dst in ((a, z), (z, a)):
            v = src
            while v != dst:
                v = int(nbrs[v][np.searchsorted(cum[v], rng.random())])
                total += 1
    return total / reps


def parse_graph_file(text: str) -> Network:
    """Header 'nodes E' then lines 'a b conductance'."""
    lines = [l.split("#", 1)[0].strip() for l in text.splitlines()]
    lines = [l for l in lines if l]
    if not lines:
        raise ParseError("empty graph file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("header must be 'nodes E'", line=1)
    n_nodes, n_edges = int(head[0]), int(head[1])
    if len(lines) - 1 != n_edges:
        raise ParseError(f"expected {n_edges} edge lines, found {len(lines) - 1}")
    edges = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("edge lines are 'a b conductance'", line=lineno)
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return make_network(n_nodes, edges)


def format_graph_file(net: Network) -> str:
    lines = [f"{net.n_nodes} {net.n_edges}"]
    for a, b, c in zip(net.edge_a, net.edge_b, net.conductance):
        lines.append(f"{a} {b} {c:.17g}")
    return "\n".join(lines) + "\n"
