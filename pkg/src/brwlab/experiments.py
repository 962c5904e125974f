"""Monte Carlo harness: resistance growth, endpoint-pinned resistance,
volume growth, survival ratios, intersection scaling, block frequencies,
and log-log exponent fitting.

Every replica is reproducible in isolation: its RNG stream is derived from
(base seed, n, replica index) and the derived seed is written into the
per-record output.  Replica failures (solver non-convergence, bridge budget
exhaustion) are tallied and excluded from aggregates; a run with more than 1%
failures is flagged invalid.
"""

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import bridge_sample, build_trace, embed
from .errors import (
    AttemptsExhausted,
    NonPositiveValue,
    NotConverged,
    TooLarge,
    ValidationError,
)
from .events import (
    BlockConfig,
    count_intersections,
    _frac_ceil,
    _frac_floor,
    reach_probabilities,
    sample_block_classification,
)
from .offspring import (
    OffspringDistribution,
    conditioned_first_generation,
    conditioned_offspring,
    load_offspring,
    size_biased_minus_one,
)
from .resistance import effective_resistance, network_from_trace, shorted_resistance
from .seeds import stream_rng, stream_seed
from .steps import load_step
from .trees import Tree, check_backbone_invariants, sample_iibp, sample_tnm

_EPS = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    n_values: tuple
    replicas: int
    seed: int
    offspring: str = "binary"
    step: str | None = None
    m_policy: str = "2n"
    tol: float = 1e-8
    out: str | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValidationError("n_values must be strictly increasing positive integers")
        object.__setattr__(self, "n_values", ns)
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.m_policy not in ("2n", "4n"):
            raise ValidationError("m_policy must be '2n' or '4n'")
        if not 0 < self.tol < 1:
            raise ValidationError("tol must be in (0, 1)")

    @property
    def step_name(self) -> str:
        return self.step if self.step else f"lazy-srw:{self.d}"

    def m_for(self, n: int) -> int:
        return (2 if self.m_policy == "2n" else 4) * n


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    records: list
    summary: list
    fits: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    invalid: bool = False
    wall_clock: float = 0.0


def fit_exponent(points):
    """OLS slope of log(value) on log(n); returns (slope, intercept, stderr)."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(n <= 0 or v <= 0 for n, v in pts):
        raise NonPositiveValue("log-log fit requires positive coordinates")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    if len(pts) > 2:
        rss = float(np.sum((A @ coef - y) ** 2))
        sxx = float(np.sum((x - x.mean()) ** 2))
        stderr = np.sqrt(rss / (len(pts) - 2) / sxx)
    else:
        stderr = float("nan")
    return slope, intercept, float(stderr)


def _fit_for_report(points):
    """Fit policy: with >= 4 grid points the smallest n (transient) is dropped."""
    pts = sorted(points)
    used = pts[1:] if len(pts) >= 4 else pts
    slope, intercept, stderr = fit_exponent(used)
    return {"slope": slope, "intercept": intercept, "stderr": stderr, "points_used": len(used)}


def survival_ratio(p: OffspringDistribution, n_values):
    """Deterministic table of theta(n) * sigma^2 * n / 2."""
    n_values = [int(n) for n in n_values]
    theta = p.survival(max(n_values))
    return [(n, theta[n] * p.sigma2 * n / 2.0) for n in n_values]


def _summarize(records, value_key):
    out = []
    by_n = {}
    for r in records:
        if r["status"] == "ok":
            by_n.setdefault(r["n"], []).append(r[value_key])
    for n in sorted(by_n):
        vals = np.asarray(by_n[n], dtype=float)
        stderr = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else float("nan")
        out.append(
            {"d": records[0]["d"], "n": n, "mean": float(vals.mean()),
             "stderr": float(stderr), "replicas_ok": len(vals)}
        )
    return out


def _finalize(report, records):
    n_fail = sum(1 for r in records if r["status"] != "ok")
    for r in records:
        if r["status"] != "ok":
            report.failures[r["status"]] = report.failures.get(r["status"], 0) + 1
    report.invalid = n_fail > 0.01 * max(1, len(records))
    return report


def _check_trace(tree, trace):
    assert trace.multiplicity_total() == tree.n_edges, "edge multiplicity not conserved"


def _shorted_profile(net, trace, root, generations, tol):
    vals = []
    for k in generations:
        terminals = np.nonzero(trace.site_heights == k)[0]
        vals.append(shorted_resistance(net, root, terminals, tol=tol).value)
    return vals


def estimate_R(cfg: ExperimentConfig) -> ExperimentReport:
    """Mean effective resistance from the root to the shorted generation n."""
    t0 = time.perf_counter()
    p = load_offspring(cfg.offspring)
    step = load_step(cfg.step_name)
    records = []
    for n in cfg.n_values:
        for rep in range(cfg.replicas):
            seed = stream_seed(cfg.seed, n, rep)
            rng = stream_rng(cfg.seed, n, rep)
            rec = {"d": cfg.d, "n": n, "replica": rep, "seed": seed,
                   "resistance": float("nan"), "tree_size": 0, "sites": 0,
                   "solver_iters": 0, "residual": 0.0, "status": "ok"}
            try:
                tree = sample_iibp(p, n, rng)
                trace = embed(tree, step, rng)
                _check_trace(tree, trace)
                net = network_from_trace(trace)
                root = int(trace.node_site[tree.backbone[0]])
                terminals = np.nonzero(trace.site_heights == n)[0]
                res = shorted_resistance(net, root, terminals, tol=cfg.tol)
                assert res.value <= n + _EPS, f"R = {res.value} exceeds n = {n}"
                if rep == 0 and n >= 4:
                    gens = sorted({max(1, n // 4), n // 2, (3 * n) // 4, n})
                    prof = _shorted_profile(net, trace, root, gens, cfg.tol)
                    assert all(b >= a - _EPS for a, b in zip(prof, prof[1:])), (
                        f"shorted resistance not monotone in generation: {prof}")
                rec.update(resistance=res.value, tree_size=tree.size,
                           sites=trace.n_sites, solver_iters=res.iterations,
                           residual=res.residual)
            except NotConverged:
                rec["status"] = "not_converged"
            records.append(rec)
    report = ExperimentReport(
        kind="resistance", config=_cfg_dict(cfg), records=records,
        summary=_summarize(records, "resistance"),
    )
    if len(report.summary) >= 2:
        report.fits["resistance"] = _fit_for_report(
            [(s["n"], s["mean"]) for s in report.summary]
        )
    report.wall_clock = time.perf_counter() - t0
    return _finalize(report, records)


def estimate_gamma(cfg: ExperimentConfig, x) -> ExperimentReport:
    """Root-to-endpoint resistance with the backbone pinned to land at (x, n)."""
    t0 = time.perf_counter()
    p = load_offspring(cfg.offspring)
    step = load_step(cfg.step_name)
    x = np.asarray(x, dtype=np.int64)
    records = []
    for n in cfg.n_values:
        m = cfg.m_for(n)
        for rep in range(cfg.replicas):
            seed = stream_seed(cfg.seed, n, rep)
            rng = stream_rng(cfg.seed, n, rep)
            rec = {"d": cfg.d, "n": n, "replica": rep, "seed": seed,
                   "resistance": float("nan"), "tree_size": 0, "sites": 0,
                   "solver_iters": 0, "residual": 0.0, "status": "ok"}
            try:
                tree = sample_tnm(p, n, m, rng)
                check_backbone_invariants(tree)
                path = bridge_sample(step, n, x, rng)
                trace = embed(tree, step, rng, backbone_path=path)
                _check_trace(tree, trace)
                net = network_from_trace(trace)
                a = int(trace.node_site[tree.backbone[0]])
                z = int(trace.node_site[tree.backbone[n]])
                res = effective_resistance(net, a, z, tol=cfg.tol)
                assert res.value <= n + _EPS, f"gamma = {res.value} exceeds n = {n}"
                rec.update(resistance=res.value, tree_size=tree.size,
                           sites=trace.n_sites, solver_iters=res.iterations,
                           residual=res.residual)
            except AttemptsExhausted:
                rec["status"] = "bridge_exhausted"
            except NotConverged:
                rec["status"] = "not_converged"
            records.append(rec)
    report = ExperimentReport(
        kind="gamma", config=_cfg_dict(cfg, x=[int(c) for c in x]),
        records=records, summary=_summarize(records, "resistance"),
    )
    if len(cfg.n_values) >= 2:
        report.fits["gamma"] = _fit_for_report([(s["n"], s["mean"]) for s in report.summary])
    report.wall_clock = time.perf_counter() - t0
    return _finalize(report, records)


def _iibp_size(p: OffspringDistribution, n: int, rng) -> int:
    """Total node count of the height-n truncated backbone tree.

    Population recursion only: each level's frontier is the offspring of the
    previous frontier plus a fresh size-biased-minus-one first generation.
    """
    p_tilde = size_biased_minus_one(p)
    size = n + 1
    frontier = 0
    for _ in range(n):
        born = 0
        if frontier:
            counts = rng.multinomial(frontier, p.probs)
            born = int(np.dot(counts, p.ks))
        cdf = np.cumsum(p_tilde.probs)
        born += int(p_tilde.ks[min(np.searchsorted(cdf, rng.random(), side="right"),
                                   len(p_tilde.ks) - 1)])
        frontier = born
        size += frontier
    return size


def estimate_volume(cfg: ExperimentConfig) -> ExperimentReport:
    """Mean total size of the height-n backbone tree and its growth exponent."""
    t0 = time.perf_counter()
    p = load_offspring(cfg.offspring)
    records = []
    for n in cfg.n_values:
        for rep in range(cfg.replicas):
            seed = stream_seed(cfg.seed, n, rep)
            rng = stream_rng(cfg.seed, n, rep)
            size = _iibp_size(p, n, rng)
            records.append({"d": cfg.d, "n": n, "replica": rep, "seed": seed,
                            "resistance": float("nan"), "tree_size": size,
                            "sites": 0, "solver_iters": 0, "residual": 0.0,
                            "status": "ok"})
    report = ExperimentReport(
        kind="volume", config=_cfg_dict(cfg), records=records,
        summary=_summarize(records, "tree_size"),
    )
    if len(report.summary) >= 2:
        report.fits["volume"] = _fit_for_report([(s["n"], s["mean"]) for s in report.summary])
    report.wall_clock = time.perf_counter() - t0
    return _finalize(report, records)


def compare_dimensions(cfg: ExperimentConfig, d_values) -> ExperimentReport:
    """estimate_R across dimensions with a shared n grid and shared seeds."""
    t0 = time.perf_counter()
    records, fits = [], {}
    for d in d_values:
        sub = replace(cfg, d=int(d), step=None)
        rep = estimate_R(sub)
        records.extend(rep.records)
        fits[f"d={d}"] = rep.fits["resistance"]
    ds = sorted(int(d) for d in d_values)
    for a, b in itertools.combinations(ds, 2):
        fa, fb = fits[f"d={a}"], fits[f"d={b}"]
        fits[f"d={a}-vs-d={b}"] = {
            "slope_diff": fa["slope"] - fb["slope"],
            "pooled_stderr": float(np.hypot(fa["stderr"], fb["stderr"])),
        }
    report = ExperimentReport(
        kind="compare-dims", config=_cfg_dict(cfg, d_values=[int(d) for d in d_values]),
        records=records, summary=[], fits=fits,
    )
    by_d = {}
    for r in records:
        by_d.setdefault(r["d"], []).append(r)
    for d in sorted(by_d):
        report.summary.extend(_summarize(by_d[d], "resistance"))
    report.wall_clock = time.perf_counter() - t0
    return _finalize(report, records)


def run_intersections(
    d: int, delta_n_values, reps: int, seed: int,
    offspring: str = "binary", step: str | None = None, x=None,
) -> ExperimentReport:
    """Per-replica intersection counts |I| between two independent embedded
    trees, restricted (exactly) to the side trees the definition can read."""
    t0 = time.perf_counter()
    p = load_offspring(offspring)
    st = load_step(step if step else f"lazy-srw:{d}")
    records = []
    for dn in delta_n_values:
        dn = int(dn)
        x_vec = np.zeros(st.dim, dtype=np.int64) if x is None else np.asarray(x, np.int64)
        z_levels = range(_frac_floor(1, 2, dn), _frac_ceil(4, 6, dn) + 1)
        for rep in range(reps):
            rng1 = stream_rng(seed, dn, 2 * rep)
            rng2 = stream_rng(seed, dn, 2 * rep + 1)
            t1 = sample_tnm(p, dn, 2 * dn, rng1, levels=z_levels, height_cap=dn)
            t2 = sample_tnm(p, dn, 2 * dn, rng2, levels=z_levels, height_cap=dn)
            tr1 = embed(t1, st, rng1)
            tr2 = embed(t2, st, rng2, root_x=x_vec)
            count = count_intersections(tr1, tr2, dn).count
            records.append({"d": d, "n": dn, "replica": rep,
                            "seed": stream_seed(seed, dn, 2 * rep),
                            "count": count, "status": "ok"})
    summary = []
    for dn in delta_n_values:
        vals = np.asarray([r["count"] for r in records if r["n"] == int(dn)], dtype=float)
        summary.append({
            "d": d, "n": int(dn), "mean": float(vals.mean()),
            "second_moment": float((vals**2).mean()),
            "stderr": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan"),
            "p_zero": float((vals == 0).mean()),
            "replicas_ok": len(vals),
        })
    report = ExperimentReport(
        kind="intersections",
        config={"d": d, "delta_n_values": [int(v) for v in delta_n_values],
                "reps": reps, "seed": seed, "offspring": offspring,
                "step": step if step else f"lazy-srw:{d}"},
        records=records, summary=summary,
    )
    if len(summary) >= 2:
        try:
            report.fits["mean"] = _fit_for_report([(s["n"], s["mean"]) for s in summary])
            report.fits["second_moment"] = _fit_for_report(
                [(s["n"], s["second_moment"]) for s in summary])
        except NonPositiveValue:
            report.invalid = True
    report.wall_clock = time.perf_counter() - t0
    return report


def run_blocks(
    cfg: BlockConfig, reps: int, seed: int,
    offspring: str = "binary", step: str | None = None, d: int = 5,
    m: int | None = None,
) -> ExperimentReport:
    """Monte Carlo block classification frequencies via staged lazy sampling.

    The block event is a conjunction, so trials are rejected as early (and as
    cheaply) as possible:

    - conditions (1)/(3) are Bernoulli indicators with closed-form per-level
      reach probabilities;
    - condition (5) reads only the backbone walk;
    - condition (6) reads only the displacement sums along the two chains,
      whose lengths are determined by (ell1, ell2) alone — the chain edges
      carry i.i.d. steps independent of the tree shape, so the condition can
      be drawn before any tree exists;
    - conditions (2)/(4) (the UDP chains) are the only ones that need the two
      side trees, grown just for the trials surviving everything else.

    The factorized draw has exactly the joint law of the full model, so
    p_good is an unbiased estimate of P(A(i)).  The failure histogram tallies
    the first condition failed in evaluation order 1, 3, 5, 6, 2, 4; `good`
    counts are exact.  `tree_checked` is the number of trials that survived
    every walk condition and therefore had their side trees grown;
    `p_tree_good` is the conditional frequency of the tree-shape conditions
    (2)/(4) among those (under this staging a tree-checked trial passing them
    is good).  Only good trials are emitted as records.
    """
    from .events import (
        _udp_descendant,
        assemble_block_tree,
        sample_reaching_side_tree,
    )

    t0 = time.perf_counter()
    p = load_offspring(offspring)
    st = load_step(step if step else f"lazy-srw:{d}")
    m = 2 * cfg.n if m is None else m
    dn, K, i = cfg.delta_n, cfg.K, cfg.i
    top = (i + K + 2) * dn
    lv1 = np.arange(i * dn, (i + 1) * dn)
    lv2 = np.arange((i + K - 1) * dn, (i + K) * dn)
    reach1 = reach_probabilities(p, m, lv1, (i + 2) * dn)
    reach2 = reach_probabilities(p, m, lv2, (i + K + 1) * dn)
    w1_lo, w1_hi = _frac_floor(4 * i + 1, 4, dn), _frac_ceil(4 * i + 3, 4, dn)
    w2_lo, w2_hi = (_frac_floor(4 * (i + K) - 3, 4, dn),
                    _frac_ceil(4 * (i + K) - 1, 4, dn))

    rng = stream_rng(seed, cfg.n, 0)
    reasons = {}
    n_good = n_tree_good = n_checked = 0
    records = []
    chunk = 16384
    done = 0
    while done < reps:
        size = min(chunk, reps - done)
        u = rng.random((size, len(lv1)))
        hits1 = u < reach1
        count1 = hits1.sum(axis=1)
        ell1 = lv1[np.argmax(hits1, axis=1)]
        u = rng.random((size, len(lv2)))
        hits2 = u < reach2
        count2 = hits2.sum(axis=1)
        ell2 = lv2[np.argmax(hits2, axis=1)]
        ok1 = (count1 == 1) & (ell1 >= w1_lo) & (ell1 <= w1_hi)
        ok2 = (count2 == 1) & (ell2 >= w2_lo) & (ell2 <= w2_hi)
        reasons[1] = reasons.get(1, 0) + int((~ok1).sum())
        reasons[3] = reasons.get(3, 0) + int((ok1 & ~ok2).sum())
        alive = np.nonzero(ok1 & ok2)[0]
        if len(alive):
            # backbone walks for the survivors; condition (5) reads them alone
            paths = np.zeros((len(alive), top + 1, st.dim), dtype=np.int64)
            paths[:, 1:] = np.cumsum(st.sample((len(alive), top), rng), axis=1)
            e1, e2 = ell1[alive], ell2[alive]
            rows = np.arange(len(alive))
            pairs = [(np.full(len(alive), i * dn), e1),
                     (e1 + 1, np.full(len(alive), (i + 1) * dn))]
            pairs += [(np.full(len(alive), j * dn), np.full(len(alive), (j + 1) * dn))
                      for j in range(i + 1, i + K - 1)]
            pairs += [(np.full(len(alive), (i + K - 1) * dn), e2),
                      (e2 + 1, np.full(len(alive), (i + K) * dn))]
            ok5 = np.ones(len(alive), dtype=bool)
            for lo, hi in pairs:
                disp = paths[rows, hi] - paths[rows, lo]
                ok5 &= st.norm2(disp) <= (hi - lo)
            reasons[5] = reasons.get(5, 0) + int((~ok5).sum())
            for idx in np.nonzero(ok5)[0]:
                l1, l2 = int(e1[idx]), int(e2[idx])
                # condition (6): the chain vertices sit at fixed heights once
                # (ell1, ell2) are known, and the tree edges below them carry
                # i.i.d. steps independent of the tree shape, so the chain
                # displacements are plain random walks of known lengths.
                g1 = (i + 1) * dn - l1 - 1
                g2 = (i + K) * dn - l2 - 1
                s1 = st.sample(1, rng)[0]
                w1 = st.sample(g1, rng).sum(axis=0)
                ok6 = float(st.norm2(w1)[0]) <= g1
                hops = st.sample((K - 1, dn), rng).sum(axis=1)
                ok6 = ok6 and bool((st.norm2(hops) <= dn).all())
                s2 = st.sample(1, rng)[0]
                w2 = st.sample(g2, rng).sum(axis=0)
                ok6 = ok6 and float(st.norm2(w2)[0]) <= g2
                if ok6:
                    meet = ((paths[idx, l2] - paths[idx, l1])
                            + (s2 + w2) - (s1 + w1 + hops.sum(axis=0)))
                    ok6 = float(st.norm2(meet)[0]) <= dn
                if not ok6:
                    reasons[6] = reasons.get(6, 0) + 1
                    continue
                n_checked += 1
                # conditions (2) and the Y-part of (4) read only T(ell1)
                t1 = sample_reaching_side_tree(p, l1, (i + 2) * dn, m, top, rng)
                tree1 = assemble_block_tree(cfg, m, [(l1, *t1)])
                cur, chain_ok = int(tree1.backbone[l1]), True
                for j in range(i + 1, i + K + 1):
                    chain_ok, cur = _udp_descendant(tree1, cur, j * dn, (j + 1) * dn)
                    if not chain_ok:
                        break
                if not chain_ok:
                    reasons[2] = reasons.get(2, 0) + 1
                    continue
                y_ok, _ = _udp_descendant(tree1, cur, (i + K + 1) * dn,
                                          (i + K + 2) * dn)
                if not y_ok:
                    reasons[4] = reasons.get(4, 0) + 1
                    continue
                # the X' part of (4) reads only T(ell2)
                t2 = sample_reaching_side_tree(p, l2, (i + K + 1) * dn, m, top, rng)
                tree2 = assemble_block_tree(cfg, m, [(l2, *t2)])
                xp_ok, xp = _udp_descendant(tree2, int(tree2.backbone[l2]),
                                            (i + K) * dn, (i + K + 1) * dn)
                if xp_ok:
                    xp_ok, _ = _udp_descendant(tree2, xp, (i + K + 1) * dn,
                                               (i + K + 2) * dn)
                if not xp_ok:
                    reasons[4] = reasons.get(4, 0) + 1
                    continue
                n_tree_good += 1
                n_good += 1
                records.append({
                    "d": d, "n": cfg.n, "replica": done + int(alive[idx]),
                    "seed": stream_seed(seed, cfg.n, 0),
                    "good": 1, "tree_good": 1, "failure_reason": 0,
                    "status": "ok"})
        done += size
    report = ExperimentReport(
        kind="blocks",
        config={"d": d, "n": cfg.n, "delta": cfg.delta, "K": K, "c0": cfg.c0,
                "i": i, "m": m, "reps": reps, "seed": seed,
                "offspring": offspring, "step": step if step else f"lazy-srw:{d}"},
        records=records,
        summary=[{"reps": reps, "good": n_good, "tree_good": n_tree_good,
                  "tree_checked": n_checked, "p_good": n_good / reps,
                  "p_tree_good": n_tree_good / max(n_checked, 1),
                  "failure_histogram": dict(sorted(reasons.items()))}],
    )
    report.wall_clock = time.perf_counter() - t0
    return report


def _cfg_dict(cfg: ExperimentConfig, **extra) -> dict:
    out = {"d": cfg.d, "offspring": cfg.offspring, "step": cfg.step_name,
           "n_values": list(cfg.n_values), "m_policy": cfg.m_policy,
           "replicas": cfg.replicas, "seed": cfg.seed, "tol": cfg.tol}
    out.update(extra)
    return out


# --- exact small-instance oracles -------------------------------------------

def expected_tnm_size(p: OffspringDistribution, n: int, m: int) -> float:
    """Exact mean node count of the length-n backbone tree conditioned below m."""
    theta = p.survival(m)
    p_tilde = size_biased_minus_one(p)
    es = {0: 0.0, 1: 1.0}
    for r in range(2, m + 1):
        law = conditioned_offspring(p, theta, r)
        es[r] = 1.0 + float(np.dot(law.ks, law.probs)) * es[r - 1]
    total = float(n + 1)
    for lv in range(n):
        first = conditioned_first_generation(p_tilde, theta, m - lv)
        total += float(np.dot(first.ks, first.probs)) * es[m - lv - 1]
    return total


def _enum_subtrees(p, theta, r, cache):
    """All shapes of a tree conditioned to die within r generations.

    A shape is a tuple of child shapes; returns [(shape, probability)].
    """
    if r in cache:
        return cache[r]
    law = conditioned_offspring(p, theta, r)
    out = []
    for k, q in zip(law.ks, law.probs):
        if k == 0:
            out.append(((), float(q)))
        else:
            subs = _enum_subtrees(p, theta, r - 1, cache)
            for combo in itertools.product(subs, repeat=int(k)):
                prob = float(q)
                for _, sp in combo:
                    prob *= sp
                out.append((tuple(s for s, _ in combo), prob))
    cache[r] = out
    return out


def _shape_edges(shape):
    return len(shape) + sum(_shape_edges(s) for s in shape)


def _enum_side_trees(p, theta, m, lv):
    """Shapes of the side tree hanging at backbone level lv (may be empty)."""
    p_tilde = size_biased_minus_one(p)
    first = conditioned_first_generation(p_tilde, theta, m - lv)
    cache = {}
    out = []
    for k, q in zip(first.ks, first.probs):
        if k == 0:
            out.append(((), float(q)))
        else:
            subs = _enum_subtrees(p, theta, m - lv - 1, cache)
            for combo in itertools.product(subs, repeat=int(k)):
                prob = float(q)
                for _, sp in combo:
                    prob *= sp
                out.append((tuple(s for s, _ in combo), prob))
    return out


def _bridges(step, n, x):
    """All step-index sequences with endpoint x, with conditional probabilities."""
    seqs, probs = [], []
    for combo in itertools.product(range(len(step.support)), repeat=n):
        end = step.support[list(combo)].sum(axis=0)
        if np.array_equal(end, x):
            seqs.append(combo)
            probs.append(float(np.prod(step.probs[list(combo)])))
    total = sum(probs)
    if total == 0:
        raise ValueError(f"endpoint {tuple(x)} unreachable in {n} steps")
    return seqs, [q / total for q in probs]


def _arena_from_shapes(n, m, side_shapes):
    parents = list(range(-1, n))
    heights = list(range(n + 1))
    attach = [-1] * (n + 1)

    def add(shape, parent, h, lv):
        me = len(parents)
        parents.append(parent)
        heights.append(h)
        attach.append(lv)
        for child in shape:
            add(child, me, h + 1, lv)

    for lv, shape in enumerate(side_shapes):
        for child in shape:
            add(child, lv, lv + 1, lv)
    return Tree(
        parents=np.asarray(parents, dtype=np.int64),
        heights=np.asarray(heights, dtype=np.int32),
        attach=np.asarray(attach, dtype=np.int32),
        backbone=np.arange(n + 1),
        n=n, m=m,
    )


def enumerate_gamma(
    p: OffspringDistribution, step, n: int, m: int, x, max_outcomes: int = 2_000_000
) -> float:
    """Exact E[R(root, endpoint) | backbone lands at (x, n)] by enumerating
    every (tree shape, backbone bridge, side-edge embedding) outcome.

    Raises TooLarge with the outcome count when the state space exceeds the
    budget; the stated small instances grow beyond any feasible budget, which
    this oracle reports honestly rather than approximating.
    """
    x = np.asarray(x, dtype=np.int64)
    theta = p.survival(m)
    S = len(step.support)

    # count outcomes recursively before materializing anything: W(r) is the
    # sum over shapes dying within r generations of S^(edge count)
    def w_subtree(r, cache={}):
        key = (id(p), m, S, r)
        if key in cache:
            return cache[key]
        law = conditioned_offspring(p, theta, r)
        total = sum((S * w_subtree(r - 1)) ** int(k) if k else 1.0 for k in law.ks)
        cache[key] = total
        return total

    p_tilde = size_biased_minus_one(p)
    count = float(S) ** n  # upper bound on bridge sequences
    for lv in range(n):
        first = conditioned_first_generation(p_tilde, theta, m - lv)
        count *= sum(
            (S * w_subtree(m - lv - 1)) ** int(k) if k else 1.0 for k in first.ks
        )
    if count > max_outcomes:
        raise TooLarge(
            f"exhaustive enumeration needs about {count:.3g} outcomes "
            f"(budget {max_outcomes})")

    per_level = [_enum_side_trees(p, theta, m, lv) for lv in range(n)]
    bridges, bridge_probs = _bridges(step, n, x)
    sums = [sum(float(S) ** _shape_edges(s) for s, _ in shapes) for shapes in per_level]
    total_outcomes = len(bridges) * float(np.prod(sums)) if n else 0.0
    if total_outcomes > max_outcomes:
        raise TooLarge(
            f"exhaustive enumeration needs {total_outcomes:.3g} outcomes "
            f"(budget {max_outcomes})")

    expectation = 0.0
    total_prob = 0.0
    for side_combo in itertools.product(*per_level):
        shapes = [s for s, _ in side_combo]
        tree_prob = 1.0
        for _, q in side_combo:
            tree_prob *= q
        tree = _arena_from_shapes(n, m, shapes)
        side_edges = np.nonzero((tree.parents >= 0) & (tree.attach >= 0))[0]
        order = side_edges[np.argsort(tree.heights[side_edges], kind="stable")]
        for bridge, bprob in zip(bridges, bridge_probs):
            bb_pos = np.zeros((n + 1, step.dim), dtype=np.int64)
            bb_pos[1:] = np.cumsum(step.support[list(bridge)], axis=0)
            for emb in itertools.product(range(S), repeat=len(order)):
                eprob = float(np.prod(step.probs[list(emb)])) if len(order) else 1.0
                positions = np.zeros((tree.size, step.dim), dtype=np.int64)
                positions[: n + 1] = bb_pos
                for node, choice in zip(order, emb):
                    positions[node] = positions[tree.parents[node]] + step.support[choice]
                trace = build_trace(tree, step, positions)
                net = network_from_trace(trace)
                a = int(trace.node_site[0])
                z = int(trace.node_site[n])
                val = effective_resistance(net, a, z, method="dense").value
                w = tree_prob * bprob * eprob
                expectation += w * val
                total_prob += w
    return expectation / total_prob
