"""Critical progeny laws: validation, generating functions, survival tables.

An offspring law is kept as a finite pmf on {0, .., max_k}.  Criticality
(mean 1) and positive variance are enforced at construction; everything
downstream (size-biasing, conditioning on extinction, survival iteration)
works from the validated pmf.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVariance,
    ImpossibleConditioning,
    NegativeProbability,
    NotCritical,
    NotNormalized,
    ParseError,
)

_ATOL = 1e-12


@dataclass(frozen=True)
class Pmf:
    """A plain finite pmf on nonnegative integers (not necessarily critical)."""

    ks: np.ndarray
    probs: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.dot(self.ks, self.probs))

    def as_dict(self) -> dict:
        return {int(k): float(q) for k, q in zip(self.ks, self.probs)}

    def sample(self, size, rng) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        return self.ks[np.searchsorted(cdf, rng.random(size), side="right").clip(max=len(self.ks) - 1)]


@dataclass(frozen=True)
class OffspringDistribution:
    """A critical offspring law with its variance and third moment."""

    ks: np.ndarray
    probs: np.ndarray
    mean: float
    sigma2: float
    third_moment: float
    max_k: int
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def pmf(self, k: int) -> float:
        idx = np.nonzero(self.ks == k)[0]
        return float(self.probs[idx[0]]) if len(idx) else 0.0

    def f(self, s):
        """Generating function f(s) = sum_k p(k) s^k."""
        return np.polyval(self._poly_coeffs(), s)

    def _poly_coeffs(self):
        coeffs = np.zeros(self.max_k + 1)
        coeffs[self.max_k - self.ks] = self.probs
        return coeffs

    def survival(self, n_max: int) -> "SurvivalTable":
        """Survival table up to n_max, cached per distribution."""
        cached = self._cache.get("survival")
        if cached is None or len(cached.theta) <= n_max:
            cached = survival_probability(self, n_max)
            self._cache["survival"] = cached
        return cached

    def as_dict(self) -> dict:
        return {int(k): float(q) for k, q in zip(self.ks, self.probs)}


@dataclass(frozen=True)
class SurvivalTable:
    """theta[n] = P(critical tree survives n generations) = 1 - f_n(0)."""

    theta: np.ndarray
    source: OffspringDistribution

    def __len__(self):
        return len(self.theta)

    def __getitem__(self, n):
        return float(self.theta[n])


def make_offspring(pmf, name: str = "") -> OffspringDistribution:
    """Validate a finite critical progeny law given as {k: p} or [(k, p)] pairs."""
    items = sorted(pmf.items()) if isinstance(pmf, dict) else sorted(pmf)
    if not items:
        raise NotNormalized("empty pmf")
    ks = np.array([int(k) for k, _ in items], dtype=np.int64)
    probs = np.array([float(q) for _, q in items], dtype=float)
    if len(np.unique(ks)) != len(ks) or np.any(ks < 0):
        raise NotNormalized("k values must be distinct nonnegative integers")
    if np.any(probs < 0):
        raise NegativeProbability(f"negative probability in {dict(items)}")
    total = probs.sum()
    if abs(total - 1.0) > _ATOL:
        raise NotNormalized(f"probabilities sum to {total!r}, not 1")
    mean = float(np.dot(ks, probs))
    if abs(mean - 1.0) > _ATOL:
        raise NotCritical(f"mean offspring {mean!r} != 1")
    sigma2 = float(np.dot(ks * (ks - 1), probs))
    if sigma2 <= 0 or probs[ks == 1].sum() > 1 - _ATOL:
        raise DegenerateVariance("offspring variance is zero (p(1) = 1)")
    third = float(np.dot(ks.astype(float) ** 3, probs))
    return OffspringDistribution(
        ks=ks, probs=probs, mean=mean, sigma2=sigma2,
        third_moment=third, max_k=int(ks.max()), name=name,
    )


def size_biased_minus_one(p: OffspringDistribution) -> Pmf:
    """The law k -> (k+1) p(k+1); first-generation law of backbone side trees.

    Sums to 1 by criticality; its mean equals sigma^2.
    """
    mask = p.ks >= 1
    ks = p.ks[mask] - 1
    probs = p.ks[mask] * p.probs[mask]
    return Pmf(ks=ks, probs=probs / probs.sum())


def survival_probability(p: OffspringDistribution, n_max: int) -> SurvivalTable:
    """theta(n) for n = 0..n_max by iterating s <- f(s) from s = 0."""
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    coeffs = p._poly_coeffs()
    theta = np.empty(n_max + 1)
    theta[0] = 1.0
    s = 0.0
    for n in range(1, n_max + 1):
        s = float(np.polyval(coeffs, s))
        # guard against tiny negative drift of 1 - s at machine precision
        theta[n] = max(1.0 - s, 0.0) if 1.0 - s > -1e-15 else 0.0
    return SurvivalTable(theta=theta, source=p)


def conditioned_offspring(p: OffspringDistribution, theta: SurvivalTable, r: int) -> Pmf:
    """Offspring law of a node whose subtree must die within r further generations.

    q_r(k) is proportional to p(k) * (1 - theta(r-1))^k: each of the k child
    subtrees must independently die within r-1 generations.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    w = p.probs * (1.0 - theta[r - 1]) ** p.ks
    z = w.sum()
    if z <= 0:
        raise ImpossibleConditioning(f"no offspring value is compatible with dying in {r} generations")
    mask = w > 0
    return Pmf(ks=p.ks[mask], probs=w[mask] / z)


def conditioned_first_generation(first_gen: Pmf, theta: SurvivalTable, r: int) -> Pmf:
    """Same h-transform as conditioned_offspring but for an arbitrary first-generation law."""
    if r < 1:
        raise ValueError("r must be >= 1")
    w = first_gen.probs * (1.0 - theta[r - 1]) ** first_gen.ks
    z = w.sum()
    if z <= 0:
        raise ImpossibleConditioning("first generation cannot die in time")
    mask = w > 0
    return Pmf(ks=first_gen.ks[mask], probs=w[mask] / z)


def _geometric_truncated(max_k: int) -> OffspringDistribution:
    """Geometric(1/2) law truncated at max_k, re-normalized and re-centered.

    Truncation breaks normalization and criticality by a tiny amount; both are
    restored by minimally adjusting p(0) and p(1).
    """
    ks = np.arange(max_k + 1)
    probs = 0.5 ** (ks + 1)
    # solve p0 + p1 = 1 - rest_mass and p1 + rest_first_moment = 1
    rest_mass = probs[2:].sum()
    rest_mean = np.dot(ks[2:], probs[2:])
    p1 = 1.0 - rest_mean
    p0 = 1.0 - rest_mass - p1
    if p0 < 0 or p1 < 0:
        raise NegativeProbability(f"cannot recenter geometric law truncated at {max_k}")
    probs[0] = p0
    probs[1] = p1
    return make_offspring(dict(zip(ks.tolist(), probs.tolist())), name=f"geometric:{max_k}")


_PRESETS = {
    "binary": lambda: make_offspring({0: 0.5, 2: 0.5}, name="binary"),
}


def load_offspring(spec: str) -> OffspringDistribution:
    """Load an offspring law from a preset name or a 'k p' line-based text."""
    spec = spec.strip()
    if spec in _PRESETS:
        return _PRESETS[spec]()
    if spec.startswith("geometric:"):
        return _geometric_truncated(int(spec.split(":", 1)[1]))
    pmf = {}
    for lineno, line in enumerate(spec.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'k p' on line {lineno}", line=lineno)
        try:
            k, q = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ParseError(f"bad value on line {lineno}: {exc}", line=lineno)
        if k in pmf:
            raise ParseError(f"duplicate k={k} on line {lineno}", line=lineno)
        pmf[k] = q
    return make_offspring(pmf)
