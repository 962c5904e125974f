"""Symmetric finite-support step laws on Z^d.

Carries the covariance-normalized norm ||x|| = sqrt(x' Q^{-1} x / d), under
which the walk satisfies E||S(n)||^2 = n, and exponential tilting with respect
to the same inner product.
"""

from dataclasses import dataclass
from math import gcd

import numpy as np

from .errors import DegenerateSupport, NotNormalized, NotSymmetric, ParseError

_ATOL = 1e-12


def _ext_gcd(a: int, b: int):
    if b == 0:
        return a, 1, 0
    g, x, y = _ext_gcd(b, a % b)
    return g, y, x - (a // b) * y


def _lattice_determinant(vectors, d: int) -> int:
    """|det| of the integer lattice generated by `vectors` (0 if rank < d)."""
    basis = [None] * d
    for vec in vectors:
        v = [int(c) for c in vec]
        for j in range(d):
            if v[j] == 0:
                continue
            if basis[j] is None:
                basis[j] = v
                v = None
                break
            a, b = basis[j][j], v[j]
            g, x, y = _ext_gcd(a, b)
            combined = [x * basis[j][t] + y * v[t] for t in range(d)]
            v = [(a // g) * v[t] - (b // g) * basis[j][t] for t in range(d)]
            basis[j] = combined
    if any(b is None for b in basis):
        return 0
    det = 1
    for j in range(d):
        det *= abs(basis[j][j])
    return det


def _walk_period(support: np.ndarray) -> int:
    """1 or 2: period 2 iff some GF(2) functional maps every step to 1."""
    d = support.shape[1]
    mods = support % 2
    for c in range(1, 1 << d):
        mask = np.array([(c >> i) & 1 for i in range(d)], dtype=np.int64)
        if np.all((mods @ mask) % 2 == 1):
            return 2
    return 1


@dataclass(frozen=True)
class StepDistribution:
    dim: int
    support: np.ndarray  # (S, d) integer displacements
    probs: np.ndarray
    Q: np.ndarray
    Qinv: np.ndarray
    D: float
    period: int
    name: str = ""

    def norm2(self, x) -> np.ndarray:
        """Squared Q^{-1} norm; accepts a vector or an (N, d) batch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("ni,ij,nj->n", x, self.Qinv, x) / self.dim

    def norm(self, x) -> float | np.ndarray:
        v = np.sqrt(self.norm2(x))
        return float(v[0]) if np.asarray(x).ndim == 1 else v

    def sample(self, size, rng) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(size), side="right").clip(max=len(self.probs) - 1)
        return self.support[idx]

    def index(self) -> dict:
        return {tuple(int(c) for c in y): i for i, y in enumerate(self.support)}


@dataclass(frozen=True)
class TiltedStep:
    base: StepDistribution
    beta: np.ndarray
    Z_beta: float
    probs: np.ndarray
    m_beta: np.ndarray

    def sample(self, size, rng) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(size), side="right").clip(max=len(self.probs) - 1)
        return self.base.support[idx]


def make_step(support, name: str = "") -> StepDistribution:
    """Validate a step law given as {tuple y: p} or [(y, p)] pairs."""
    items = sorted(support.items()) if isinstance(support, dict) else sorted(
        (tuple(int(c) for c in y), float(q)) for y, q in support
    )
    if not items:
        raise DegenerateSupport("empty support")
    vecs = np.array([y for y, _ in items], dtype=np.int64)
    probs = np.array([q for _, q in items], dtype=float)
    d = vecs.shape[1]
    if np.any(probs < 0):
        raise NotNormalized("negative step probability")
    if abs(probs.sum() - 1.0) > _ATOL:
        raise NotNormalized(f"step probabilities sum to {probs.sum()!r}")
    lookup = {tuple(y): q for y, q in zip(vecs.tolist(), probs)}
    for y, q in lookup.items():
        neg = tuple(-c for c in y)
        if abs(lookup.get(neg, 0.0) - q) > _ATOL:
            raise NotSymmetric(f"p(y) != p(-y) at y={y}")
    nz = vecs[probs > 0]
    nonzero = nz[np.any(nz != 0, axis=1)]
    if len(nonzero) == 0 or _lattice_determinant(nonzero, d) != 1:
        raise DegenerateSupport("support does not generate Z^d as a group")
    Q = np.einsum("s,si,sj->ij", probs, vecs.astype(float), vecs.astype(float))
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise DegenerateSupport("covariance matrix not positive definite")
    Qinv = np.linalg.inv(Q)
    D = float(np.linalg.det(Q) ** (1.0 / (2 * d)))
    period = _walk_period(nonzero) if 0.0 == lookup.get(tuple([0] * d), 0.0) else 1
    return StepDistribution(
        dim=d, support=vecs, probs=probs, Q=Q, Qinv=Qinv, D=D, period=period, name=name,
    )


def tilt(step: StepDistribution, beta) -> TiltedStep:
    """Exponential tilt e^{beta . y} p(y) / Z with the Q^{-1} inner product."""
    beta = np.asarray(beta, dtype=float)
    dots = step.support.astype(float) @ (step.Qinv @ beta)
    w = np.exp(dots) * step.probs
    Z = float(w.sum())
    probs = w / Z
    m = probs @ step.support.astype(float)
    return TiltedStep(base=step, beta=beta, Z_beta=Z, probs=probs, m_beta=m)


def _srw(d: int) -> StepDistribution:
    sup = {}
    for i in range(d):
        for s in (1, -1):
            y = [0] * d
            y[i] = s
            sup[tuple(y)] = 1.0 / (2 * d)
    return make_step(sup, name=f"srw:{d}")


def _lazy_srw(d: int) -> StepDistribution:
    sup = {tuple([0] * d): 0.5}
    for i in range(d):
        for s in (1, -1):
            y = [0] * d
            y[i] = s
            sup[tuple(y)] = 1.0 / (4 * d)
    return make_step(sup, name=f"lazy-srw:{d}")


def load_step(spec: str) -> StepDistribution:
    """Load a step law from a preset name or 'y_1 .. y_d p' lines."""
    spec = spec.strip()
    if spec.startswith("srw:"):
        return _srw(int(spec.split(":", 1)[1]))
    if spec.startswith("lazy-srw:"):
        return _lazy_srw(int(spec.split(":", 1)[1]))
    sup = {}
    for lineno, line in enumerate(spec.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"expected 'y_1 .. y_d p' on line {lineno}", line=lineno)
        try:
            y = tuple(int(c) for c in parts[:-1])
            q = float(parts[-1])
        except ValueError as exc:
            raise ParseError(f"bad value on line {lineno}: {exc}", line=lineno)
        if y in sup:
            raise ParseError(f"duplicate site {y} on line {lineno}", line=lineno)
        sup[y] = q
    return make_step(sup)
