import numpy as np
import pytest

from brwlab.errors import (
    DegenerateVariance,
    ImpossibleConditioning,
    NotCritical,
    NotNormalized,
    ParseError,
)
from brwlab.offspring import (
    conditioned_first_generation,
    conditioned_offspring,
    load_offspring,
    make_offspring,
    size_biased_minus_one,
    survival_probability,
)


def test_binary_moments(binary):
    assert binary.mean == pytest.approx(1.0, abs=1e-15)
    assert binary.sigma2 == pytest.approx(1.0, abs=1e-15)
    assert binary.max_k == 2


def test_validation_errors():
    with pytest.raises(NotCritical):
        make_offspring({0: 0.4, 2: 0.6})
    with pytest.raises(NotNormalized):
        make_offspring({0: 0.5, 2: 0.4})
    with pytest.raises(DegenerateVariance):
        make_offspring({1: 1.0})
    with pytest.raises(NotNormalized):
        make_offspring({})


def test_geometric_is_critical(geometric):
    assert geometric.mean == pytest.approx(1.0, abs=1e-12)
    assert geometric.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert geometric.sigma2 > 0


def test_load_offspring_text_and_errors():
    p = load_offspring("0 0.5\n2 0.5  # comment\n")
    assert p.as_dict() == {0: 0.5, 2: 0.5}
    with pytest.raises(ParseError):
        load_offspring("0 0.5\nbroken line here\n")
    with pytest.raises(ParseError):
        load_offspring("0 0.5\n0 0.5\n")


def test_survival_exact_values(binary):
    # hand iteration of s <- 1/2 + s^2/2 from 0: 1/2, 5/8, 89/128
    theta = survival_probability(binary, 3)
    assert theta[0] == 1.0
    assert theta[1] == pytest.approx(0.5, abs=1e-15)
    assert theta[2] == pytest.approx(3.0 / 8.0, abs=1e-15)
    assert theta[3] == pytest.approx(39.0 / 128.0, abs=1e-15)


def test_survival_monotone_and_kolmogorov(binary, geometric):
    for p in (binary, geometric):
        theta = p.survival(2000).theta
        assert np.all(np.diff(theta) <= 1e-15)
        assert np.all(theta >= 0)
        # theta(n) ~ 2 / (sigma^2 n)
        ratio = theta[2000] * p.sigma2 * 2000 / 2.0
        assert 0.9 <= ratio <= 1.1


def test_size_biased_minus_one_mean_is_sigma2(binary, geometric):
    for p in (binary, geometric):
        tilde = size_biased_minus_one(p)
        assert tilde.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert tilde.mean == pytest.approx(p.sigma2, abs=1e-12)
    # binary: always one sibling
    assert size_biased_minus_one(binary).as_dict() == {1: 1.0}


def test_conditioned_offspring_matches_bayes(binary, geometric):
    # q_r(k) = p(k) (1-theta(r-1))^k / f(1-theta(r-1)) exactly
    for p in (binary, geometric):
        theta = p.survival(50)
        for r in (1, 2, 7):
            law = conditioned_offspring(p, theta, r)
            s = 1.0 - theta[r - 1]
            for k, q in zip(law.ks, law.probs):
                expect = p.pmf(int(k)) * s ** int(k) / p.f(s)
                assert q == pytest.approx(expect, rel=1e-12)


def test_conditioned_offspring_r1_is_extinction(binary):
    law = conditioned_offspring(binary, binary.survival(5), 1)
    assert law.as_dict() == {0: 1.0}


def test_conditioned_matches_rejection(binary, rng):
    # dying-within-3 subtree: first generation under conditioning vs rejection
    theta = binary.survival(10)
    law = conditioned_offspring(binary, theta, 3)

    def survives(depth_left):
        k = int(binary.ks[np.searchsorted(np.cumsum(binary.probs), rng.random(),
                                          side="right").clip(max=1)])
        if depth_left == 1:
            return k > 0, k
        alive = False
        for _ in range(k):
            sub, _ = survives(depth_left - 1)
            alive = alive or sub
        return alive, k

    counts = {0: 0, 2: 0}
    trials = 40_000
    kept = 0
    while kept < trials:
        alive, k = survives(3)
        if not alive:
            counts[k] += 1
            kept += 1
    p2 = counts[2] / trials
    expect = law.as_dict().get(2, 0.0)
    assert abs(p2 - expect) < 4 * np.sqrt(expect * (1 - expect) / trials)


def test_conditioned_first_generation_impossible(binary):
    tilde = size_biased_minus_one(binary)  # always k = 1
    theta = binary.survival(5)
    # k = 1 child must die within 0 generations: impossible
    with pytest.raises(ImpossibleConditioning):
        conditioned_first_generation(tilde, theta, 1)
