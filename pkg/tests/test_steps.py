import itertools

import numpy as np
import pytest

from brwlab.errors import DegenerateSupport, NotNormalized, NotSymmetric, ParseError
from brwlab.steps import load_step, make_step, tilt


def test_srw_presets():
    for d in (1, 2, 5):
        st = load_step(f"srw:{d}")
        assert st.dim == d and st.period == 2
        assert np.allclose(st.Q, np.eye(d) / d)
        lazy = load_step(f"lazy-srw:{d}")
        assert lazy.period == 1
        assert np.allclose(lazy.Q, np.eye(d) / (2 * d))


def test_mean_square_displacement_identity(rng):
    # E ||S(n)||^2 = n exactly under the Q^{-1} norm, any step law
    st = make_step({(2, 0): 0.2, (-2, 0): 0.2, (0, 1): 0.25, (0, -1): 0.25, (1, 1): 0.05, (-1, -1): 0.05})
    n, trials = 12, 200_000
    walks = st.sample((trials, n), rng).sum(axis=1)
    mean = st.norm2(walks).mean()
    assert abs(mean - n) < 0.05 * n


def test_norm2_exact_single_step(srw1):
    # one srw:1 step has ||y||^2 = y^2 / Q = 1
    assert srw1.norm2(np.array([1]))[0] == pytest.approx(1.0)
    assert srw1.norm2(np.array([[2], [0]])).tolist() == pytest.approx([4.0, 0.0])


def test_validation_errors():
    with pytest.raises(NotSymmetric):
        make_step({(1,): 0.7, (-1,): 0.3})
    with pytest.raises(NotNormalized):
        make_step({(1,): 0.4, (-1,): 0.4})
    with pytest.raises(DegenerateSupport):
        make_step({(2,): 0.5, (-2,): 0.5})  # generates 2Z, not Z
    with pytest.raises(DegenerateSupport):
        make_step({(2, 0): 0.5, (-2, 0): 0.5})
    with pytest.raises(ParseError):
        load_step("1 0.5\nbad\n")


def test_determinant_scale():
    st = load_step("srw:3")
    assert st.D == pytest.approx(np.linalg.det(st.Q) ** (1.0 / 6.0))


def test_tilt_mean_matches_grad_log_z():
    # m_beta = gradient of log Z_beta in the Q^{-1} pairing, by central differences
    st = load_step("lazy-srw:2")
    beta = np.array([0.3, -0.2])
    tl = tilt(st, beta)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        lo = np.log(tilt(st, beta - e).Z_beta)
        hi = np.log(tilt(st, beta + e).Z_beta)
        grad_i = (hi - lo) / (2 * h)
        # d/dbeta_i log Z = (Q^{-1} m)_i with the Q^{-1} inner product
        assert grad_i == pytest.approx(float((st.Qinv @ tl.m_beta)[i]), rel=1e-5)


def test_tilt_zero_is_identity(srw1):
    tl = tilt(srw1, np.zeros(1))
    assert tl.Z_beta == pytest.approx(1.0)
    assert np.allclose(tl.probs, srw1.probs)
    assert np.allclose(tl.m_beta, 0.0)


def test_tilted_bridge_law_invariance(srw1, lazy1):
    # conditioning on the endpoint removes the tilt: exact path-law identity
    for st in (srw1, lazy1):
        n, x = 6, 2
        tl = tilt(st, np.array([0.7]))
        paths = list(itertools.product(range(len(st.support)), repeat=n))
        base_w, tilt_w = [], []
        for combo in paths:
            if int(st.support[list(combo)].sum()) != x:
                continue
            base_w.append(np.prod(st.probs[list(combo)]))
            tilt_w.append(np.prod(tl.probs[list(combo)]))
        base_w = np.array(base_w) / np.sum(base_w)
        tilt_w = np.array(tilt_w) / np.sum(tilt_w)
        assert np.max(np.abs(base_w - tilt_w)) < 1e-12
