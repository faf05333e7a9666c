import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lglsq.errors import DomainError
from lglsq.estimators import EstimatorConfig
from lglsq.quantizer import PER_CHANNEL, PER_LAYER, QuantizerState
from lglsq.ssg import (FIXED, LEFT, LLSQ_GRID, MIDDLE, RIGHT, SSG, Z_MAX, SsgState,
                       candidate_errors, default_iter_target, llsq_grid_gradient, scale_step,
                       select, ssg_gradient, ssg_observe_and_adapt)


def brute_errors(x, alpha, z, qmin, qmax):
    # plain loop oracle, one candidate at a time
    out = []
    for s in (alpha * (0.5 + z), alpha, 2 * alpha * (1 - z)):
        err = 0.0
        for v in x:
            c = min(max(np.sign(v / s) * np.floor(abs(v / s) + 0.5), qmin), qmax)
            err += (v - c * s) ** 2
        out.append(err)
    return np.array(out)


@pytest.mark.parametrize("seed", range(5))
def test_candidate_errors_match_loop(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(200)
    z = rng.uniform(0, 0.5)
    np.testing.assert_allclose(candidate_errors(x, 0.3, z, -8, 7), brute_errors(x, 0.3, z, -8, 7),
                               rtol=1e-12)


def test_candidate_errors_grouped_shape():
    x = np.random.default_rng(0).standard_normal((3, 50))
    e = candidate_errors(x, [0.1, 0.2, 0.3], [0.0, 0.1, 0.2], -8, 7)
    assert e.shape == (3, 3)
    np.testing.assert_allclose(e[:, 1], candidate_errors(x[1], 0.2, 0.1, -8, 7))


def test_candidate_errors_domain():
    with pytest.raises(DomainError):
        candidate_errors(np.ones(3), 0.0, 0.0, -8, 7)
    with pytest.raises(DomainError):
        candidate_errors(np.ones(3), 1.0, 0.6, -8, 7)
    with pytest.raises(DomainError):
        candidate_errors(np.ones(0), 1.0, 0.0, -8, 7)


def test_gradient_sign_per_winner():
    assert ssg_gradient(1.0, 2.0, 3.0, 0.5) == pytest.approx(0.25)
    assert ssg_gradient(3.0, 2.0, 1.0, 0.5) == pytest.approx(-0.25)
    assert ssg_gradient(3.0, 1.0, 2.0, 0.5) == 0.0


def test_ties_go_to_middle():
    assert select(np.array([1.0, 1.0, 1.0])) == MIDDLE
    assert select(np.array([1.0, 1.0, 2.0])) == MIDDLE
    assert select(np.array([2.0, 3.0, 2.0])) == LEFT


def test_alpha_too_big_shrinks():
    q = QuantizerState(4, True, PER_LAYER, 1, EstimatorConfig(), SsgState())
    q.set_alpha([1.0])
    x = np.random.default_rng(0).standard_normal(4096)
    g = scale_step(q, x, lr=0.01)
    assert g[0] == pytest.approx(1.0) and q.alpha[0] == pytest.approx(0.99)


def test_scale_step_fixed_and_disabled():
    q = QuantizerState(4, True, PER_LAYER, 1, EstimatorConfig(), SsgState())
    q.set_alpha([1.0])
    assert scale_step(q, np.ones(3), 0.1, FIXED) is None
    assert q.alpha[0] == 1.0
    assert scale_step(QuantizerState(32), np.ones(3), 0.1) is None


def test_scale_step_floors_alpha():
    q = QuantizerState(4, True, PER_LAYER, 1, EstimatorConfig(), SsgState())
    q.set_alpha([1.0])
    scale_step(q, np.random.default_rng(0).standard_normal(4096), lr=100.0)
    assert q.alpha[0] == np.float32(1e-8)


def test_llsq_grid_equals_ssg_with_zero_z():
    x = np.random.default_rng(1).standard_normal(300)
    e = candidate_errors(x, 0.4, 0.0, -8, 7)
    assert llsq_grid_gradient(x, 0.4, -8, 7) == ssg_gradient(*e, 0.4)


def test_llsq_grid_never_adapts_z():
    q = QuantizerState(4, True, PER_LAYER, 1, EstimatorConfig(), SsgState(adapt=False))
    q.set_alpha([100.0])
    for _ in range(20):
        scale_step(q, np.full(10, 0.01), 1e-6, LLSQ_GRID)
    assert q.ssg.z[0] == 0.0


def test_per_channel_independent_z():
    q = QuantizerState(4, True, PER_CHANNEL, 2, EstimatorConfig(), SsgState(channels=2))
    # channel 0 oversized (left wins), channel 1 near the MSE optimum (middle wins)
    q.set_alpha([1.0, 0.34])
    x = np.random.default_rng(0).standard_normal((2, 4096))
    for _ in range(4):
        scale_step(q, x, 1e-9, SSG)
    assert q.ssg.z[0] == 0.03125 and q.ssg.z[1] == 0.0


# --- z mechanics -------------------------------------------------------


def feed(st, seq):
    for a in seq:
        ssg_observe_and_adapt(st, a)


def test_four_lefts_advance_z_once():
    st = SsgState()
    feed(st, [LEFT] * 3)
    assert st.z[0] == 0.0
    feed(st, [LEFT])
    assert st.z[0] == 0.03125
    assert st.consecutive_left[0] == 0


def test_middle_resets_streak():
    st = SsgState()
    feed(st, [LEFT, LEFT, LEFT, MIDDLE, LEFT, LEFT, LEFT])
    assert st.z[0] == 0.0
    feed(st, [LEFT])
    assert st.z[0] == 0.03125


def test_direction_switch_resets_streak():
    st = SsgState()
    feed(st, [RIGHT, RIGHT, RIGHT, LEFT, RIGHT])
    assert st.z[0] == 0.0
    assert st.consecutive_right[0] == 1


def test_only_check_iterations_count():
    st = SsgState(iter_target=3)
    feed(st, [MIDDLE, MIDDLE, LEFT] * 4)
    assert st.z[0] == 0.03125
    st = SsgState(iter_target=3)
    feed(st, [LEFT, LEFT, MIDDLE] * 4)
    assert st.z[0] == 0.0


def test_z_capped():
    st = SsgState()
    feed(st, [RIGHT] * 400)
    assert st.z[0] == Z_MAX


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([LEFT, MIDDLE, RIGHT]), max_size=300), st.integers(1, 4))
def test_z_bounded_and_quantized(seq, it):
    s = SsgState(iter_target=it)
    feed(s, seq)
    assert 0 <= s.z[0] <= Z_MAX
    assert (s.z[0] / 0.03125) == int(s.z[0] / 0.03125)


def test_default_iter_target():
    assert default_iter_target(32) == 6
    assert default_iter_target(3) == 1
