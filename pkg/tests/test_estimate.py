import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from immselab.errors import NonDegeneracyViolation, UnsupportedInput
from immselab.estimate import (analyse_batch, causal_posterior, conditional_phi, eval_phi, log_rn, path_loglik,
                               smoothed_posterior)
from immselab.inputs import FiniteConstant, GaussConstant, build_entry, sample_inputs
from immselab.oracle import telegraph_bruteforce
from immselab.sde import FunctionalSystem, NoiseBundle, Path, TimeGrid, brownian_increments, simulate_batch, \
    simulate_output

GRID = TimeGrid(1.0, 100)


def simulate(entry_id, r, seed=0, reps=200, grid=GRID):
    e = build_entry(entry_id)
    x = sample_inputs(e.input, grid, seed, range(reps))
    y, aborted = simulate_batch(e.system, x, r, brownian_increments(grid, seed, range(reps)), grid)
    assert not aborted.any()
    return e, x, y


def test_eval_phi_examples():
    g = GRID
    y = np.linspace(0, 3, 101)
    assert np.all([eval_phi(build_entry("awgn-bpsk").system, k, np.ones(101), y) == 1.0 for k in range(101)])
    mod = build_entry("modulated-bpsk").system
    assert np.allclose([eval_phi(mod, k, -np.ones(101), y) for k in range(101)], -1.0, atol=1e-15)
    fb = build_entry("awgn-feedback").system
    yk = np.zeros(g.n_steps + 1)
    yk[10] = 2.0
    assert eval_phi(fb, 10, np.ones(101), yk) == 0.0


def test_eval_phi_guards_nondegeneracy():
    bad = FunctionalSystem("bad", lambda k, f, g: f[..., k], lambda k, g: np.full(g.shape[:-1], 0.1), 1.0)
    with pytest.raises(NonDegeneracyViolation):
        eval_phi(bad, 0, np.ones(3), np.zeros(3))


def test_loglik_ignores_candidate_at_r_zero():
    e, x, y = simulate("awgn-bpsk", 0.0, reps=1)
    a = path_loglik(e.system, np.ones(101), y[0], 0.0, grid=GRID)
    b = path_loglik(e.system, -np.ones(101), y[0], 0.0, grid=GRID)
    assert a == b


@given(st.floats(0.01, 10.0), st.integers(0, 10_000))
def test_bpsk_loglik_difference_telescopes(r, seed):
    # sum_k [(dy - a)^2 - (dy + a)^2] / (2 dt) with a = sqrt(r) dt collapses to 2 sqrt(r) y_N
    e = build_entry("awgn-bpsk")
    g = TimeGrid(1.0, 2 + seed % 40)
    y = np.concatenate([[0.0], np.cumsum(np.random.default_rng(seed).normal(size=g.n_steps))])
    ones = np.ones(g.n_steps + 1)
    diff = path_loglik(e.system, ones, y, r, grid=g) - path_loglik(e.system, -ones, y, r, grid=g)
    assert diff == pytest.approx(2 * np.sqrt(r) * y[-1], rel=1e-9, abs=1e-9)


def test_true_input_loglik_is_finite():
    for sid in ("awgn-bpsk", "telegraph-awgn", "awgn-feedback", "modulated-bpsk"):
        e, x, y = simulate(sid, 1.5, reps=50)
        assert np.all(np.isfinite(path_loglik(e.system, x, y, 1.5, grid=GRID)))


@pytest.mark.parametrize("sid", ["awgn-gauss", "awgn-bpsk", "telegraph-awgn"])
def test_posterior_equals_prior_at_r_zero(sid):
    e, x, y = simulate(sid, 0.0, reps=5)
    post = causal_posterior(e.system, e.input, y, 0.0, GRID)
    if post.kind == "gauss":
        assert np.all(post.mean == 0.0) and np.all(post.var == e.input.variance)
    else:
        np.testing.assert_allclose(post.weights, 0.5, atol=1e-12)
        sm = smoothed_posterior(e.system, e.input, y, 0.0, 60, GRID)
        np.testing.assert_allclose(sm.weights, 0.5, atol=1e-12)


@given(st.floats(0.0, 8.0), st.integers(0, 1000))
def test_bpsk_posterior_mean_is_tanh(r, seed):
    e, x, y = simulate("awgn-bpsk", r, seed=seed, reps=3)
    post = causal_posterior(e.system, e.input, y, r, GRID)
    mean = np.array([conditional_phi(e.system, post, k, y) for k in range(101)]).T
    np.testing.assert_allclose(mean, np.tanh(np.sqrt(r) * y), atol=1e-12)


def test_gauss_conjugate_example():
    e = build_entry("awgn-gauss")
    y = Path(GRID, np.zeros(101))
    post = causal_posterior(e.system, e.input, y, 1.0)
    assert post.mean[-1] == 0.0
    assert post.var[-1] == pytest.approx(0.5, abs=1e-15)


@given(st.floats(0.0, 20.0), st.floats(0.1, 5.0))
def test_gauss_posterior_variance_positive_nonincreasing(r, s2):
    post = causal_posterior(build_entry("awgn-gauss").system, GaussConstant(s2), np.zeros(101), r, GRID)
    np.testing.assert_allclose(post.var, s2 / (1 + r * s2 * GRID.times), rtol=1e-14)
    assert np.all(post.var > 0) and np.all(np.diff(post.var) <= 0)


@pytest.mark.parametrize("sid", ["awgn-bpsk", "telegraph-awgn", "modulated-bpsk", "awgn-feedback"])
def test_posteriors_normalized(sid):
    e, x, y = simulate(sid, 3.0, reps=30)
    post = causal_posterior(e.system, e.input, y, 3.0, GRID)
    np.testing.assert_allclose(post.weights.sum(axis=-1), 1.0, atol=1e-10)
    sm = smoothed_posterior(e.system, e.input, y, 3.0, 70, GRID)
    np.testing.assert_allclose(sm.weights.sum(axis=-1), 1.0, atol=1e-10)


@pytest.mark.parametrize("sid", ["awgn-bpsk", "telegraph-awgn", "awgn-gauss"])
def test_causal_filter_ignores_future_observations(sid):
    e, x, y = simulate(sid, 2.0, reps=4)
    k = 37
    y2 = y.copy()
    y2[:, k + 1:] += np.random.default_rng(1).normal(size=(4, 100 - k)) * 3
    a = causal_posterior(e.system, e.input, y, 2.0, GRID)
    b = causal_posterior(e.system, e.input, y2, 2.0, GRID)
    if a.kind == "gauss":
        np.testing.assert_array_equal(a.mean[:, : k + 1], b.mean[:, : k + 1])
    else:
        np.testing.assert_allclose(a.weights[:, : k + 1], b.weights[:, : k + 1], atol=1e-14)


@pytest.mark.parametrize("sid", ["awgn-bpsk", "telegraph-awgn", "awgn-gauss"])
def test_smoothed_endpoint_equals_causal(sid):
    e, x, y = simulate(sid, 1.0, reps=6)
    causal = causal_posterior(e.system, e.input, y, 1.0, GRID)
    for t in (0, 25, 100):
        sm = smoothed_posterior(e.system, e.input, y, 1.0, t, GRID)
        a = conditional_phi(e.system, sm, t, y, "smoothed")
        b = conditional_phi(e.system, causal, t, y, "causal")
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_smoothed_finite_constant_is_window_posterior():
    e, x, y = simulate("awgn-bpsk", 1.0, reps=3)
    sm = smoothed_posterior(e.system, e.input, y, 1.0, 40, GRID)
    assert sm.weights.shape[-2] == 41
    np.testing.assert_array_equal(sm.weights, np.repeat(sm.weights[..., -1:, :], 41, axis=-2))


def test_forward_backward_matches_enumeration():
    g = TimeGrid(1.0, 8)
    e = build_entry("telegraph-awgn")
    rng = np.random.default_rng(0)
    for inst in range(5):
        r = float(rng.uniform(0.5, 4.0))
        x = sample_inputs(e.input, g, inst, [0])
        y, _ = simulate_batch(e.system, x, r, rng.normal(scale=np.sqrt(g.dt), size=(1, 8)), g)
        for t in range(9):
            fb = smoothed_posterior(e.system, e.input, y[0], r, t, g).weights
            np.testing.assert_allclose(fb, telegraph_bruteforce(e.system, e.input, y[0], r, g, t), atol=1e-10)


def test_conditional_phi_one_point_alphabet():
    e = build_entry("awgn-feedback", alphabet={0.75: 1.0})
    g = TimeGrid(1.0, 20)
    y = simulate_output(e.system, np.full(21, 0.75), 1.0, NoiseBundle.draw(g, 0, 0), g)
    post = causal_posterior(e.system, e.input, y, 1.0)
    for k in (0, 7, 20):
        assert conditional_phi(e.system, post, k, y) == pytest.approx(float(eval_phi(e.system, k, np.full(21, 0.75), y)))


def test_conditional_phi_mode_checks():
    e, x, y = simulate("awgn-bpsk", 1.0, reps=1)
    causal = causal_posterior(e.system, e.input, y, 1.0, GRID)
    sm = smoothed_posterior(e.system, e.input, y, 1.0, 10, GRID)
    with pytest.raises(ValueError):
        conditional_phi(e.system, causal, 5, y, "smoothed")
    with pytest.raises(ValueError):
        conditional_phi(e.system, sm, 11, y, "smoothed")
    with pytest.raises(ValueError):
        conditional_phi(e.system, sm, 5, y, "causal")


@pytest.mark.parametrize("sid", ["awgn-gauss", "awgn-bpsk", "telegraph-awgn"])
def test_log_rn_vanishes_at_r_zero_and_at_origin(sid):
    e, x, y = simulate(sid, 0.0, reps=10)
    np.testing.assert_allclose(log_rn(e.system, e.input, x, y, 0.0, grid=GRID), 0.0, atol=1e-12)
    e, x, y = simulate(sid, 2.0, reps=10)
    lr = log_rn(e.system, e.input, x, y, 2.0, grid=GRID)
    assert np.all(lr[:, 0] == 0.0) and np.all(np.isfinite(lr))


def test_gauss_log_rn_mean_matches_closed_form():
    # the closed form log(1 + r sigma2 T) / 2 = 0.34657...; M = 2e5 puts 2% at many SEs
    e, x, y = simulate("awgn-gauss", 1.0, reps=200_000, grid=TimeGrid(1.0, 10))
    lr = log_rn(e.system, e.input, x, y, 1.0, t_index=10, grid=TimeGrid(1.0, 10))
    assert lr.mean() == pytest.approx(0.5 * np.log(2.0), rel=0.02)


@pytest.mark.parametrize("sid", ["awgn-bpsk", "telegraph-awgn", "awgn-feedback"])
def test_exp_minus_log_rn_is_mean_one_along_time(sid):
    e, x, y = simulate(sid, 0.5, reps=10_000, grid=TimeGrid(1.0, 50))
    m = np.exp(-log_rn(e.system, e.input, x, y, 0.5, grid=TimeGrid(1.0, 50)))
    for k in (10, 25, 50):
        se = m[:, k].std(ddof=1) / np.sqrt(len(m))
        assert abs(m[:, k].mean() - 1) <= 3 * se


@pytest.mark.parametrize("sid", ["awgn-gauss", "awgn-bpsk", "telegraph-awgn", "awgn-feedback"])
def test_tower_property(sid):
    e, x, y = simulate(sid, 1.0, reps=5000, grid=TimeGrid(1.0, 50))
    a = analyse_batch(e.system, e.input, x, y, 1.0, TimeGrid(1.0, 50))
    diff = a.causal - a.phi
    se = diff.std(axis=0, ddof=1) / np.sqrt(len(diff))
    assert np.all(np.abs(diff.mean(axis=0)) <= 3 * se + 1e-12)


def test_gauss_requires_awgn_form():
    e = build_entry("awgn-feedback")
    with pytest.raises(UnsupportedInput):
        causal_posterior(e.system, GaussConstant(1.0), np.zeros(101), 1.0, GRID)
    with pytest.raises(UnsupportedInput):
        log_rn(e.system, GaussConstant(1.0), np.zeros(101), np.zeros(101), 1.0, grid=GRID)


@pytest.mark.parametrize("sid", ["awgn-gauss", "awgn-bpsk", "telegraph-awgn"])
def test_rao_blackwell_quantities_match_raw_in_mean(sid):
    # posterior variance and E[log-RN | y] are conditional expectations of the raw terms
    g = TimeGrid(1.0, 40)
    e, x, y = simulate(sid, 1.0, reps=4000, grid=g)
    a = analyse_batch(e.system, e.input, x, y, 1.0, g)
    raw = np.diagonal((a.phi[:, None, :] - a.cond) ** 2, axis1=1, axis2=2)
    rb = np.diagonal(a.post_var, axis1=1, axis2=2)
    for u, v in ((raw, rb), (a.log_rn, a.log_rn_cond)):
        d = u - v
        se = d.std(axis=0, ddof=1) / np.sqrt(len(d))
        assert np.all(np.abs(d.mean(axis=0)) <= 4 * se + 1e-12)


def test_batch_diagonal_matches_causal_filter():
    g = TimeGrid(1.0, 30)
    e, x, y = simulate("telegraph-awgn", 2.0, reps=20, grid=g)
    a = analyse_batch(e.system, e.input, x, y, 2.0, g)
    post = causal_posterior(e.system, e.input, y, 2.0, g)
    direct = np.array([conditional_phi(e.system, post, k, y) for k in range(31)]).T
    np.testing.assert_allclose(a.causal, direct, atol=1e-12)
    sm = smoothed_posterior(e.system, e.input, y, 2.0, 30, g)
    np.testing.assert_allclose(a.cond[:, 30, :], np.array(
        [conditional_phi(e.system, sm, s, y, "smoothed") for s in range(31)]).T, atol=1e-12)


def test_finite_alphabet_with_zero_probability_value():
    e = build_entry("awgn-bpsk", alphabet={1.0: 1.0, -1.0: 0.0})
    g = TimeGrid(1.0, 20)
    y = simulate_output(e.system, np.ones(21), 1.0, NoiseBundle.draw(g, 0, 0), g)
    post = causal_posterior(e.system, e.input, y, 1.0)
    np.testing.assert_allclose(post.weights[..., 0], 1.0)
    assert np.all(np.isfinite(log_rn(e.system, e.input, np.ones(21), y, 1.0)))


def test_finite_constant_three_point_posterior_by_hand():
    # weights proportional to prior * exp(sqrt(r) a y_t - r a^2 t / 2)
    e = build_entry("awgn-bpsk", alphabet={-1.0: 0.2, 0.5: 0.3, 2.0: 0.5})
    g = TimeGrid(2.0, 25)
    r = 1.7
    y = simulate_output(e.system, np.full(26, 0.5), r, NoiseBundle.draw(g, 4, 0), g)
    post = causal_posterior(e.system, e.input, y, r)
    a = np.array(e.input.values)
    p = np.array(e.input.probs)
    t, yv = g.times[:, None], y.values[:, None]
    w = p * np.exp(np.sqrt(r) * a * yv - r * a ** 2 * t / 2)
    np.testing.assert_allclose(post.weights, w / w.sum(axis=1, keepdims=True), rtol=1e-10)
    assert isinstance(e.input, FiniteConstant)
