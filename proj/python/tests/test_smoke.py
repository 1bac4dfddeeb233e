import math

import numpy as np
import pytest

import linabs


def cheap_config():
    return linabs.Config.from_ini("[grid]\nsamples_per_cycle = 16\n[pulse]\nenergies = 0.01, 1.0\n")


@pytest.fixture(scope="module")
def problem():
    return linabs.Problem(cheap_config())


def test_config_roundtrip():
    c = linabs.Config()
    assert len(c.hash) == 16
    assert c.hash == linabs.Config.from_ini("").hash
    assert math.isclose(c.sigma_cm, 20.0)
    c.sigma_cm = 40.0
    assert c.hash != linabs.Config().hash


def test_unknown_key_rejected():
    with pytest.raises(ValueError):
        linabs.Config.from_ini("[grid]\nbogus = 1\n")


def test_weak_field_is_linear(problem):
    p = problem.populations(0.01)
    assert len(p) == 3
    assert math.isclose(sum(p), 1.0, abs_tol=1e-8)
    assert p[linabs.LEVEL_F] == pytest.approx(0.01, rel=0.02)
    assert problem.first_order(0.01) == pytest.approx(0.01, rel=1e-12)


def test_phase_changes_populations_not_amplitude(problem):
    n = problem.n_frequencies
    phase = np.random.default_rng(1).uniform(-1, 1, n)
    a = problem.populations(1.0)
    b = problem.populations(1.0, phase)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        problem.populations(1.0, phase[:-1])


def test_gradients_shape_and_sum(problem):
    phase = np.zeros(problem.n_frequencies)
    pops, grads = problem.gradients(1.0, phase, [linabs.LEVEL_G, linabs.LEVEL_S, linabs.LEVEL_F])
    assert grads.shape == (3, problem.n_frequencies)
    assert np.max(np.abs(grads.sum(axis=0))) < 1e-10
    assert math.isclose(sum(pops), 1.0, abs_tol=1e-8)


def test_constant_sweep(problem):
    rows = linabs.constant_sweep(problem)
    assert [r["A2"] for r in rows] == [0.01, 1.0]
    strong = rows[1]["populations"]
    assert strong[linabs.LEVEL_F] < 0.95
    assert strong[linabs.LEVEL_S] > 1e-2


def test_tl_support_is_short(problem):
    # 1% envelope width of a 30 fs (intensity FWHM) Gaussian
    expected = 2 * 30 * math.sqrt(math.log(100) / (2 * math.log(2)))
    assert problem.support_fs(1.0) == pytest.approx(expected, rel=0.01)


def test_arrays_cross_the_boundary_intact(problem):
    w = problem.frequencies
    assert w.shape == (problem.n_frequencies,)
    assert np.allclose(np.diff(w), w[1] - w[0], rtol=1e-9) and w[1] > w[0]
    a = problem.amplitude(1.0)
    assert w[np.argmax(a)] == pytest.approx(linabs.Config().omega0, abs=w[1] - w[0])


def test_gradient_matches_a_phase_kick(problem):
    # also checks that phase arrays reach the C++ side bin by bin
    rng = np.random.default_rng(3)
    phase = np.convolve(rng.normal(size=problem.n_frequencies), np.ones(40) / 8, mode="same")
    _, grads = problem.gradients(1.0, phase, [linabs.LEVEL_F])
    j = int(np.argmax(np.abs(grads[0])))
    h = 1e-3
    up, down = phase.copy(), phase.copy()
    up[j] += h
    down[j] -= h
    fd = (problem.populations(1.0, up)[linabs.LEVEL_F] - problem.populations(1.0, down)[linabs.LEVEL_F]) / (2 * h)
    assert fd == pytest.approx(grads[0][j], rel=1e-4)
