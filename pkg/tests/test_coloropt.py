import numpy as np
import pytest

from _oracles import central_diff, energy_gradcheck, rel_err
from rforge.coloropt import (DEFAULT_WEIGHT, ColorAdjust, CompositeProblem, MiningConfig, OptimizeOptions,
                             apply_adjust, energy, energy_gradient, mine_hard_negatives,
                             optimize_color, reg_gradient, reg_penalty, reinhard_match)
from rforge.realnet import TrainConfig, forward_score, init_params, preprocess, zero_params

SMALL = "in8x8x3|conv3-4|relu|pool2|fc6|relu|fc1"


def problem(seed, size=16, w=DEFAULT_WEIGHT):
    rng = np.random.default_rng(seed)
    fg, bg = rng.random((size, size, 3)), rng.random((size, size, 3))
    alpha = np.zeros((size, size))
    alpha[4:12, 3:13] = 1.0
    alpha[4, 3:13] = 0.5
    return CompositeProblem(fg, bg, alpha, w)


def test_default_weight_is_fifty():
    assert DEFAULT_WEIGHT == 50.0
    assert CompositeProblem(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.ones((2, 2))).w == 50.0


def test_identity_adjust_gives_cut_and_paste():
    p = problem(0)
    assert np.array_equal(apply_adjust(ColorAdjust.identity(), p), p.baseline())


def test_zero_alpha_gives_background_for_any_g():
    p = problem(1)
    p0 = CompositeProblem(p.fg, p.bg, np.zeros_like(p.alpha))
    g = ColorAdjust((2.0, 0.5, 1.3), (0.1, -0.2, 0.0))
    assert np.array_equal(apply_adjust(g, p0), p.bg)


def test_gain_on_two_pixel_foreground():
    fg = np.array([[[0.2, 0.3, 0.4], [0.1, 0.6, 0.9]]])
    bg = np.full((1, 2, 3), 0.5)
    p = CompositeProblem(fg, bg, np.ones((1, 2)))
    out = apply_adjust(ColorAdjust((2.0, 1.0, 1.0), (0.0, 0.0, 0.0)), p)
    assert np.allclose(out, [[[0.4, 0.3, 0.4], [0.2, 0.6, 0.9]]])


def test_problem_shape_mismatch():
    with pytest.raises(ValueError):
        CompositeProblem(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((4, 4)))


# ---------------------------------------------------------------- regularizer

def test_reg_identity_is_zero():
    assert reg_penalty(ColorAdjust.identity(), problem(2)) == 0.0


def test_reg_equal_shift():
    p = problem(3)
    p = CompositeProblem(p.fg, p.bg, (p.alpha > 0).astype(float))
    assert reg_penalty(ColorAdjust((1, 1, 1), (0.1, 0.1, 0.1)), p) == pytest.approx(np.sqrt(3) * 0.1)


def test_reg_hand_value_point_three():
    p = CompositeProblem(np.full((1, 1, 3), 0.5), np.zeros((1, 1, 3)), np.ones((1, 1)))
    assert reg_penalty(ColorAdjust((1.2, 1.0, 1.0), (0.0, 0.0, 0.0)), p) == pytest.approx(0.3)


def test_reg_needs_foreground():
    p = problem(4)
    with pytest.raises(ValueError):
        reg_penalty(ColorAdjust.identity(), CompositeProblem(p.fg, p.bg, np.zeros_like(p.alpha)))


def test_reg_gradient_matches_finite_differences():
    p = problem(5)
    rng = np.random.default_rng(5)
    for _ in range(10):
        v = np.concatenate([rng.uniform(0.7, 1.3, 3), rng.uniform(-0.1, 0.1, 3)])
        num = central_diff(lambda x: reg_penalty(ColorAdjust.from_vector(x), p), v, range(6), 1e-6)
        assert rel_err(reg_gradient(ColorAdjust.from_vector(v), p), num) <= 1e-5


# ---------------------------------------------------------------- energy

def test_energy_identity_is_negative_score():
    params = init_params(SMALL, seed=1)
    p = problem(6)
    assert energy(params, ColorAdjust.identity(), p) == pytest.approx(-forward_score(params, preprocess(p.baseline(), params)), abs=1e-12)


def test_energy_recomposes():
    params = init_params(SMALL, seed=2)
    p = problem(7)
    g = ColorAdjust((1.1, 0.9, 1.2), (0.05, -0.02, 0.0))
    direct = -forward_score(params, preprocess(apply_adjust(g, p), params)) + p.w * reg_penalty(g, p)
    assert energy(params, g, p) == pytest.approx(direct, abs=1e-12)


def test_energy_gradient_zero_alpha():
    params = init_params(SMALL, seed=3)
    p = problem(8)
    p0 = CompositeProblem(p.fg, p.bg, np.zeros_like(p.alpha))
    assert not energy_gradient(params, ColorAdjust((1.2, 1, 1), (0, 0.1, 0)), p0).any()


def test_energy_gradient_zero_network_is_weighted_reg():
    p = problem(9)
    g = ColorAdjust((1.2, 0.8, 1.1), (0.03, 0.0, -0.05))
    assert np.allclose(energy_gradient(zero_params(SMALL), g, p), p.w * reg_gradient(g, p))


@pytest.mark.parametrize("seed", range(5))
def test_energy_gradient_matches_finite_differences(seed):
    params = init_params(SMALL, seed=seed)
    assert energy_gradcheck(params, problem(seed + 20, w=1.0), np.random.default_rng(seed)) <= 1e-3


# ---------------------------------------------------------------- optimizer

def test_zero_network_stays_at_identity():
    res = optimize_color(zero_params(SMALL), problem(10), OptimizeOptions(starts=3))
    assert np.allclose(res.adjust.as_vector(), ColorAdjust.identity().as_vector(), atol=1e-6)


def test_optimum_in_box_and_not_worse_than_identity():
    params = init_params(SMALL, seed=4)
    p = problem(11, w=0.5)
    res = optimize_color(params, p, OptimizeOptions(starts=4, seed=1))
    v = res.adjust.as_vector()
    assert np.all(v[:3] >= 0.2) and np.all(v[:3] <= 3.0)
    assert np.all(v[3:] >= -0.5) and np.all(v[3:] <= 0.5)
    assert res.energy <= res.energy_identity
    assert res.energy == pytest.approx(energy(params, res.adjust, p), abs=1e-12)
    rep = res.report()
    assert set(rep) == {"g", "E_identity", "E_star", "starts", "iterations"} and rep["starts"] == 4


def test_optimizer_deterministic():
    params = init_params(SMALL, seed=5)
    p = problem(12, w=1.0)
    a = optimize_color(params, p, OptimizeOptions(starts=3, seed=2))
    b = optimize_color(params, p, OptimizeOptions(starts=3, seed=2))
    assert a.adjust == b.adjust and a.energy == b.energy


# ---------------------------------------------------------------- Reinhard baseline

def test_reinhard_closed_form_one_channel():
    # fg channel 0: mean 0.2, std 0.1; bg: mean 0.5, std 0.2
    fg = np.zeros((1, 4, 3))
    bg = np.zeros((1, 4, 3))
    fg[0, :2, 0] = [0.1, 0.3]
    bg[0, 2:, 0] = [0.3, 0.7]
    fg[0, :2, 1:] = [[0.4, 0.4], [0.6, 0.6]]
    bg[0, 2:, 1:] = [[0.4, 0.4], [0.6, 0.6]]
    alpha = np.array([[1.0, 1.0, 0.0, 0.0]])
    g = reinhard_match(CompositeProblem(fg, bg, alpha))
    assert g.gains[0] == pytest.approx(2.0) and g.biases[0] == pytest.approx(0.1)
    assert g.gains[1] == pytest.approx(1.0) and g.biases[1] == pytest.approx(0.0, abs=1e-12)


def test_reinhard_matches_means():
    p = problem(13)
    g = reinhard_match(p)
    adj = g.apply(p.fg[p.alpha > 0])
    assert np.allclose(adj.mean(axis=0), p.bg[p.alpha == 0].mean(axis=0), atol=1e-6)


def test_reinhard_zero_variance_fallback():
    p = problem(14)
    fg = p.fg.copy()
    fg[..., 2] = 0.25
    g = reinhard_match(CompositeProblem(fg, p.bg, p.alpha))
    assert g.gains[2] == 1.0
    assert g.biases[2] == pytest.approx(p.bg[p.alpha == 0][:, 2].mean() - 0.25)


# ---------------------------------------------------------------- mining

def test_mining_returns_baseline_then_rounds():
    params = init_params(SMALL, seed=6)
    rng = np.random.default_rng(6)
    probs = [problem(30 + i, size=8) for i in range(4)]
    imgs = rng.random((10, 8, 8, 3))
    labels = np.array([0, 1] * 5)
    rounds = mine_hard_negatives(params, probs, imgs, labels, 2,
                                 MiningConfig(samples=2, starts=1, max_iterations=5, retrain_iterations=5),
                                 TrainConfig(batch_size=4))
    assert len(rounds) == 3
    assert rounds[0].params is params and len(rounds[0].mined) == 0
    assert all(len(r.mined) == 2 for r in rounds[1:])
    assert all(r.mined.min() >= 0 and r.mined.max() <= 1 for r in rounds[1:])
