import logging

import numpy as np
import pytest

from tgv2.fields import ContractError, GridGeometry, pointwise_norm_sym, pointwise_norm_vec
from tgv2.operators import LinearOperator
from tgv2.problems import affine_projection, assemble_denoise_tgv2, assemble_denoise_tv
from tgv2.solver import (
    RegParams,
    Regularizer,
    SaddleProblem,
    SolverConfig,
    SolverDivergence,
    cp_iterate,
    cp_solve,
    initial_state,
    optimality_residuals,
    primal_energy,
    resolve_steps,
)
from tgv2.synth import add_gaussian_noise, rmse, synth_pattern


def plain_problem(f, params):
    """Denoising problem that starts from zero rather than from the data."""
    f = np.asarray(f, dtype=float)
    return SaddleProblem(Regularizer.tgv2(params), GridGeometry.of(f), f,
                         LinearOperator.identity(f.shape))


def test_params_validation():
    with pytest.raises(ContractError):
        RegParams(0.0, 1.0)
    with pytest.raises(ContractError):
        RegParams(1.0, -1.0)
    assert RegParams.from_lambda(0.1) == RegParams(0.2, 0.1)


def test_problem_validation():
    f = np.zeros((4, 4))
    with pytest.raises(ContractError):
        SaddleProblem(Regularizer.tgv2(RegParams(1, 1)), GridGeometry(4, 4), f,
                      LinearOperator.identity((4, 5)))
    with pytest.raises(ContractError):
        SaddleProblem(Regularizer.tgv2(RegParams(1, 1)), GridGeometry(4, 4))


def test_config_validation():
    with pytest.raises(ContractError):
        SolverConfig(theta=1.5)
    with pytest.raises(ContractError):
        SolverConfig(tol=0.0)
    with pytest.raises(ContractError):
        SolverConfig(tau=-1.0)


def test_constant_image_is_a_fixed_point():
    f = np.full((6, 5), 0.4)
    prob = assemble_denoise_tgv2(f, RegParams(1.0, 1.0))
    cfg, _ = resolve_steps(prob, SolverConfig())
    st = initial_state(prob)
    for _ in range(3):
        st = cp_iterate(st, prob, cfg)
        np.testing.assert_array_equal(st.u, f)
        np.testing.assert_array_equal(st.w, 0.0)
        np.testing.assert_array_equal(st.p, 0.0)
        np.testing.assert_array_equal(st.q, 0.0)
        np.testing.assert_array_equal(st.r, 0.0)
    assert optimality_residuals(st, prob) == (0.0, 0.0, 0.0)


def test_zero_dual_step_keeps_everything():
    prob = plain_problem(np.eye(3), RegParams(1, 1))
    cfg = SolverConfig(tau=0.3, sigma=0.0)
    st = initial_state(prob)
    out = cp_iterate(st, prob, cfg)
    for name in ("u", "w", "p", "q", "r"):
        np.testing.assert_array_equal(getattr(out, name), getattr(st, name))


def test_two_hand_computed_iterations():
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    prob = plain_problem(f, RegParams(1.0, 1.0))
    cfg = SolverConfig(tau=0.25, sigma=0.25)
    st = cp_iterate(initial_state(prob), prob, cfg)
    # ubar = 0, so p stays 0; r = -sigma f / (1 + sigma); u = -tau r
    np.testing.assert_allclose(st.r, -0.2 * f, atol=1e-15)
    np.testing.assert_array_equal(st.p, 0.0)
    np.testing.assert_allclose(st.u, 0.05 * f, atol=1e-15)
    np.testing.assert_array_equal(st.w, 0.0)
    st = cp_iterate(st, prob, cfg)
    # ubar = 0.1 f: corner gradients are (-+0.1, -+0.1), p = 0.25 * those
    p_expected = 0.025 * np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    np.testing.assert_allclose(st.p[:, :, 0, 0], p_expected, atol=1e-15)
    np.testing.assert_allclose(st.r, -0.34 * f, atol=1e-15)
    np.testing.assert_allclose(st.u, [[0.12875, 0.00625], [0.00625, 0.12875]], atol=1e-15)
    np.testing.assert_allclose(st.w, 0.0, atol=1e-15)


def test_divergence_names_variable():
    prob = plain_problem(np.eye(3), RegParams(1, 1))
    st = initial_state(prob)
    st.u_bar = np.full((3, 3), np.nan)
    with pytest.raises(SolverDivergence) as exc:
        cp_iterate(st, prob, SolverConfig(tau=0.1, sigma=0.1))
    assert exc.value.variable == "p"


def test_step_rule_enforced(caplog):
    prob = plain_problem(np.eye(4), RegParams(1, 1))
    with caplog.at_level(logging.WARNING):
        cfg, L = resolve_steps(prob, SolverConfig(tau=1.0, sigma=1.0))
    assert cfg.tau * cfg.sigma * L * L <= 1.0 + 1e-12
    assert "sigma" in caplog.text
    cfg, L = resolve_steps(prob, SolverConfig(step_ratio=0.04))
    assert cfg.tau / cfg.sigma == pytest.approx(0.04)
    assert cfg.tau * cfg.sigma * L * L == pytest.approx(1.0)


def test_residuals_zero_state():
    prob = plain_problem(np.zeros((4, 4)), RegParams(1, 1))
    assert optimality_residuals(initial_state(prob), prob) == (0.0, 0.0, 0.0)


def test_solve_reaches_tolerance_and_keeps_duals_feasible():
    f = np.random.default_rng(9).random((16, 16))
    params = RegParams(0.2, 0.1)
    prob = assemble_denoise_tgv2(f, params)
    worst = [0.0, 0.0]

    def watch(st):
        worst[0] = max(worst[0], pointwise_norm_vec(st.p).max() - params.alpha1)
        worst[1] = max(worst[1], pointwise_norm_sym(st.q).max() - params.alpha0)

    rep = cp_solve(prob, SolverConfig(max_iters=20000, tol=1e-6), callback=watch)
    assert rep.converged
    assert max(rep.final_residuals) <= 1e-6
    assert worst[0] <= 0.0 and worst[1] <= 0.0
    assert len(rep.energy_history) == len(rep.residual_history) == rep.iterations
    # final energy within tol*(1+|E|) of the best of the last 100 iterations,
    # measured per pixel like the residuals
    n = f.size
    tail = rep.energy_history[-100:] / n
    e = rep.final_energy / n
    assert e <= tail.min() + 1e-6 * (1 + abs(e))
    best = np.minimum.accumulate(rep.energy_history)
    assert np.all(np.diff(best) <= 0)


def test_solve_is_deterministic():
    f = np.random.default_rng(3).random((12, 12))
    prob = assemble_denoise_tgv2(f, RegParams(0.2, 0.1))
    a = cp_solve(prob, SolverConfig(max_iters=300, tol=1e-12))
    b = cp_solve(prob, SolverConfig(max_iters=300, tol=1e-12))
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.energy_history, b.energy_history)
    assert a.termination == "max_iters"


def test_large_weights_give_affine_projection():
    f = np.random.default_rng(0).random((16, 16))
    rep = cp_solve(plain_problem(f, RegParams(1e3, 1e3)), SolverConfig(max_iters=20000, tol=1e-8))
    assert np.linalg.norm(rep.u - affine_projection(f)) <= 1e-2


def test_vanishing_weights_return_data():
    f = np.random.default_rng(1).random((16, 16))
    rep = cp_solve(plain_problem(f, RegParams(1e-6, 1e-6)), SolverConfig(max_iters=20000, tol=1e-8))
    assert np.linalg.norm(rep.u - f) <= 1e-3


def test_tgv_beats_tv_on_noisy_ramp():
    clean = synth_pattern("ramp", 32, 32)
    f = add_gaussian_noise(clean, 0.1, 1)
    cfg = SolverConfig(max_iters=20000, tol=1e-6)
    tgv = cp_solve(assemble_denoise_tgv2(f, RegParams.from_lambda(0.1)), cfg)
    tv = cp_solve(assemble_denoise_tv(f, 0.1), cfg)
    assert tgv.converged and tv.converged
    assert rmse(tgv.u, clean) < rmse(tv.u, clean)


def test_primal_energy_examples():
    f = np.full((4, 4), 0.3)
    prob = plain_problem(f, RegParams(1, 1))
    assert primal_energy(f, np.zeros((2, 3, 3)), prob) == 0.0
    g = np.random.default_rng(2).random((4, 5))
    prob = SaddleProblem(Regularizer.tgv2(RegParams(1, 1)), GridGeometry(5, 4, 0.5), g,
                         LinearOperator.identity(g.shape))
    assert primal_energy(np.zeros((4, 5)), np.zeros((2, 3, 4)), prob) == pytest.approx(
        0.5 * 0.25 * np.sum(g**2))
    # ramp u = j*h with w equal to its (constant) gradient: nothing is left on
    # the cell grid, the boundary contributes no stencils
    h = 0.5
    ramp = np.broadcast_to(np.arange(6) * h, (5, 6)).copy()
    prob = SaddleProblem(Regularizer.tgv2(RegParams(1, 1)), GridGeometry(6, 5, h), ramp,
                         LinearOperator.identity(ramp.shape))
    w = np.zeros((2, 4, 5))
    w[0] = 1.0
    assert primal_energy(ramp, w, prob) == pytest.approx(0.0, abs=1e-13)
