import numpy as np
import pytest

from tgv2.operators import LinearOperator, gaussian_kernel, grad_cells, sym_grad_cells
from tgv2.problems import assemble_denoise_tgv2
from tgv2.solver import RegParams, SolverConfig, cp_solve
from tgv2.synth import add_gaussian_noise, synth_pattern
from tgv2.verify import (
    Check,
    adjoint_check,
    cell_operator_matrices,
    certification_report,
    denoise_oracle_exact_prox,
    operator_pairs,
    run_certification,
    tgv_oracle_small,
)


def test_adjoint_examples():
    assert adjoint_check(operator_pairs((5, 7))["grad/div"]) <= 1e-12
    assert adjoint_check(operator_pairs((6, 4))["sym_grad/sym_div"]) <= 1e-12
    op = LinearOperator.convolution(gaussian_kernel(1.0, 3), (9, 9))
    assert adjoint_check(op) <= 1e-12


def test_adjoint_check_detects_a_wrong_adjoint():
    op = operator_pairs((5, 5))["grad/div"]
    bad = LinearOperator(op.apply, lambda p: 0.5 * op.adjoint(p), op.domain_shape, op.range_shape)
    assert adjoint_check(bad) > 0.1


def test_adjoint_check_is_deterministic():
    op = operator_pairs((4, 6), 0.5)["hess_cells"]
    assert adjoint_check(op, 5, seed=3) == adjoint_check(op, 5, seed=3)
    with pytest.raises(ValueError):
        adjoint_check(op, 0)


def test_sparse_matrices_match_operators(rng):
    u = rng.standard_normal((5, 6))
    w = rng.standard_normal((2, 4, 5))
    mats = cell_operator_matrices(u.shape, 0.7)
    g = grad_cells(u, 0.7)
    e = sym_grad_cells(w, 0.7)
    for s in range(4):
        np.testing.assert_allclose(mats.D[s] @ u.ravel(), g[s].ravel(), atol=1e-13)
        np.testing.assert_allclose(mats.E[s] @ w.ravel(), e[s].ravel(), atol=1e-13)


def test_certification_report_format():
    checks = run_certification(trials=3, shapes=((4, 5),))
    assert all(c.passed for c in checks)
    text = certification_report(checks)
    lines = text.splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == len(checks) + 1
    assert all(len(ln.split("\t")) == 4 and ln.endswith("PASS") for ln in lines[1:])
    assert Check("x", 2.0, 1.0).line().endswith("FAIL")


# --- oracles (the TGV oracle needs cvxpy) ----------------------------------

def test_tgv_oracle_constant_is_zero():
    pytest.importorskip("cvxpy")
    assert tgv_oracle_small(np.full((4, 5), 2.5), RegParams(1.0, 1.0)) <= 1e-8


def test_tgv_oracle_is_one_homogeneous():
    pytest.importorskip("cvxpy")
    u = np.random.default_rng(5).random((4, 4))
    p = RegParams(1.0, 1.0)
    a, b = tgv_oracle_small(u, p), tgv_oracle_small(2 * u, p)
    assert b == pytest.approx(2 * a, rel=1e-4)


def test_tgv_oracle_checkerboard_closed_form():
    # w = 0 is optimal here and every variant of the gradient has length sqrt(2)
    pytest.importorskip("cvxpy")
    u = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert tgv_oracle_small(u, RegParams(1.0, 1.0)) == pytest.approx(np.sqrt(2.0), rel=1e-8)


def test_tgv_oracle_rejects_large_grids():
    pytest.importorskip("cvxpy")
    with pytest.raises(ValueError):
        tgv_oracle_small(np.zeros((7, 7)), RegParams(1.0, 1.0))


def test_exact_prox_oracle_constant_and_small_weight():
    f = np.full((6, 6), 0.3)
    np.testing.assert_allclose(denoise_oracle_exact_prox(f, RegParams(1.0, 1.0)), f, atol=1e-12)
    g = np.random.default_rng(2).random((5, 5))
    u = denoise_oracle_exact_prox(g, RegParams.from_lambda(1e-8), iters=20000)
    assert np.abs(u - g).max() <= 1e-6


def test_exact_prox_oracle_agrees_on_noisy_ramp():
    # frozen from a verified run: distance 4.8e-7; larger ramps converge slowly
    f = add_gaussian_noise(synth_pattern("ramp", 8, 8), 0.1, 1)
    params = RegParams.from_lambda(0.1)
    rep = cp_solve(assemble_denoise_tgv2(f, params), SolverConfig(max_iters=50000, tol=1e-8))
    assert rep.converged
    oracle = denoise_oracle_exact_prox(f, params, iters=400000, tol=1e-12)
    assert np.linalg.norm(rep.u - oracle) <= 1e-5
