import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optideq import checkpoint
from optideq.cells import CellSpec
from optideq.deq import (
    DeqBlockParams,
    EnsembleModel,
    ModelConfig,
    count_parameters,
    deq_step,
    forward,
    forward_batch,
    init_ensemble,
    parameter_count,
    predict_class,
    solve_fixed_point,
)
from optideq.errors import ConfigurationError, NumericError

SIMPLE = CellSpec.simple()


def block(W, b, d_in=1, W_ip=None, b_ip=None):
    W = np.asarray(W, float)
    d = W.shape[0]
    W_ip = np.zeros((d, d_in)) if W_ip is None else np.asarray(W_ip, float)
    b_ip = np.zeros(d) if b_ip is None else np.asarray(b_ip, float)
    return DeqBlockParams(W_ip, b_ip, W, np.asarray(b, float))


def oracle_step(s, W, b, x_proj, alpha, beta):
    # written out element by element, on purpose independent of the engine
    d = len(s)
    t = [math.tanh(v) for v in s]
    prod = [sum(W[i][j] * t[j] for j in range(d)) for i in range(d)]
    return np.array([alpha * s[i] + beta * prod[i] + b[i] + x_proj[i] for i in range(d)])


def oracle_solve(W, b, x_proj, alpha, beta, tol, max_iters):
    s = np.asarray(b, float) + np.asarray(x_proj, float)
    for _ in range(max_iters):
        new = oracle_step(s, W, b, x_proj, alpha, beta)
        done = np.linalg.norm(new - s) / max(np.linalg.norm(s), 1e-12) <= tol
        s = new
        if done:
            break
    return s


# -- deq_step ----------------------------------------------------------------

def test_step_all_zero_is_zero():
    p = block(np.zeros((3, 3)), np.zeros(3))
    assert np.array_equal(deq_step(np.zeros(3), p, np.zeros(3), 0.5, 0.5, SIMPLE), np.zeros(3))


def test_step_pure_momentum_decay():
    v = np.array([0.3, -1.2, 4.0])
    p = block(np.zeros((3, 3)), np.zeros(3))
    assert np.array_equal(deq_step(v, p, np.zeros(3), 0.5, 0.5, SIMPLE), 0.5 * v)


def test_step_matches_straight_line_oracle():
    W = [[0.2, 0.1], [0.0, 0.3]]
    b, x_proj, s = [0.1, -0.1], [0.05, 0.05], [1.0, -1.0]
    got = deq_step(np.array(s), block(W, b), np.array(x_proj), 0.5, 0.5, SIMPLE)
    np.testing.assert_allclose(got, oracle_step(s, W, b, x_proj, 0.5, 0.5), atol=1e-12, rtol=0)


def test_step_shape_mismatch_is_configuration_error():
    p = block(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ConfigurationError):
        deq_step(np.zeros(3), p, np.zeros(2), 0.5, 0.5, SIMPLE)


def test_step_non_finite_is_numeric_error():
    p = block(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(NumericError):
        deq_step(np.array([np.inf, 0.0]), p, np.zeros(2), 0.5, 0.5, SIMPLE)


# -- solve_fixed_point -------------------------------------------------------

def test_linear_fixed_point_closed_form():
    u = np.array([0.4, -0.2, 1.5])
    p = block(np.zeros((3, 3)), u)
    res = solve_fixed_point(p, np.zeros(3), ModelConfig(1, d_hidden=3, tol=1e-12, max_iters=200))
    assert res.converged
    np.testing.assert_allclose(res.s_star, 2 * u, rtol=1e-10)


def test_scalar_root_against_bisection():
    def f(s):
        return 0.5 * s - 0.5 * math.tanh(s) - 0.2

    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    root = 0.5 * (lo + hi)
    p = block([[1.0]], [0.0])
    res = solve_fixed_point(p, np.array([0.2]), ModelConfig(1, d_hidden=1, tol=1e-4))
    assert res.converged
    assert abs(res.s_star[0] - root) <= 1e-3 * abs(root)
    # At the default tolerance the stopping rule bounds the last step, so the
    # distance to the root is at most L / (1 - L) times tol (L = map slope).
    res = solve_fixed_point(p, np.array([0.2]), ModelConfig(1, d_hidden=1))
    lip = 0.5 + 0.5 / math.cosh(root) ** 2
    assert abs(res.s_star[0] - root) <= lip / (1 - lip) * 1e-3 * abs(res.s_star[0]) * 1.01


def test_contraction_suite_converges_within_50():
    cfg = ModelConfig(4, d_hidden=16, n_blocks=1)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((16, 16))
        W *= 0.4 / (0.5 * np.linalg.norm(W, 2))
        p = block(W, rng.normal(size=16))
        x_proj = rng.normal(size=16) * 2
        res = solve_fixed_point(p, x_proj, cfg)
        assert res.converged and res.iterations <= 50
        nxt = deq_step(res.s_star, p, x_proj, 0.5, 0.5, SIMPLE)
        cert = np.linalg.norm(nxt - res.s_star) / max(np.linalg.norm(res.s_star), 1e-12)
        assert cert <= 2e-3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), gain=st.floats(0.0, 0.45), scale=st.floats(0.0, 20.0))
def test_contraction_converges_for_any_input(seed, gain, scale):
    rng = np.random.default_rng(seed)
    d = 6
    W = rng.standard_normal((d, d))
    W *= gain / (0.5 * np.linalg.norm(W, 2))
    p = block(W, rng.normal(size=d))
    res = solve_fixed_point(p, rng.normal(size=d) * scale, ModelConfig(1, d_hidden=d))
    assert res.converged
    assert res.residual <= 1e-3
    assert res.iterations <= 100


def test_non_convergence_is_flagged_not_raised():
    # alpha = 1 and W = 0 makes the state grow linearly: never converges
    p = block(np.zeros((2, 2)), np.ones(2))
    res = solve_fixed_point(p, np.zeros(2), ModelConfig(1, d_hidden=2, alpha=1.0, max_iters=5))
    assert not res.converged
    assert res.iterations == 5


def test_zero_state_does_not_divide_by_zero():
    p = block(np.zeros((2, 2)), np.zeros(2))
    res = solve_fixed_point(p, np.zeros(2), ModelConfig(1, d_hidden=2))
    assert res.converged and res.iterations == 1 and res.residual == 0.0


# -- forward -----------------------------------------------------------------

def zero_model(cfg):
    blocks = [DeqBlockParams(np.zeros((cfg.d_hidden, cfg.d_in)), np.zeros(cfg.d_hidden),
                             np.zeros((cfg.d_hidden, cfg.d_hidden)), np.zeros(cfg.d_hidden))
              for _ in range(cfg.n_blocks)]
    calib = np.ones(4) if cfg.cell.is_aoc else None
    return EnsembleModel(cfg, blocks, np.zeros((2, cfg.width)), np.zeros(2), calib)


def test_forward_zero_parameters_gives_zero_logits():
    model = zero_model(ModelConfig(5, d_hidden=3, n_blocks=2))
    logits, results = forward(model, np.arange(5.0))
    assert np.array_equal(logits, np.zeros(2))
    assert all(r.converged for r in results)


def test_single_block_is_solver_plus_head():
    cfg = ModelConfig(3, d_hidden=4, n_blocks=1)
    model = init_ensemble(cfg, seed=3)
    model.W_op[:] = np.random.default_rng(1).normal(size=(2, 4))
    x = np.array([0.5, -1.0, 0.25])
    blk = model.blocks[0]
    res = solve_fixed_point(blk, blk.W_ip @ x + blk.b_ip, cfg)
    logits, _ = forward(model, x)
    np.testing.assert_array_equal(logits, model.W_op @ res.s_star + model.b_op)


def test_forward_matches_straight_line_oracle():
    cfg = ModelConfig(4, d_hidden=3, n_blocks=2, tol=1e-3)
    rng = np.random.default_rng(11)
    model = init_ensemble(cfg, seed=5)
    for blk in model.blocks:
        blk.b[:] = rng.normal(size=3) * 0.3
    model.W_op[:] = rng.normal(size=(2, 6))
    model.b_op[:] = rng.normal(size=2)
    x = rng.normal(size=4)
    states = []
    for blk in model.blocks:
        xp = [sum(blk.W_ip[i][j] * x[j] for j in range(4)) + blk.b_ip[i] for i in range(3)]
        states.append(oracle_solve(blk.W.tolist(), blk.b.tolist(), xp, 0.5, 0.5, 1e-3, 100))
    z = np.concatenate(states)
    expect = [sum(model.W_op[k][j] * z[j] for j in range(6)) + model.b_op[k] for k in range(2)]
    logits, _ = forward(model, x)
    np.testing.assert_allclose(logits, expect, atol=1e-10, rtol=0)


def test_batch_forward_agrees_with_single_rows():
    cfg = ModelConfig(5, d_hidden=4, n_blocks=3)
    model = init_ensemble(cfg, seed=2)
    X = np.random.default_rng(0).normal(size=(7, 5)) * 3
    batch = forward_batch(model, X).logits
    for i in range(7):
        # row-wise BLAS blocking may differ from the batched product by an ulp
        np.testing.assert_allclose(forward(model, X[i])[0], batch[i], rtol=1e-14, atol=1e-14)


def test_forward_is_deterministic():
    model = init_ensemble(ModelConfig(6, cell=CellSpec.aoc()), seed=9)
    X = np.random.default_rng(4).normal(size=(20, 6))
    assert np.array_equal(model.predict_logits(X), model.predict_logits(X))


def test_argmax_ties_go_to_class_zero():
    assert list(predict_class(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]))) == [0, 1, 0]


def test_forward_rejects_wrong_width():
    model = init_ensemble(ModelConfig(3, d_hidden=2, n_blocks=1))
    with pytest.raises(ConfigurationError):
        forward(model, np.zeros(4))


# -- configuration and counting -----------------------------------------------

@pytest.mark.parametrize("d_in,d_hidden,cell,total,optical", [
    (60, 16, CellSpec.simple(), 5122, 1024),
    (60, 48, CellSpec.aoc(), 21510, 9216),
    (127, 16, CellSpec.aoc(), 9414, 1024),
    (60, 16, CellSpec.aoc(), 5126, 1024),
])
def test_parameter_count_anchors(d_in, d_hidden, cell, total, optical):
    cfg = ModelConfig(d_in, d_hidden=d_hidden, n_blocks=4, cell=cell)
    model = init_ensemble(cfg)
    counts = parameter_count(model)
    assert counts == {"total": total, "optical": optical}
    assert sum(a.size for a in model.params().values()) == total
    assert count_parameters(cfg) == counts


@pytest.mark.parametrize("kw", [dict(d_in=0), dict(d_in=2, d_hidden=0), dict(d_in=2, n_blocks=0),
                                dict(d_in=2, tol=0.0), dict(d_in=2, tol=1.0)])
def test_model_config_rejects_bad_values(kw):
    with pytest.raises(ConfigurationError):
        ModelConfig(**kw)


def test_calibration_gains_present_iff_aoc():
    cfg = ModelConfig(3, d_hidden=2, n_blocks=1)
    m = zero_model(cfg)
    with pytest.raises(ConfigurationError):
        EnsembleModel(cfg, m.blocks, m.W_op, m.b_op, np.ones(4))
    aoc = ModelConfig(3, d_hidden=2, n_blocks=1, cell=CellSpec.aoc())
    with pytest.raises(ConfigurationError):
        EnsembleModel(aoc, m.blocks, m.W_op, m.b_op, None)


def test_init_respects_contraction_bound():
    model = init_ensemble(ModelConfig(10, d_hidden=16, beta=0.7), seed=1)
    for blk in model.blocks:
        assert 0.7 * np.linalg.norm(blk.W, 2) <= 0.4 + 1e-12


# -- checkpoints ---------------------------------------------------------------

@pytest.mark.parametrize("cell", [CellSpec.simple(), CellSpec.aoc(power_norm=True, target_rms=0.7, rng_seed=3)])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, cell):
    model = init_ensemble(ModelConfig(5, d_hidden=3, n_blocks=2, cell=cell), seed=8)
    if model.calib is not None:
        model.calib[:] = [1.01, 0.97, 1.2, 0.8]
    path = checkpoint.save(model, tmp_path / "m.ckpt")
    assert path.read_text().splitlines()[0] == "OPTIDEQ v1"
    back = checkpoint.load(path)
    assert back.config == model.config
    for name, arr in model.params().items():
        assert np.array_equal(back.params()[name], arr), name
    X = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(back.predict_logits(X), model.predict_logits(X))
    assert checkpoint.dumps(back) == checkpoint.dumps(model)


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ConfigurationError):
        checkpoint.loads("NOT A CHECKPOINT\n")
