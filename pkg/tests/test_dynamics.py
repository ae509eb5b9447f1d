import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biomotion.autodiff import Tensor
from biomotion.diffusion import DenoiserConfig, init_denoiser
from biomotion.dynamics import (N_MUSCLES, ComponentPredictor, DynamicsComponents, DynamicsConfig, MuscleActivation,
                                compose_acceleration, coriolis_gravity_analytic, decode_residual, history_features,
                                init_decoder, init_predictor, muscle_activation, muscle_force, predict_accel,
                                predict_components)
from biomotion.params import ParamBundle
from biomotion.representation import MotionCodec
from biomotion.sim import default_scenarios, simulate
from biomotion.training import TrainConfig, WindowDataset, draw_step, fit_decoder, residual_mse

CFG = DynamicsConfig(n=6, window=4, hidden=10, act_hidden=7, key_dim=5, decoder_hidden=9)


def _predictor(seed=0, zero=False):
    return ComponentPredictor(CFG, init_predictor(CFG, np.random.default_rng(seed), zero=zero))


def _window(rng):
    h = rng.normal(size=(CFG.window, CFG.n))
    v = np.vstack([np.zeros((1, CFG.n)), np.diff(h, axis=0)])
    return h, v


def test_zero_predictor_gives_zero_inverse_mass_and_bias_forces(rng):
    pred = _predictor(zero=True)
    pred.params["dyn.e_b"] = rng.normal(size=CFG.n)
    pred.params["dyn.c_b"] = rng.normal(size=CFG.n)
    c = predict_components(*_window(rng), pred)
    assert np.all(c.m_inv == 0.0)
    assert np.array_equal(c.e_force, pred.params["dyn.e_b"])
    assert np.array_equal(c.c_force, pred.params["dyn.c_b"])
    assert np.all(c.muscle_force == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_inverse_mass_exactly_symmetric(seed):
    rng = np.random.default_rng(seed)
    pred = _predictor(seed)
    for k in pred.params:
        pred.params[k] = pred.params[k] + rng.normal(size=pred.params[k].shape)
    c = predict_components(*_window(rng), pred)
    assert np.max(np.abs(c.m_inv - c.m_inv.T)) == 0.0


def test_components_are_deterministic(rng):
    h, v = _window(rng)
    a = predict_components(h, v, _predictor(3))
    b = predict_components(h, v, _predictor(3))
    for name in ("m_inv", "e_force", "c_force", "muscle_force"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_non_finite_history_rejected(rng):
    h, v = _window(rng)
    h[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        predict_components(h, v, _predictor())


def test_activation_range(rng):
    h, v = _window(rng)
    u = muscle_activation(h, v, _predictor(zero=True))
    assert np.array_equal(u.u, np.full(N_MUSCLES, 0.5))
    pred = _predictor(zero=True)
    pred.params["dyn.u_b2"] = np.full(N_MUSCLES, 50.0)
    assert np.allclose(muscle_activation(h, v, pred).u, 1.0)
    assert np.array_equal(MuscleActivation(np.linspace(-1, 2, 8)).u, np.clip(np.linspace(-1, 2, 8), 0, 1))
    with pytest.raises(ValueError):
        MuscleActivation(np.zeros(7))


def test_muscle_force_oracles(rng):
    pred = _predictor(5)
    pred.params["dyn.h_b"] = rng.normal(size=CFG.hidden)
    h, v = _window(rng)
    assert np.all(muscle_force(np.zeros(8), h, v, pred) == 0.0)
    p = pred.params
    feats = np.concatenate([h.ravel(), v.ravel(), [0.0]])
    q = np.tanh(feats @ p["dyn.h_w"] + p["dyn.h_b"]) @ p["dyn.q_w"]
    score = [float(q @ p["dyn.keys"][k]) / math.sqrt(CFG.key_dim) for k in range(N_MUSCLES)]
    for k in range(N_MUSCLES):
        one = np.eye(N_MUSCLES)[k]
        assert np.allclose(muscle_force(one, h, v, pred), score[k] * p["dyn.values"][k], atol=1e-13)
    u = rng.random(N_MUSCLES)
    brute = sum(u[k] * score[k] * p["dyn.values"][k] for k in range(N_MUSCLES))
    assert np.allclose(muscle_force(u, h, v, pred), brute, atol=1e-13)
    u2 = rng.random(N_MUSCLES)
    lin = muscle_force(0.3 * u + 0.5 * u2, h, v, pred)
    assert np.allclose(lin, 0.3 * muscle_force(u, h, v, pred) + 0.5 * muscle_force(u2, h, v, pred), atol=1e-13)


def test_coriolis_gravity_cases():
    out = coriolis_gravity_analytic(np.zeros(6), np.zeros(6), 1.0, np.zeros(3))
    assert np.array_equal(out, [0, -9.81, 0, 0, -9.81, 0])
    r = np.array([0.5, -0.25, 2.0])
    out = coriolis_gravity_analytic(r, [1.0, 0, 0], 1.0, [0, 0, 1.0], g=0.0)
    assert np.allclose(out, np.array([0, 2.0, 0]) + 1.0 * r, atol=1e-15)
    assert np.all(coriolis_gravity_analytic(r, [1, 2, 3], 0.0, [1, 2, 3]) == 0.0)


def _comp(m_inv, *forces):
    n = len(forces[0])
    f = list(forces) + [np.zeros(n)] * (3 - len(forces))
    return DynamicsComponents(np.asarray(m_inv, float), *map(np.asarray, f))


def test_compose_acceleration_simple():
    assert np.all(compose_acceleration(_comp(np.eye(3), np.zeros(3))) == 0)
    acc = compose_acceleration(_comp(np.eye(3), [0, -4.0, 0], [0, -5.81, 0]))
    assert np.allclose(acc, [0, -9.81, 0], atol=1e-15)


def test_pendulum_oracle_100_draws():
    rng = np.random.default_rng(7)
    g = 9.81
    worst = 0.0
    for _ in range(100):
        th, L, m = rng.uniform(-3, 3), rng.uniform(0.2, 3.0), rng.uniform(0.1, 20.0)
        c = _comp([[1.0 / (m * L * L)]], [0.0], [-m * g * L * math.sin(th)], [0.0])
        worst = max(worst, abs(compose_acceleration(c)[0] + g / L * math.sin(th)))
    assert worst < 1e-10


def test_compose_linear_in_each_force(rng):
    M = rng.normal(size=(4, 4))
    M = M + M.T
    a, b, c = rng.normal(size=(3, 4))
    base = compose_acceleration(_comp(M, a, b, c))
    assert np.allclose(compose_acceleration(_comp(M, 2 * a, b, c)) - base, M @ a, atol=1e-12)


def test_decoder_zero_init_and_causality(rng):
    T = 12
    acc, ctx = rng.normal(size=(2, T, CFG.n))
    assert np.all(decode_residual(acc, ctx, init_decoder(CFG, rng)) == 0.0)
    dec = init_decoder(CFG, rng)
    dec["dec.out_w"] = rng.normal(size=dec["dec.out_w"].shape)
    base = decode_residual(acc, ctx, dec)
    j = 5
    acc2 = acc.copy()
    acc2[j] += 1.0
    ctx2 = ctx.copy()
    ctx2[j + 2] -= 1.0
    pert = decode_residual(acc2, ctx, dec)
    assert np.array_equal(pert[:j], base[:j]) and np.all(np.abs(pert[j] - base[j]) > 0)
    pert = decode_residual(acc, ctx2, dec)
    assert np.array_equal(pert[:j + 2], base[:j + 2])
    with pytest.raises(ValueError, match="length mismatch"):
        decode_residual(acc[:5], ctx, dec)


def test_history_features_are_causal(rng):
    x = rng.normal(size=(1, 10, CFG.n))
    f = history_features(Tensor(x), CFG.window).data
    assert f.shape == (1, 10, CFG.n_features)
    x2 = x.copy()
    x2[0, 6] += 1.0
    f2 = history_features(Tensor(x2), CFG.window).data
    assert np.array_equal(f[0, :6], f2[0, :6])
    # the first frame's window is padded by repetition, so its differences vanish
    W, n = CFG.window, CFG.n
    assert np.all(f[0, 0, W * n:2 * W * n] == 0.0)


def test_predict_accel_shape_and_replay(rng):
    p = init_predictor(CFG, rng)
    x = rng.normal(size=(2, 9, CFG.n))
    a1 = predict_accel(p, x, CFG).data
    assert a1.shape == x.shape
    assert np.array_equal(a1, predict_accel(p, x, CFG).data)


def test_trained_decoder_halves_reconstruction_error():
    tr = [simulate(sc).motion.positions for sc in default_scenarios(0, 16)]
    va = [simulate(sc).motion.positions for sc in default_scenarios(1, 4)]
    codec = MotionCodec.fit(tr, 20.0)
    model = init_denoiser(DenoiserConfig(n=codec.n), seed=0)
    val = WindowDataset(va, codec, 32)
    rng = np.random.default_rng(9)
    batch = val.batch(rng.integers(0, len(val), 256))
    draws = draw_step(rng, batch.theta0.shape, model.schedule, 0.0)
    zero = residual_mse(model, batch, draws)
    trained = fit_decoder(model, WindowDataset(tr, codec, 32), TrainConfig(), steps=300)
    assert residual_mse(trained, batch, draws) <= 0.5 * zero
    # only the decoder moved
    for k in model.params:
        if not k.startswith("dec."):
            assert np.array_equal(trained.params[k], model.params[k])
