import json
import pickle
import warnings

import numpy as np
import pytest

from fragdock import fixtures
from fragdock.diffusion import conditional_score, score_matching_loss
from fragdock.errors import DimensionMismatch, Divergence, InputError, SingularInertia
from fragdock.fragment import PoseState, build_fragment_set, phi_inverse
from fragdock.liegroup import exp_so3
from fragdock.scorehead import (N_PARAMS, DockContext, ToyScoreModel, build_pool, inertia, newton_euler_head,
                                oracle_score, pinv_inertia, pool_loss, toy_model_train, zero_model)


def complex_for(g, scale=2.7):
    _, pocket = fixtures.pocket_around(g.coords, n=30, seed=4)
    center = pocket.mean(axis=0)
    ctx = DockContext((pocket - center) / scale, center, scale)
    fs = build_fragment_set(g, frozenset(g.torsional_bonds))
    z0, fs = phi_inverse((g.coords - center) / scale, fs)
    return fs, ctx, z0


def centred_cloud(rng, n=5):
    x = rng.standard_normal((n, 3))
    return x - x.mean(axis=0)


def test_zero_forces_give_zero_scores(sched, table, rng):
    x = centred_cloud(rng)
    s_p, v = newton_euler_head(np.zeros_like(x), x, np.zeros(3), np.eye(3), 0.5, sched, table)
    assert np.all(s_p == 0) and np.all(v == 0)


def test_uniform_force_translates_only(sched, table, rng):
    x = centred_cloud(rng) + 2.0
    f = np.tile([0.3, -0.1, 0.2], (len(x), 1))
    s_p, v = newton_euler_head(f, x, x.mean(axis=0), exp_so3([0.2, 0.1, 0.0]), 0.5, sched, table)
    assert np.allclose(s_p, [0.3, -0.1, 0.2] / np.sqrt(1 - sched.alpha(0.5)))
    assert np.abs(v).max() < 1e-12


def test_torque_turns_about_its_axis(sched, table):
    x = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    f = np.array([[0, 1.0, 0], [0, -1.0, 0], [-1.0, 0, 0], [1.0, 0, 0]])  # pure torque about +z
    _, v = newton_euler_head(f, x, np.zeros(3), np.eye(3), 0.5, sched, table)
    assert abs(v[0]) < 1e-12 and abs(v[1]) < 1e-12 and v[2] > 0


def test_collinear_fragment_uses_pseudo_inverse(sched, table):
    x = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
    I = inertia(x)
    with pytest.warns(SingularInertia):
        Iinv = pinv_inertia(I)
    assert np.abs(Iinv @ [1.0, 0, 0]).max() == 0  # no spin about the bond axis
    f = np.array([[0, 0, 1.0], [0, 1.0, -1.0]])
    with pytest.warns(SingularInertia):
        _, v = newton_euler_head(f, x, np.zeros(3), np.eye(3), 0.5, sched, table)
    assert abs(v[0]) < 1e-12


def test_pinv_is_inverse_when_full_rank(rng):
    I = inertia(centred_cloud(rng, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert np.allclose(pinv_inertia(I) @ I, np.eye(3))


def test_head_shape_checks(sched, table):
    with pytest.raises(DimensionMismatch):
        newton_euler_head(np.zeros((3, 3)), np.zeros((4, 3)), np.zeros(3), np.eye(3), 0.5, sched, table)


def test_head_rotation_equivariance(sched, table, rng):
    x, f = centred_cloud(rng) + 1.0, rng.standard_normal((5, 3))
    p, R, Q = x.mean(axis=0), exp_so3(rng.standard_normal(3)), exp_so3(rng.standard_normal(3))
    s_p, v = newton_euler_head(f, x, p, R, 0.3, sched, table)
    s_p2, v2 = newton_euler_head(f @ Q.T, x @ Q.T, Q @ p, Q @ R, 0.3, sched, table)
    assert np.abs(s_p2 - Q @ s_p).max() < 1e-12
    assert np.abs(v2 - v).max() < 1e-10


def test_oracle_is_conditional_score(sched, table, rng):
    g = fixtures.methylhexane()
    fs, ctx, z0 = complex_for(g)
    zt = PoseState(rng.standard_normal((fs.m, 3)), exp_so3(rng.standard_normal((fs.m, 3))))
    a, b = oracle_score(z0, sched, table)(zt, 0.4, fs, ctx), conditional_score(sched, table, zt, z0, 0.4)
    assert np.array_equal(a.trans, b.trans) and np.array_equal(a.rot, b.rot)
    pickle.loads(pickle.dumps(oracle_score(z0, sched, table)))  # worker processes need this


def test_toy_model_json_roundtrip(sched, table, rng, tmp_path):
    model = ToyScoreModel(rng.standard_normal(N_PARAMS), sched, table)
    path = tmp_path / "toy.json"
    model.save(path)
    back = ToyScoreModel.from_json(json.loads(path.read_text()), sched, table)
    assert np.array_equal(back.theta, model.theta)


@pytest.mark.parametrize("edit", [
    lambda d: d.update(kind="graph"),
    lambda d: d.update(theta=d["theta"][:-1]),
    lambda d: d["features"].update(n_rbf=8),
])
def test_toy_model_rejects_bad_documents(sched, table, edit):
    doc = zero_model(sched, table).to_json()
    edit(doc)
    with pytest.raises(InputError):
        ToyScoreModel.from_json(doc, sched, table)


def test_zero_model_scores_are_zero(sched, table):
    g = fixtures.methylhexane()
    fs, ctx, z0 = complex_for(g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularInertia)
        s = zero_model(sched, table)(z0, 0.5, fs, ctx)
    assert np.all(s.trans == 0) and np.all(s.rot == 0)


def test_pool_loss_matches_direct_loss(sched, table, rng):
    g = fixtures.methylhexane()
    fs, ctx, z0 = complex_for(g)
    pool = build_pool([(fs, ctx, z0)], sched, table, np.random.default_rng(3), n_samples=1)
    # replay the same draws to evaluate the loss the slow way at theta = 0
    replay = np.random.default_rng(3)
    t = float(replay.uniform(0.05, 1.0))
    from fragdock.diffusion import forward_sample
    zt = forward_sample(sched, table, z0, t, replay)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularInertia)
        pred = zero_model(sched, table)(zt, t, fs, ctx)
    direct = score_matching_loss(pred, conditional_score(sched, table, zt, z0, t), t, sched, table)
    assert pool_loss(np.zeros(N_PARAMS), pool, table, grad=False) == pytest.approx(direct, rel=1e-10)


def test_pool_gradient_matches_differences(sched, table):
    g = fixtures.methylhexane()
    fs, ctx, z0 = complex_for(g)
    rng = np.random.default_rng(5)
    pool = build_pool([(fs, ctx, z0)], sched, table, rng, n_samples=3)
    theta = rng.standard_normal(N_PARAMS) * 0.05
    _, grad = pool_loss(theta, pool, table)
    for k in rng.choice(N_PARAMS, 6, replace=False):
        e = np.zeros(N_PARAMS)
        e[k] = 1e-6
        fd = (pool_loss(theta + e, pool, table, grad=False) - pool_loss(theta - e, pool, table, grad=False)) / 2e-6
        assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_training_never_increases_loss(sched, table):
    g = fixtures.methylhexane()
    data = [complex_for(g)]
    _, history = toy_model_train(data, sched, table, steps=60, rng=np.random.default_rng(0), n_samples=4)
    assert np.all(np.diff(history) <= 0)
    assert history[-1] < history[0]


def test_training_errors(sched, table):
    with pytest.raises(InputError):
        toy_model_train([], sched, table, steps=1)
    g = fixtures.butane()
    data = [complex_for(g)]
    with pytest.raises(Divergence):
        toy_model_train(data, sched, table, steps=200, n_samples=1, theta0=np.full(N_PARAMS, np.nan))
