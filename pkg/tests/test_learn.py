"""Trainable components: GNN contracts, parameter store round-trips, loss
evaluation, the SPSA estimator, and the training loop."""

import numpy as np
import pytest

from risbf import channel, learn
from risbf.config import SystemConfig


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# GNN


def test_gnn_param_count_formula():
    for m in (2, 4, 8):
        gnn = learn.GnnParams.init(m, rng(m))
        assert gnn.n_params == 69 * m * m + 54 * m + 2


def test_gnn_vector_roundtrip():
    gnn = learn.GnnParams.init(3, rng(1))
    vec = gnn.to_vector()
    back = learn.GnnParams.from_vector(vec, 3)
    np.testing.assert_array_equal(back.to_vector(), vec)


def test_gnn_identical_inputs_give_uniform_split():
    m, k, p_t = 4, 3, 2.0
    gnn = learn.GnnParams.init(m, rng(2))
    feats = np.tile(rng(3).standard_normal(4 * m + 6), (k, 1))
    p, zeta = learn.gnn_forward(gnn, feats, p_t)
    np.testing.assert_allclose(p, p_t / k, rtol=1e-9)
    np.testing.assert_allclose(zeta, p_t / k, rtol=1e-9)


def test_gnn_permutation_equivariance():
    m, k, p_t = 3, 4, 1.0
    gnn = learn.GnnParams.init(m, rng(4))
    feats = rng(5).standard_normal((k, 4 * m + 6))
    p, zeta = learn.gnn_forward(gnn, feats, p_t)
    perm = rng(6).permutation(k)
    p2, zeta2 = learn.gnn_forward(gnn, feats[perm], p_t)
    np.testing.assert_allclose(p2, p[perm], rtol=1e-12)
    np.testing.assert_allclose(zeta2, zeta[perm], rtol=1e-12)


def test_gnn_budget_exactness():
    m, k, p_t = 2, 5, 0.01
    gnn = learn.GnnParams.init(m, rng(7))
    feats = rng(8).standard_normal((k, 4 * m + 6)) * 10.0
    p, zeta = learn.gnn_forward(gnn, feats, p_t)
    assert p.sum() == pytest.approx(p_t, abs=1e-9 * p_t)
    assert zeta.sum() == pytest.approx(p_t, abs=1e-9 * p_t)
    assert np.all(p > 0) and np.all(zeta > 0)


def test_gnn_single_user_fallback():
    m = 3
    gnn = learn.GnnParams.init(m, rng(9))
    feats = rng(10).standard_normal((1, 4 * m + 6))
    p, zeta = learn.gnn_forward(gnn, feats, 1.0)
    assert p[0] == pytest.approx(1.0)
    assert zeta[0] == pytest.approx(1.0)


def test_gnn_features_shape_and_scale():
    cfg = SystemConfig(m=4, k=3, n=8, seed=11)
    cs = channel.sample_channels(channel.sample_los(cfg, rng(11)), cfg, rng(12))
    theta = np.exp(1j * rng(13).uniform(0, 2 * np.pi, 8))
    u = rng(14).standard_normal(3) * 1e6 + 1j * rng(15).standard_normal(3) * 1e6
    lam = rng(16).uniform(1, 5, 3)
    feats = learn.gnn_features(cs, theta, u, lam, cfg)
    assert feats.shape == (3, 4 * cfg.m + 6)
    # scaling keeps the channel features at O(1) despite ~1e-6 amplitudes
    assert 1e-3 < np.max(np.abs(feats[:, :2 * cfg.m])) < 1e3


# ---------------------------------------------------------------------------
# parameter store


def test_trainable_param_count_matches_inventory():
    for m, i_o in ((2, 3), (4, 5), (8, 10)):
        params = learn.TrainableParams.init(m, i_o, "pinet-plus", rng(17))
        assert params.to_vector().size == i_o + 69 * m * m + 54 * m + 3
        im = learn.TrainableParams.init(m, i_o, "pinet-imcsi", rng(17))
        assert im.to_vector().size == i_o + 69 * m * m + 54 * m + 3 + 2 * i_o


def test_trainable_vector_roundtrip():
    params = learn.TrainableParams.init(3, 4, "pinet-imcsi", rng(18))
    vec = params.to_vector()
    vec2 = vec + rng(19).standard_normal(vec.size)
    back = params.from_vector(vec2)
    np.testing.assert_array_equal(back.to_vector(), vec2)
    assert np.all(back.gammas > 0)
    assert np.all((back.rhos > 0) & (back.rhos <= 1))
    assert np.all((back.deltas > 0) & (back.deltas <= 1))


def test_trainable_init_gamma_one():
    params = learn.TrainableParams.init(2, 3, "pinet", rng(20))
    np.testing.assert_allclose(params.gammas, 1.0)


def test_checkpoint_roundtrip(tmp_path):
    params = learn.TrainableParams.init(3, 4, "pinet-plus", rng(21))
    path = tmp_path / "ck.json"
    params.save(str(path))
    back = learn.TrainableParams.load(str(path))
    assert (back.m, back.i_o, back.variant) == (3, 4, "pinet-plus")
    np.testing.assert_array_equal(back.to_vector(), params.to_vector())


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    import json
    params = learn.TrainableParams.init(2, 3, "pinet", rng(22))
    path = tmp_path / "ck.json"
    params.save(str(path))
    doc = json.loads(path.read_text())
    doc["vector"] = doc["vector"][:-5]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        learn.TrainableParams.load(str(path))


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        learn.TrainableParams.init(2, 3, "mystery", rng(23))


# ---------------------------------------------------------------------------
# loss


def test_unrolled_loss_deterministic():
    cfg = SystemConfig(m=3, k=2, n=6, seed=24)
    cs = channel.sample_channels(channel.sample_los(cfg, rng(24)), cfg, rng(25))
    params = learn.TrainableParams.init(cfg.m, 3, "pinet-plus", rng(26))
    a = learn.unrolled_loss(params, [cs], cfg, rng=rng(27))
    b = learn.unrolled_loss(params, [cs], cfg, rng=rng(27))
    assert a == b
    assert np.isfinite(a) and a < 0  # negative WSR


def test_unrolled_loss_empty_batch_rejected():
    cfg = SystemConfig(m=2, k=2, n=4, seed=28)
    params = learn.TrainableParams.init(cfg.m, 2, "pinet", rng(29))
    with pytest.raises(ValueError):
        learn.unrolled_loss(params, [], cfg, rng=rng(30))


def test_unrolled_loss_smooth_in_parameters():
    cfg = SystemConfig(m=2, k=2, n=4, phase_bits=2, seed=31)
    cs = channel.sample_channels(channel.sample_los(cfg, rng(31)), cfg, rng(32))
    params = learn.TrainableParams.init(cfg.m, 2, "pinet", rng(33))
    base = learn.unrolled_loss(params, [cs], cfg, rng=rng(34))
    vec = params.to_vector()
    bumped = params.from_vector(vec + 1e-6)
    moved = learn.unrolled_loss(bumped, [cs], cfg, rng=rng(34))
    assert abs(moved - base) < 1e-2  # no staircase jump in training mode


# ---------------------------------------------------------------------------
# SPSA


def test_spsa_linear_function_exact_gradient():
    g = np.array([1.0, -2.0, 3.0, 0.5])
    grad = learn.spsa_gradient(np.zeros(4), lambda v: float(g @ v), 1e-3,
                               rng(35), n_avg=200)
    np.testing.assert_allclose(grad, g, rtol=0.2)


def test_spsa_expectation_matches_gradient():
    # E over directions of the two-sided estimator = gradient for quadratics
    r = rng(36)
    target = r.standard_normal(10)
    x = r.standard_normal(10)

    def f(v):
        return float(np.sum((v - target) ** 2))

    grad = learn.spsa_gradient(x, f, 1e-4, rng(37), n_avg=10_000)
    true = 2 * (x - target)
    # cross-talk variance scales with the overall gradient magnitude, so
    # small coordinates carry an absolute (not relative) error floor
    np.testing.assert_allclose(grad, true, rtol=0.1,
                               atol=0.1 * np.max(np.abs(true)))


def test_spsa_descent_on_quadratic():
    r = rng(38)
    target = r.standard_normal(6)
    x = np.zeros(6)
    for t in range(5000):
        c = 0.1 / (t + 1) ** 0.101
        g = learn.spsa_gradient(x, lambda v: float(np.sum((v - target) ** 2)),
                                c, r)
        x = x - 0.01 * g
    assert np.linalg.norm(x - target) < 1e-2 * max(1.0, np.linalg.norm(target))


def test_spsa_rejects_bad_scale():
    with pytest.raises(ValueError):
        learn.spsa_gradient(np.zeros(2), lambda v: 0.0, 0.0, rng(39))


def test_spsa_block_gradient_respects_blocks():
    g = np.array([1.0, -1.0, 2.0, -2.0])
    blocks = [slice(0, 2), slice(2, 4)]
    grad, loss = learn.spsa_block_gradient(
        np.zeros(4), lambda v: float(g @ v), 1e-3, rng(40), blocks, n_avg=2000)
    np.testing.assert_allclose(grad, g, rtol=0.1)
    assert np.isfinite(loss)


# ---------------------------------------------------------------------------
# training loop


def tiny_setup(variant="pinet", seed=41):
    cfg = SystemConfig(m=2, k=2, n=4, seed=seed)
    dataset = channel.generate_dataset(cfg, 8)
    return cfg, dataset


def test_train_zero_epochs_keeps_init():
    cfg, dataset = tiny_setup()
    hyper = learn.TrainHyper(epochs=0, batch_size=4, holdout=2)
    res = learn.train(dataset, cfg, "pinet", hyper, rng(42), i_o=2)
    ref = learn.TrainableParams.init(cfg.m, 2, "pinet", rng(42))
    np.testing.assert_array_equal(res.params.to_vector(), ref.to_vector())


def test_train_loss_trace_length():
    cfg, dataset = tiny_setup()
    hyper = learn.TrainHyper(epochs=3, batch_size=3, holdout=2)
    res = learn.train(dataset, cfg, "pinet", hyper, rng(43), i_o=2)
    # 6 training samples, batch 3 -> 2 steps per epoch, 3 epochs
    assert len(res.loss_trace) == 6
    assert len(res.holdout_trace) == 4  # initial + one per epoch
    assert np.all(np.isfinite(res.loss_trace))


def test_train_gammas_stay_positive():
    cfg, dataset = tiny_setup()
    hyper = learn.TrainHyper(epochs=2, batch_size=4, lr=0.5, holdout=2)
    res = learn.train(dataset, cfg, "pinet-plus", hyper, rng(44), i_o=2)
    assert np.all(res.params.gammas > 0)


def test_train_best_holdout_returned():
    cfg, dataset = tiny_setup()
    hyper = learn.TrainHyper(epochs=3, batch_size=4, holdout=2)
    res = learn.train(dataset, cfg, "pinet", hyper, rng(45), i_o=2)
    assert res.best_holdout == min(res.holdout_trace)


def test_train_resume_compatibility_check():
    cfg, dataset = tiny_setup()
    hyper = learn.TrainHyper(epochs=0, batch_size=4, holdout=2)
    init = learn.TrainableParams.init(cfg.m, 2, "pinet-plus", rng(46))
    with pytest.raises(ValueError):
        learn.train(dataset, cfg, "pinet", hyper, rng(47), i_o=2,
                    init_params=init)


def test_train_imcsi_smoke():
    cfg, dataset = tiny_setup(seed=48)
    hyper = learn.TrainHyper(epochs=1, batch_size=4, holdout=2, avg_samples=2)
    res = learn.train(dataset, cfg, "pinet-imcsi", hyper, rng(49), i_o=2)
    assert np.all((res.params.rhos > 0) & (res.params.rhos <= 1))
    assert np.all(np.isfinite(res.loss_trace))
