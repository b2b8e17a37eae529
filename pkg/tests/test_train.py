import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrf.cart import MaxDepth, predict_tree
from nrf.data import split_dataset, synth_sine
from nrf.forest import ForestParams, fit_forest, predict_forest
from nrf.netcompile import compile_tree, concat_networks, forward_tanh
from nrf.train import (AdamState, History, Method, Mode, TrainConfig, adam_step,
                       fit_nrf, fit_nrf_method1, fit_nrf_method2, gradients, load_nrf,
                       predict_arrays, predict_nrf, rmse, save_nrf, train_network)

from conftest import random_tree
from fd_oracle import compare, numeric_gradient


def perturbed(net, rng, scale=0.1):
    arrs = [a + scale * rng.normal(size=np.shape(a)) * (1 if m is None else m)
            for a, m in zip(net.arrays(), net.masks())]
    return net.with_arrays(arrs)


# --- Adam -------------------------------------------------------------------

def test_adam_first_step_hand_value():
    state, theta = adam_step(AdamState.zeros_like([0.0]), [0.0], [1.0])
    assert state.t == 1
    assert theta[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-14)
    assert f"{theta[0]:.12f}" == "-0.000999999990"


def test_adam_zero_gradient_keeps_parameters():
    state, theta = adam_step(AdamState.zeros_like(np.ones(3)), np.ones(3), np.zeros(3))
    assert np.array_equal(theta, np.ones(3))


def test_adam_matches_textbook_recurrences(rng):
    cfg = TrainConfig(learning_rate=0.01)
    theta = rng.normal(size=5)
    state = AdamState.zeros_like(theta)
    ref, m, v = theta.copy(), np.zeros(5), np.zeros(5)
    for t in range(1, 30):
        g = rng.normal(size=5)
        state, theta = adam_step(state, theta, g, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(theta, ref, rtol=1e-12, atol=1e-15)


def test_adam_is_pure_and_deterministic(rng):
    theta, g = rng.normal(size=4), rng.normal(size=4)
    s0 = AdamState.zeros_like(theta)
    a = adam_step(s0, theta, g)
    b = adam_step(s0, theta, g)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].m, b[0].m)
    assert np.array_equal(s0.m, np.zeros(4)) and s0.t == 0
    with pytest.raises(ValueError):
        adam_step(s0, np.zeros(3), np.zeros(3))


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(learning_rate=0.0), dict(beta1=1.0),
                dict(beta2=0.0), dict(eps=0.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig(mode="full").mode is Mode.FULL


# --- gradients --------------------------------------------------------------

@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from(["sparse", "full"]))
def test_gradients_match_finite_differences(seed, big, mode):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    nets = [compile_tree(random_tree(rng, d=d, depth=int(rng.integers(1, 4)))[0]) for _ in range(3)]
    net = perturbed(concat_networks(nets) if big else nets[0], rng)
    X, y = rng.uniform(size=(5, d)), rng.normal(size=5)
    g = gradients(net, X, y, mode)
    n = numeric_gradient(net.arrays(), net.gammas, X, y)
    if mode == "sparse":
        n = [ni if m is None else ni * m for ni, m in zip(n, net.masks())]
    assert compare(g, n) <= 1.0


@given(st.integers(0, 2**32 - 1))
def test_sparse_gradient_is_zero_off_mask(seed):
    rng = np.random.default_rng(seed)
    nets = [compile_tree(random_tree(rng, d=2)[0]) for _ in range(2)]
    net = perturbed(concat_networks(nets), rng)
    X, y = rng.uniform(size=(7, 2)), rng.normal(size=7)
    g = gradients(net, X, y, Mode.SPARSE)
    full = gradients(net, X, y, Mode.FULL)
    for gi, fi, m in zip(g, full, net.masks()):
        if m is not None:
            assert np.all(gi[~m] == 0.0)
            assert np.allclose(gi[m], fi[m], rtol=1e-12, atol=1e-15)
        else:
            assert np.allclose(gi, fi, rtol=1e-12, atol=1e-15)


def test_zero_residual_gives_zero_gradient(rng):
    net = perturbed(compile_tree(random_tree(rng, d=2)[0]), rng)
    X = rng.uniform(size=(6, 2))
    y = forward_tanh(net, X)
    # sparse mode multiplies in a different order, so allow roundoff
    for mode in Mode:
        assert all(np.abs(g).max(initial=0) <= 1e-12 for g in gradients(net, X, y, mode))
    assert all(not np.any(g) for g in gradients(net, X, y, Mode.FULL))


def test_sparse_mode_rejects_nonzero_dead_weights(rng):
    net = compile_tree(random_tree(rng, d=2, depth=3)[0])
    W1 = net.W1.copy()
    W1[~net.mask1] = 1.0
    bad = net.with_arrays([W1, net.b1, net.W2, net.b2, net.W_out, net.b_out])
    with pytest.raises(ValueError):
        gradients(bad, np.zeros((1, 2)), np.zeros(1), Mode.SPARSE)
    gradients(bad, np.zeros((1, 2)), np.zeros(1), Mode.FULL)


# --- training loop ----------------------------------------------------------

@pytest.fixture(scope="module")
def problem():
    ds = synth_sine(240, 2, 0.05, 3)
    split = split_dataset(ds, 0)
    forest = fit_forest(ds, split.train, ForestParams(4, stop=MaxDepth(3), seed=0))
    return ds, split, forest


def _sets(ds, split):
    return ((ds.features[split.train], ds.target[split.train]),
            (ds.features[split.val], ds.target[split.val]))


def test_history_and_selection(problem):
    ds, split, forest = problem
    train, val = _sets(ds, split)
    net = compile_tree(forest.trees[0])
    res = train_network(net, train, val, TrainConfig(epochs=6, learning_rate=0.01))
    h = res.history
    assert len(h.train_rmse) == len(h.val_rmse) == 7
    assert res.best_val_rmse == min(h.val_rmse)
    assert res.best_epoch == h.val_rmse.index(min(h.val_rmse))
    replay = rmse(predict_arrays(res.params.arrays(), res.params.gammas, val[0]), val[1])
    assert replay == pytest.approx(res.best_val_rmse, rel=1e-12)
    assert h.val_rmse[0] == pytest.approx(rmse(forward_tanh(net, val[0]), val[1]), rel=1e-12)


def test_constant_target_training_reduces_error(rng):
    X = rng.uniform(size=(64, 2))
    y = np.full(64, 2.5)
    tree = random_tree(rng, d=2, depth=2)[0]
    net = compile_tree(tree)
    res = train_network(net, (X, y), (X, y), TrainConfig(epochs=30, learning_rate=0.01))
    assert res.history.train_rmse[-1] <= res.history.train_rmse[0]


def test_training_is_bitwise_deterministic(problem):
    ds, split, forest = problem
    train, val = _sets(ds, split)
    big = concat_networks(compile_tree(t) for t in forest.trees)
    cfg = TrainConfig(epochs=3, batch_size=7, mode="full", seed=4)
    a = train_network(big, train, val, cfg)
    b = train_network(big, train, val, cfg)
    assert a.history == b.history
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))
    c = train_network(big, train, val, TrainConfig(epochs=3, batch_size=7, mode="full", seed=5))
    assert c.history != a.history


def test_sparse_training_preserves_structure(problem):
    ds, split, forest = problem
    train, val = _sets(ds, split)
    big = concat_networks(compile_tree(t) for t in forest.trees)
    res = train_network(big, train, val, TrainConfig(epochs=3, learning_rate=0.01, mode="sparse"))
    p = res.params
    assert res.best_epoch > 0
    assert np.all(p.W1[~big.mask1] == 0) and np.all(p.W2[~big.mask2] == 0)
    assert not np.array_equal(p.W2[big.mask2], big.W2[big.mask2])


def test_full_training_learns_cross_tree_weights(problem):
    ds, split, forest = problem
    train, val = _sets(ds, split)
    big = concat_networks(compile_tree(t) for t in forest.trees)
    res = train_network(big, train, val, TrainConfig(epochs=3, learning_rate=0.01, mode="full"))
    assert res.best_epoch > 0
    assert np.any(res.params.W2[~big.mask2] != 0)


def test_last_partial_batch_is_used(rng):
    # 5 rows with batch size 4: two updates per epoch, so Adam's step count is 2 * epochs
    X, y = rng.uniform(size=(5, 1)), rng.normal(size=5)
    net = compile_tree(random_tree(rng, d=1, depth=2)[0])
    a = train_network(net, (X, y), (X, y), TrainConfig(epochs=1, batch_size=4, learning_rate=0.1))
    b = train_network(net, (X[:4], y[:4]), (X, y), TrainConfig(epochs=1, batch_size=4, learning_rate=0.1))
    assert a.history.train_rmse[1] != b.history.train_rmse[1]


def test_history_csv_round_trip(tmp_path):
    h = History([1.0, 0.5, 1 / 3], [2.0, 0.25, 0.1])
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,train_rmse,val_rmse"
    assert History.from_csv(tmp_path / "h.csv") == h


# --- neural forests ---------------------------------------------------------

TINY = 1e-300  # positive learning rate that cannot move any parameter


def test_method1_without_training_reproduces_forest_when_sharp(problem):
    ds, split, forest = problem
    cfg = TrainConfig(epochs=1, learning_rate=TINY)
    model = fit_nrf_method1(forest, ds, split, 1e4, 1e4, cfg)
    Q = np.random.default_rng(0).uniform(size=(300, 2))
    far = np.ones(len(Q), dtype=bool)
    for t in forest.trees:
        i = t.internal
        far &= np.all(np.abs(Q[:, t.feature[i]] - t.threshold[i]) >= 1e-2, axis=1)
    pred = predict_nrf(model, Q[far])
    assert np.abs(pred - predict_forest(forest, Q[far])).max() <= 1e-3


def test_method1_single_tree_equals_train_network(problem):
    ds, split, forest = problem
    one = fit_forest(ds, split.train, ForestParams(1, stop=MaxDepth(3), seed=1))
    cfg = TrainConfig(epochs=3, learning_rate=0.01)
    model = fit_nrf_method1(one, ds, split, config=cfg)
    train, val = _sets(ds, split)
    res = train_network(compile_tree(one.trees[0]), train, val, cfg, stream=(0,))
    Q = ds.features[split.test]
    if model.fallback_to_rf or model.member_fallback[0]:
        assert np.array_equal(predict_nrf(model, Q), predict_forest(one, Q))
    else:
        assert np.array_equal(predict_nrf(model, Q),
                              predict_arrays(res.params.arrays(), res.params.gammas, Q))


def test_method1_prediction_is_member_mean(problem):
    ds, split, forest = problem
    model = fit_nrf_method1(forest, ds, split, config=TrainConfig(epochs=2, learning_rate=0.01))
    model.fallback_to_rf = False
    Q = ds.features[:20]
    parts = [predict_tree(forest.trees[m], Q) if fb else predict_arrays(n.arrays(), n.gammas, Q)
             for m, (n, fb) in enumerate(zip(model.members, model.member_fallback))]
    assert np.allclose(predict_nrf(model, Q), np.mean(parts, axis=0), rtol=0, atol=1e-14)
    model.member_fallback = [True] * forest.n_trees
    assert np.array_equal(predict_nrf(model, Q), predict_forest(forest, Q))


def test_method2_initial_network_is_member_average(problem):
    ds, split, forest = problem
    train, val = _sets(ds, split)
    nets = [compile_tree(t) for t in forest.trees]
    res = train_network(concat_networks(nets), train, val, TrainConfig(epochs=1, learning_rate=TINY))
    Q = np.random.default_rng(1).uniform(size=(200, 2))
    mean = sum(forward_tanh(n, Q) for n in nets) / len(nets)
    assert np.abs(forward_tanh(res.params, Q) - mean).max() <= 1e-12


@settings(max_examples=6)
@given(st.integers(0, 1000), st.sampled_from(list(Method)), st.sampled_from(list(Mode)))
def test_reported_validation_never_worse_than_forest(seed, method, mode):
    ds = synth_sine(80, 2, 0.5, seed)
    split = split_dataset(ds, seed)
    forest = fit_forest(ds, split.train, ForestParams(3, stop=MaxDepth(3), seed=seed))
    model = fit_nrf(forest, ds, split, method, config=TrainConfig(epochs=2, mode=mode, seed=seed))
    rf_val = rmse(predict_forest(forest, ds.features[split.val]), ds.target[split.val])
    assert model.rf_val_rmse == rf_val
    assert model.val_rmse <= rf_val
    if model.fallback_to_rf:
        Q = ds.features[split.test]
        assert np.array_equal(predict_nrf(model, Q), predict_forest(forest, Q))


def test_method2_fallback_when_never_better(problem):
    ds, split, forest = problem
    # gamma2 tiny flattens the second layer, so the network cannot beat the forest
    model = fit_nrf_method2(forest, ds, split, 100.0, 1e-6, TrainConfig(epochs=1, learning_rate=TINY))
    assert model.fallback_to_rf and model.val_rmse == model.rf_val_rmse


@pytest.mark.parametrize("method", ["1", "2"])
def test_model_save_load_round_trip(tmp_path, problem, method):
    ds, split, forest = problem
    model = fit_nrf(forest, ds, split, method,
                    config=TrainConfig(epochs=2, learning_rate=0.01, mode="full"))
    save_nrf(model, tmp_path / "m")
    back = load_nrf(tmp_path / "m")
    Q = ds.features
    assert np.array_equal(predict_nrf(back, Q), predict_nrf(model, Q))
    assert back.history == model.history and back.config == model.config
    assert (back.val_rmse, back.rf_val_rmse, back.fallback_to_rf) == \
        (model.val_rmse, model.rf_val_rmse, model.fallback_to_rf)
    assert list(back.member_fallback) == list(model.member_fallback)
