from fractions import Fraction

import numpy as np
import pytest
from gradcheck import REL_TOL, finite_difference_check

from mimtnet.baselines import (
    MlpConfig,
    MlpParams,
    mlknn_fit,
    mlknn_fit_arrays,
    mlknn_predict,
    mlp_init,
    mlp_logits,
    mlp_loss_and_grad,
    mlp_predict,
    mlp_train,
)
from mimtnet.dataio import SyntheticSpec, generate_synthetic
from mimtnet.errors import ParameterError, ShapeError
from mimtnet.modelio import dumps_model, load_model, save_model
from mimtnet.training import bce_loss


def mlknn_oracle(X, Y, queries, k, s=1):
    """ML-KNN in exact rational arithmetic with explicit neighbour scans."""
    s = Fraction(s)
    p, n = len(Y), len(Y[0])

    def nearest(x, exclude=None):
        cands = [(sum((Fraction(a) - Fraction(b)) ** 2 for a, b in zip(x, X[j])), j)
                 for j in range(p) if j != exclude]
        return [j for _, j in sorted(cands)[:k]]  # ties resolve to the lower index

    out_pos = [[0] * (k + 1) for _ in range(n)]
    out_neg = [[0] * (k + 1) for _ in range(n)]
    for i in range(p):
        nb = nearest(X[i], exclude=i)
        for t in range(n):
            c = sum(Y[j][t] for j in nb)
            (out_pos if Y[i][t] else out_neg)[t][c] += 1
    posts = []
    for q in queries:
        nb = nearest(q)
        row = []
        for t in range(n):
            prior = (s + sum(Y[i][t] for i in range(p))) / (2 * s + p)
            c = sum(Y[j][t] for j in nb)
            cp = (s + out_pos[t][c]) / (s * (k + 1) + sum(out_pos[t]))
            cn = (s + out_neg[t][c]) / (s * (k + 1) + sum(out_neg[t]))
            row.append(prior * cp / (prior * cp + (1 - prior) * cn))
        posts.append(row)
    return posts


def test_mlknn_hand_worked_k1():
    # points on a line at 0, 1, 3 labelled 1, 1, 0; every point's neighbour is
    # positive, so cond_pos = [1/4, 3/4], cond_neg = [1/3, 2/3], prior = 3/5
    model = mlknn_fit_arrays([[0.0], [1.0], [3.0]], [[1], [1], [0]], k=1)
    np.testing.assert_allclose(model.prior_pos, [0.6])
    np.testing.assert_allclose(model.cond_pos, [[0.25, 0.75]])
    np.testing.assert_allclose(model.cond_neg, [[1 / 3, 2 / 3]])
    post = mlknn_predict(model, [[0.4], [2.9]])
    np.testing.assert_allclose(post[:, 0], [27 / 43, 9 / 17], rtol=1e-15)


def test_mlknn_matches_rational_oracle():
    X = [[0, 1], [1, 1], [2, 0], [0, 0], [3, 2]]
    Y = [[1, 0], [1, 1], [0, 1], [0, 0], [1, 1]]
    queries = [[0, 0], [1, 2], [3, 1], [2, 2]]
    got = mlknn_predict(mlknn_fit_arrays(X, Y, k=2), queries)
    want = np.array(mlknn_oracle(X, Y, queries, k=2), dtype=float)
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_mlknn_random_binary_against_oracle():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 2, (14, 5)).tolist()
    Y = rng.integers(0, 2, (14, 3)).tolist()
    queries = rng.integers(0, 2, (6, 5)).tolist()
    got = mlknn_predict(mlknn_fit_arrays(X, Y, k=3, s=1), queries)
    np.testing.assert_allclose(got, np.array(mlknn_oracle(X, Y, queries, k=3), dtype=float),
                               rtol=1e-14)


def test_mlknn_all_positive_task_is_finite():
    X = np.eye(4)
    model = mlknn_fit_arrays(X, np.ones((4, 1)), k=2)
    post = mlknn_predict(model, X)
    assert np.isfinite(post).all() and (post > 0.5).all()


def test_mlknn_duplicate_rows():
    X = [[1, 0], [1, 0], [1, 0], [0, 1]]
    Y = [[1], [0], [1], [0]]
    got = mlknn_predict(mlknn_fit_arrays(X, Y, k=2), [[1, 0]])
    np.testing.assert_allclose(got, np.array(mlknn_oracle(X, Y, [[1, 0]], k=2), dtype=float),
                               rtol=1e-14)


def test_mlknn_training_order_does_not_matter_without_ties():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 6))
    Y = rng.integers(0, 2, (40, 3))
    Q = rng.normal(size=(10, 6))
    perm = rng.permutation(40)
    a = mlknn_predict(mlknn_fit_arrays(X, Y, k=5), Q)
    b = mlknn_predict(mlknn_fit_arrays(X[perm], Y[perm], k=5), Q)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_mlknn_errors():
    with pytest.raises(ParameterError):
        mlknn_fit_arrays(np.zeros((3, 2)), np.zeros((3, 1)), k=3)
    with pytest.raises(ParameterError):
        mlknn_fit_arrays(np.zeros((5, 2)), np.zeros((5, 1)), k=2, s=0)
    model = mlknn_fit_arrays(np.eye(3), np.eye(3), k=1)
    with pytest.raises(ShapeError):
        mlknn_predict(model, np.zeros((1, 2)))
    assert mlknn_predict(model, np.zeros((0, 3))).shape == (0, 3)


# ---------------------------------------------------------------- MLP


def test_mlp_zero_output_layer_gives_half():
    params = mlp_init(5, 3, MlpConfig(hidden=4))
    params = params.replace(w2=np.zeros((3, 4)), b2=np.zeros(3))
    probs = 1 / (1 + np.exp(-mlp_logits(params, np.ones((2, 5)))))
    assert np.all(probs == 0.5)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (7, 6)).astype(float)
    Y = rng.integers(0, 2, (7, 3)).astype(float)
    params = mlp_init(6, 3, MlpConfig(hidden=5, seed=1))
    params = params.replace(b1=rng.normal(0, 0.3, 5), b2=rng.normal(0, 0.3, 3))
    _, grads = mlp_loss_and_grad(params, X, Y)

    def regime(p):
        return ((X @ p.w1.T + p.b1) > 0).tobytes()

    worst, checked, _ = finite_difference_check(
        lambda p: bce_loss(mlp_logits(p, X), Y), params, grads, regime=regime)
    assert checked > 40
    assert worst < REL_TOL


@pytest.fixture(scope="module")
def planted():
    spec = SyntheticSpec(patients=300, features=40, tasks=4, keys_per_task=1,
                         background_rate=0.05, min_task_frequency=20, seed=17)
    return generate_synthetic(spec)[0]


def test_mlp_learns_planted_rule(planted):
    train_ds, test_ds = planted.subset(np.arange(240)), planted.subset(np.arange(240, 300))
    model = mlp_train(train_ds, MlpConfig(seed=4))
    _, hard = mlp_predict(model, test_ds.features)
    assert np.mean(hard != test_ds.labels) < 0.1
    assert model.loss_history[-1] < model.loss_history[0]


def test_mlp_is_deterministic(planted):
    cfg = MlpConfig(epochs=5, seed=9)
    assert dumps_model(mlp_train(planted, cfg)) == dumps_model(mlp_train(planted, cfg))


def test_baseline_models_round_trip(tmp_path, planted):
    for model in (mlknn_fit(planted, k=5), mlp_train(planted, MlpConfig(epochs=3))):
        save_model(model, tmp_path / "m.json")
        loaded = load_model(tmp_path / "m.json")
        assert dumps_model(loaded) == dumps_model(model)


def test_mlp_config_invariants():
    with pytest.raises(ParameterError):
        MlpConfig(hidden=0)
    with pytest.raises(ParameterError):
        MlpConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        MlpParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1)).replace(
            b2=np.array([np.inf]))
