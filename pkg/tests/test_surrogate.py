import numpy as np
import pytest

from vlshift.model import DomainError, ModelParams
from vlshift import surrogate as S
from vlshift import timeshift as T


def _synthetic_training_set(n=400, seed=0, cube=None):
    """Smooth synthetic labels; exercises training mechanics cheaply."""
    rng = np.random.default_rng(seed)
    cube = cube or S.Hypercube((2.5, 0.6, 1.0), (25.0, 2.4, 9.0))
    x = cube.sample(n, rng)
    y = np.column_stack([
        0.2 + 0.08 * np.log(x[:, 0]),
        0.5 + 0.10 * x[:, 1],
        0.6 + 0.02 * x[:, 2],
    ])
    return S.training_set_from_rows(x, y, cube)


def test_standardization_round_trip():
    ts = _synthetic_training_set()
    xs = ts.standardized_inputs()
    assert np.allclose(xs.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(xs.var(axis=0), 1.0, atol=1e-9)
    back = xs * ts.in_std + ts.in_mean
    assert np.allclose(back, ts.inputs, rtol=1e-12)


def test_subcritical_point_filtered_cheaply():
    rng = np.random.default_rng(1)
    out = S.label_candidate((0.9, 1.7, 3.0), rng, 10_000)
    assert out is None


def test_fig1_point_passes_filter():
    rng = np.random.default_rng(2)
    out = S.label_candidate((8.0, 1.7, 3.0), rng, 10_000)
    assert out is not None
    fit, summary = out
    assert fit.a > 0 and fit.d > 0 and fit.p > 0
    assert summary.lam > 0


def test_generate_training_data_plumbing(monkeypatch):
    calls = {"n": 0}

    def fake_label(theta, rng, sims, survivor_target=None, k=4.0, c=10.0):
        calls["n"] += 1
        if theta[0] < 5.0:  # pretend the filter rejects part of the cube
            return None
        fit = T.GGFit(a=0.3, d=0.6, p=0.8, ks_distance=0.01,
                      n_sims=sims, n_survivors=sims // 2, horizon=2.0)
        from vlshift.branching import bp_summary
        return fit, bp_summary(ModelParams(R0=theta[0], delta=theta[1], rho=theta[2]))

    monkeypatch.setattr(S, "label_candidate", fake_label)
    cube = S.Hypercube((2.5, 0.6, 1.0), (25.0, 2.4, 9.0))
    ts = S.generate_training_data(cube, 1000, 10_000, np.random.default_rng(3))
    assert ts.n == 1000
    assert calls["n"] == ts.n_attempted
    assert ts.n_attempted > 1000  # sub-5 points were rejected
    assert np.all(ts.inputs[:, 0] >= 5.0)


def test_generate_training_data_bad_bounds_error(monkeypatch):
    def never(theta, rng, sims, survivor_target=None, k=4.0, c=10.0):
        return None

    monkeypatch.setattr(S, "label_candidate", never)
    cube = S.Hypercube((2.5, 0.6, 1.0), (25.0, 2.4, 9.0))
    with pytest.raises(DomainError, match="acceptance rate"):
        S.generate_training_data(cube, 1000, 10_000, np.random.default_rng(4))


def test_overfit_smoke_capacity():
    ts = _synthetic_training_set(n=50, seed=5)
    m = S.train(ts, np.random.default_rng(0), val_fraction=0.0,
                patience=50_000, learning_rate=3e-3, max_epochs=30_000)
    pred = m.forward(ts.inputs)
    mse = float(np.mean(((pred - ts.targets) / ts.out_std) ** 2))
    assert mse < 1e-4


def test_early_stopping_exact_epoch_count():
    ts = _synthetic_training_set(n=100, seed=6)
    m = S.train(ts, np.random.default_rng(0), val_fraction=0.2, patience=1,
                learning_rate=0.0, max_epochs=100)
    assert m.epochs_run == 2


def test_training_reproducible_given_seed():
    ts = _synthetic_training_set(n=200, seed=7)
    m1 = S.train(ts, np.random.default_rng(9), max_epochs=40)
    m2 = S.train(ts, np.random.default_rng(9), max_epochs=40)
    assert np.array_equal(m1.w1, m2.w1)
    assert np.array_equal(m1.b2, m2.b2)


@pytest.fixture(scope="module")
def small_model():
    ts = _synthetic_training_set(n=600, seed=8)
    return S.train(ts, np.random.default_rng(1), max_epochs=250)


def test_predictions_positive_everywhere(small_model):
    rng = np.random.default_rng(10)
    pts = small_model.bounds.sample(500, rng)
    pred = small_model.forward(pts)
    assert np.all(pred > 0)


def test_predict_bit_identical(small_model):
    p = ModelParams(R0=8.0, delta=1.7, rho=3.0)
    assert S.predict(small_model, p) == S.predict(small_model, p)


def test_predict_out_of_cube_errors(small_model):
    with pytest.raises(S.ExtrapolationError):
        S.predict(small_model, ModelParams(R0=40.0, delta=1.7, rho=3.0))


def test_predict_fixed_parameter_mismatch(small_model):
    with pytest.raises(DomainError):
        S.predict(small_model, ModelParams(R0=8.0, k=5.0, delta=1.7, rho=3.0))


def test_save_load_round_trip(small_model, tmp_path):
    path = tmp_path / "model.json"
    S.save_model(small_model, path, provenance={"seed": 1})
    back = S.load_model(path)
    p = ModelParams(R0=12.0, delta=1.2, rho=4.0)
    assert S.predict(back, p) == S.predict(small_model, p)
    assert back.bounds == small_model.bounds
    assert back.k == small_model.k


def test_load_rejects_unknown_schema(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"schema_version": 99}')
    with pytest.raises(DomainError):
        S.load_model(path)


def test_prediction_agrees_with_label_on_training_point(small_model):
    # at a training point the prediction sits within the validation band
    ts = _synthetic_training_set(n=600, seed=8)
    pred = small_model.forward(ts.inputs[:50])
    rel = np.abs(pred - ts.targets[:50]) / ts.targets[:50]
    assert np.median(rel) < 0.05


def test_train_divergence_raises():
    ts = _synthetic_training_set(n=100, seed=11)
    with pytest.raises(S.TrainingError):
        S.train(ts, np.random.default_rng(0), learning_rate=1e12, max_epochs=20)
