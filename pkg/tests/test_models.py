import numpy as np
import numpy.testing as npt
import pytest

from drugfusion.models import (
    BaselineModel,
    ConfigError,
    DrugsOnlyModel,
    MultimodalModel,
    build_model,
    predict,
)
from drugfusion.nn import GruLayer, NnError, grad_check, weighted_bce


def tiny_multimodal(seed=1):
    return MultimodalModel(
        n_features=5, hidden=4, n_drugs=3, drug_width=8,
        conv_filters=(2, 3), kernel_size=2, fc_sizes=(6, 4),
        dropout=0.3, rng=np.random.default_rng(seed),
    )


def test_baseline_parameter_count_formula():
    model = BaselineModel(104, 128, np.random.default_rng(0))
    gru = 3 * (104 * 128 + 128 * 128 + 128)
    readout = 128 + 1
    assert model.param_count() == gru + readout == 89601


def test_baseline_forward_is_probability():
    model = BaselineModel(6, 4, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(7, 24, 6))
    p = model.forward(x)
    assert p.shape == (7,)
    assert np.all((p > 0) & (p < 1))


def test_both_recurrent_models_use_the_same_gru_implementation():
    baseline = BaselineModel(5, 4, np.random.default_rng(3))
    multimodal = tiny_multimodal()
    assert isinstance(baseline.gru, GruLayer)
    assert type(baseline.gru) is type(multimodal.gru)


def test_baseline_full_gradcheck():
    rng = np.random.default_rng(4)
    model = BaselineModel(3, 4, np.random.default_rng(5))
    x = rng.normal(size=(6, 7, 3))
    y = rng.integers(0, 2, size=6).astype(np.float64)

    def loss():
        p = model.forward(x)
        value, _ = weighted_bce(p, y, w_pos=2.0, w_neg=0.5)
        return value

    model.zero_grads()
    p = model.forward(x)
    _, grad_p = weighted_bce(p, y, w_pos=2.0, w_neg=0.5)
    model.backward(grad_p)
    analytic = {k: v.copy() for k, v in model.grads().items()}

    result = grad_check(loss, model.params(), analytic, h=1e-6, tol=1e-5)
    assert result.passed, result.per_param


def test_multimodal_forward_and_both_branches_get_gradients():
    model = tiny_multimodal()
    rng = np.random.default_rng(6)
    x_ts = rng.normal(size=(4, 10, 5))
    x_drug = rng.normal(size=(4, 3, 8))

    p = model.forward(x_ts, x_drug)
    assert p.shape == (4,)
    assert np.all((p > 0) & (p < 1))

    y = np.array([1.0, 0.0, 1.0, 0.0])
    model.zero_grads()
    p = model.forward(x_ts, x_drug)
    _, grad_p = weighted_bce(p, y)
    model.backward(grad_p)
    grads = model.grads()
    assert np.any(grads["gru.Wh"] != 0.0)
    assert np.any(grads["conv1.W"] != 0.0)
    assert np.any(grads["fc1.W"] != 0.0)


def test_multimodal_requires_drug_tensor():
    model = tiny_multimodal()
    x_ts = np.zeros((2, 6, 5))
    with pytest.raises(NnError):
        model.forward(x_ts, None)


def test_drugs_only_model_ignores_timeseries():
    model = DrugsOnlyModel(n_drugs=3, drug_width=8, conv_filters=(2,),
                           kernel_size=2, fc_sizes=(4,),
                           rng=np.random.default_rng(7))
    x_drug = np.random.default_rng(8).normal(size=(3, 3, 8))
    a = model.forward(None, x_drug)
    b = model.forward(np.zeros((3, 9, 2)), x_drug)
    npt.assert_array_equal(a, b)
    with pytest.raises(NnError):
        model.forward(None, None)


def test_l2_applies_to_dense_kernels_only():
    baseline = BaselineModel(5, 4, np.random.default_rng(9))
    assert len(baseline.l2_matrices()) == 1
    assert baseline.l2_matrices()[0] is baseline.readout.W

    multimodal = tiny_multimodal()
    mats = multimodal.l2_matrices()
    assert len(mats) == len(multimodal.fcs) + 1
    for m in mats:
        assert m.ndim == 2  # never biases
    param_ids = {name: id(v) for name, v in multimodal.params().items()}
    mat_ids = {id(m) for m in mats}
    assert id(multimodal.params()["gru.Wh"]) not in mat_ids
    assert id(multimodal.params()["conv1.W"]) not in mat_ids
    assert param_ids["readout.W"] in mat_ids


def test_dropout_only_active_in_training_mode():
    model = tiny_multimodal()
    rng = np.random.default_rng(10)
    x_ts = rng.normal(size=(3, 8, 5))
    x_drug = rng.normal(size=(3, 3, 8))

    eval_a = model.forward(x_ts, x_drug, train=False)
    eval_b = model.forward(x_ts, x_drug, train=False)
    npt.assert_array_equal(eval_a, eval_b)

    train_a = model.forward(x_ts, x_drug, train=True,
                            dropout_rng=np.random.default_rng(11))
    train_b = model.forward(x_ts, x_drug, train=True,
                            dropout_rng=np.random.default_rng(12))
    assert not np.array_equal(train_a, train_b)


def test_architecture_round_trip_and_load_params():
    model = tiny_multimodal(seed=13)
    rebuilt = build_model(model.architecture(), np.random.default_rng(99))
    assert rebuilt.architecture() == model.architecture()
    assert {k: v.shape for k, v in rebuilt.params().items()} == \
           {k: v.shape for k, v in model.params().items()}

    rebuilt.load_params(model.params())
    rng = np.random.default_rng(14)
    x_ts = rng.normal(size=(2, 7, 5))
    x_drug = rng.normal(size=(2, 3, 8))
    npt.assert_array_equal(rebuilt.forward(x_ts, x_drug),
                           model.forward(x_ts, x_drug))


def test_build_model_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        build_model({"mode": "transformer"}, np.random.default_rng(0))


def test_load_params_rejects_wrong_shapes():
    model = BaselineModel(3, 2, np.random.default_rng(15))
    params = model.params()
    params["readout.W"] = np.zeros((5, 1))
    with pytest.raises(ConfigError):
        model.load_params(params)


def test_seeded_init_is_reproducible():
    a = tiny_multimodal(seed=42)
    b = tiny_multimodal(seed=42)
    for name, value in a.params().items():
        npt.assert_array_equal(value, b.params()[name])


def test_predict_matches_eval_forward_across_batches():
    model = tiny_multimodal(seed=16)
    rng = np.random.default_rng(17)
    x_ts = rng.normal(size=(11, 9, 5))
    x_drug = rng.normal(size=(11, 3, 8))
    whole = model.forward(x_ts, x_drug, train=False)
    batched = predict(model, x_ts, x_drug, batch_size=4)
    npt.assert_allclose(batched, whole, atol=1e-12)


def test_zero_grads_clears_accumulators():
    model = BaselineModel(3, 2, np.random.default_rng(18))
    rng = np.random.default_rng(19)
    x = rng.normal(size=(2, 4, 3))
    p = model.forward(x)
    _, grad_p = weighted_bce(p, np.array([1.0, 0.0]))
    model.backward(grad_p)
    assert any(np.any(g != 0) for g in model.grads().values())
    model.zero_grads()
    assert all(np.all(g == 0) for g in model.grads().values())
