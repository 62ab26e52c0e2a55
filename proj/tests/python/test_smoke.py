import json
import math

import numpy as np
import pytest

import splitvfu

TINY = {
    "schema_version": 1,
    "seed": 3,
    "dataset": {"source": "synth", "synth": {"n_train": 90, "n_test": 60, "height": 6, "width": 9, "num_classes": 3}},
    "trigger": {"height": 2, "width": 2, "poison_rate": 0.2},
    "model": {"encoder_hidden": [6], "hidden_dim": 4, "top_hidden": [8]},
    "pretrain": {"epochs": 4, "batch_size": 16, "learning_rate": 0.1},
    "unlearn": {"alpha": 1.0, "learning_rate": 0.1, "epochs": 2, "batch_size": 16},
}


def test_config_roundtrip_and_hash():
    exp = splitvfu.parse_config(json.dumps(TINY))
    again = splitvfu.parse_config(exp.to_json())
    assert again.hash == exp.hash
    assert len(exp.hash) == 16
    exp.set_unlearn(alpha=0.5)
    assert exp.hash != again.hash


def test_unknown_key_is_config_error():
    bad = dict(TINY, sed=1)
    with pytest.raises(splitvfu.ConfigError, match="sed"):
        splitvfu.parse_config(json.dumps(bad))
    assert issubclass(splitvfu.ConfigError, ValueError)
    assert issubclass(splitvfu.NumericError, ArithmeticError)


def test_run_reports_all_models():
    exp = splitvfu.parse_config(json.dumps(TINY))
    a = exp.run()
    b = exp.run()
    assert set(a["models"]) == {"original_bkd", "original_clean", "unlearned", "gold"}
    assert a["models"]["gold"]["kl_to_gold"] == 0.0
    assert a["models"]["unlearned"]["clean_acc"] == b["models"]["unlearned"]["clean_acc"]
    assert {"pretrain", "unlearn", "retrain"} <= set(a["timings"])
    assert a["trace"]
    assert a["anchor_distance_after"] < a["anchor_distance_before"]


def test_unit_sphere_and_projection():
    u = splitvfu.sample_unit_sphere(32, 7)
    assert u.shape == (32,)
    assert math.isclose(np.linalg.norm(u), 1.0, rel_tol=1e-12)
    assert np.array_equal(u, splitvfu.sample_unit_sphere(32, 7))

    g_f = np.array([1.0, 0.0, 0.0])
    g_r = np.array([-2.0, 1.0, 0.5])
    proj, applied = splitvfu.project_retention(g_r, g_f)
    assert applied
    assert abs(proj @ g_f) < 1e-12
    np.testing.assert_allclose(proj, [0.0, 1.0, 0.5])

    same, applied = splitvfu.project_retention(np.array([1.0, 2.0, 0.0]), g_f)
    assert not applied
    np.testing.assert_array_equal(same, [1.0, 2.0, 0.0])
    assert splitvfu.cosine(g_f, np.zeros(3)) == 0.0


def test_coordinated_update_modes():
    g_f = np.array([1.0, 0.0])
    g_r = np.array([-1.0, 1.0])
    d, _ = splitvfu.coordinated_update(g_f, g_r, alpha=0.5, mode="coordinated")
    np.testing.assert_allclose(d, [1.0, 0.5])
    d, _ = splitvfu.coordinated_update(g_f, g_r, alpha=0.5, mode="no_gcm")
    np.testing.assert_allclose(d, [0.5, 0.5])
    d, _ = splitvfu.coordinated_update(g_f, g_r, alpha=0.5, mode="rand_proj", seed=4)
    assert math.isclose(np.linalg.norm(d - g_f), 0.5, rel_tol=1e-12)


def test_kl_and_auc():
    p = np.array([[0.5, 0.5], [0.9, 0.1]])
    assert splitvfu.kl_predictive(p, p) == pytest.approx(0.0, abs=1e-15)
    q = np.array([[0.25, 0.75], [0.9, 0.1]])
    expected = (0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)) / 2
    assert splitvfu.kl_predictive(p, q) == pytest.approx(expected, rel=1e-12)
    assert splitvfu.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_bad_dimension_raises_value_error():
    with pytest.raises(ValueError):
        splitvfu.project_retention(np.ones(3), np.ones(2))
