"""Model file round-trips: bit-identical predictions after save/load,
refusal of unknown kinds and future versions.
"""

import json

import numpy as np
import pytest

from ossmm_kit.errors import (
    MissingInputError,
    UnsupportedModelError,
    ValidationError,
)
from ossmm_kit.ml import (
    ClassifierConfig,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    train,
)

ORDER4 = (0, 1, 2, 3)


def _blobs(rng, n_per=25, d=5):
    X = np.vstack([rng.standard_normal((n_per, d)) + 3.0 * c for c in range(4)])
    y = np.repeat(np.arange(4), n_per)
    return X, y


CONFIGS = [
    ClassifierConfig("random_forest", {"n_estimators": 6, "max_depth": 4}),
    ClassifierConfig("gradient_boosted_trees",
                     {"n_estimators": 6, "max_depth": 3, "learning_rate": 0.3}),
    ClassifierConfig("svm"),
]


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: c.kind)
class TestRoundTrip:
    def test_file_roundtrip_predictions_identical(self, cfg, tmp_path):
        rng = np.random.default_rng(1)
        X, y = _blobs(rng)
        Xq = rng.standard_normal((40, 5)) * 2.0 + 4.0
        model = train(cfg, X, y, seed=3)
        path = tmp_path / "model.json"
        save_model(model, path, meta={"note": "test"})
        again = load_model(path)
        np.testing.assert_array_equal(again.predict(Xq), model.predict(Xq))
        assert again.kind == cfg.kind
        assert again.class_order == ORDER4
        assert again.config == cfg.to_dict()

    def test_double_save_is_byte_identical(self, cfg, tmp_path):
        rng = np.random.default_rng(2)
        X, y = _blobs(rng)
        model = train(cfg, X, y, seed=5)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestRefusals:
    def _valid_dict(self):
        rng = np.random.default_rng(3)
        X, y = _blobs(rng)
        return model_to_dict(train(CONFIGS[0], X, y, seed=1))

    def test_future_version_refused(self):
        d = self._valid_dict()
        d["format_version"] = 99
        with pytest.raises(UnsupportedModelError):
            model_from_dict(d)

    def test_unknown_kind_refused(self):
        d = self._valid_dict()
        d["kind"] = "perceptron9000"
        with pytest.raises((UnsupportedModelError, ValidationError)):
            model_from_dict(d)

    def test_missing_keys_refused(self):
        d = self._valid_dict()
        del d["payload"]
        with pytest.raises(ValidationError):
            model_from_dict(d)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_model(tmp_path / "ghost.json")

    def test_garbage_json(self, tmp_path):
        p = tmp_path / "junk.json"
        p.write_text("{not json")
        with pytest.raises(ValidationError):
            load_model(p)

    def test_version_field_present(self, tmp_path):
        rng = np.random.default_rng(4)
        X, y = _blobs(rng)
        p = tmp_path / "m.json"
        save_model(train(CONFIGS[0], X, y, seed=1), p)
        d = json.loads(p.read_text())
        assert d["format_version"] == 1
        assert "tool_version" in d
