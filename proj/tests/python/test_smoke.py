import json

import numpy as np
import pytest

import tabsynth

SMALL = dict(batch_size=50, latent_width=8, generator_widths=[16], critic_widths=[16])


@pytest.fixture(scope="module")
def data():
    table = tabsynth.toy_dataset(400, seed=1)
    return tabsynth.split(table, 0.3, seed=2)


def test_toy_and_split(data):
    train, test = data
    assert len(train) == 280 and len(test) == 120
    assert train.schema.names == list(test.schema.names)
    assert train.numerical.shape[0] == 280
    assert isinstance(train.column(0), np.ndarray)


def test_csv_round_trip(tmp_path, data):
    train, _ = data
    schema = tmp_path / "schema.json"
    schema.write_text(train.schema.to_json())
    path = tmp_path / "t.csv"
    tabsynth.write_csv(str(path), train)
    back = tabsynth.load_csv(str(path), str(schema))
    np.testing.assert_array_equal(back.numerical, train.numerical)
    np.testing.assert_array_equal(back.categorical, train.categorical)


def test_fit_sample_save(tmp_path, data):
    train, _ = data
    model = tabsynth.fit(train, "margctgan", epochs=2, seed=3, **SMALL)
    assert len(model.loss_trace) == 2
    assert model.loss_trace[0]["marg"] > 0
    assert json.loads(model.config)["variant"] == "margctgan"
    synth = tabsynth.sample(model, 300, seed=4)
    assert len(synth) == 300
    path = tmp_path / "m.tsyn"
    model.save(str(path))
    again = tabsynth.sample(tabsynth.load_model(str(path)), 300, seed=4)
    np.testing.assert_array_equal(synth.numerical, again.numerical)
    np.testing.assert_array_equal(synth.categorical, again.categorical)

    ctgan = tabsynth.fit(train, "ctgan", epochs=1, seed=3, **SMALL)
    assert all(e["marg"] == 0.0 for e in ctgan.loss_trace)


def test_evaluate(data):
    train, test = data
    report = tabsynth.evaluate(train, test, train, seed=1)
    assert set(report["scores"]) == set(tabsynth.all_metrics())
    only = tabsynth.evaluate(train, test, test, metrics=["histogram_intersection"])
    assert only["scores"] == {"histogram_intersection": pytest.approx(1.0)}
    assert tabsynth.relative_error(0.4, 0.8) == pytest.approx(50.0)


def test_errors(tmp_path):
    with pytest.raises(tabsynth.InputError):
        tabsynth.load_model(str(tmp_path / "missing.tsyn"))
    with pytest.raises(ValueError):
        tabsynth.fit(tabsynth.toy_dataset(100, 0), "nonsense", epochs=1)


def test_sweep_and_report(tmp_path):
    spec = {
        "dataset": {"name": "toy", "toy_rows": 300},
        "sizes": [40, "FULL"],
        "variants": ["margctgan"],
        "seeds": [0],
        "trials": 1,
        "synthetic_rows": 100,
        "train": dict(epochs=1, **SMALL),
        "eval": {"metrics": ["histogram_intersection"]},
        "output": str(tmp_path / "sweep"),
    }
    first = tabsynth.run_sweep(spec)
    assert first["failed"] == 0 and first["trained"] == 2
    second = tabsynth.run_sweep(spec)
    assert second["trained"] == 0 and second["evaluated"] == 0
    files = tabsynth.report(str(tmp_path / "sweep"), "csv")
    assert "metric_correlation.csv" in files
