"""Python interface to the tabsynth native core."""

import json

from ._tabsynth import (
    InputError,
    NumericError,
    Schema,
    SynthModel,
    Table,
    all_metrics,
    load_csv,
    load_model,
    relative_error,
    sample,
    split,
    subsample,
    toy_dataset,
    write_csv,
)
from . import _tabsynth

__all__ = [
    "InputError",
    "NumericError",
    "Schema",
    "SynthModel",
    "Table",
    "all_metrics",
    "evaluate",
    "fit",
    "load_csv",
    "load_model",
    "relative_error",
    "report",
    "run_sweep",
    "sample",
    "split",
    "subsample",
    "toy_dataset",
    "write_csv",
]


def fit(table, variant="margctgan", epochs=300, seed=0, **config):
    """Train a synthesizer; extra keyword arguments are training config fields."""
    config.update(variant=variant, epochs=epochs, seed=seed)
    return _tabsynth.fit(table, json.dumps(config))


def evaluate(train, test, synth, metrics=(), seed=0):
    """Return the metric report as a dict."""
    return json.loads(_tabsynth.evaluate(train, test, synth, list(metrics), seed))


def run_sweep(spec):
    """Run or resume a sweep described by a dict mirroring the sweep config file."""
    return _tabsynth.run_sweep(json.dumps(spec))


def report(cells, fmt="csv", out=None):
    """Write summary files for a sweep directory and return their relative paths."""
    import os

    return _tabsynth.write_report(cells, fmt, out or os.path.join(cells, "report"))
