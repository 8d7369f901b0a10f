"""Shared fixtures: toy datasets, trained models, packed bundles, servers.

The "small" family trains a fast low-epoch model for module tests; the
"default" family (seed 42, full config) backs the acceptance criteria and
is built once per session.
"""

from __future__ import annotations

import time

import pytest

from edgefleet.bundle import pack
from edgefleet.httpd import ServerThread
from edgefleet.quantize import calibrate, quantize_model_dynamic, quantize_model_static
from edgefleet.registry import Registry, RegistryConfig
from edgefleet.toydata import (
    DEFAULT_CONDITION_MAP,
    ToyDatasetSpec,
    TrainConfig,
    calibration_samples,
    generate_dataset,
    train_model,
)

SMALL_SPEC = ToyDatasetSpec(seed=11, train_per_class=60, test_per_class=20)
SMALL_TRAIN = TrainConfig(epochs=60)


@pytest.fixture(scope="session")
def small_ds():
    return generate_dataset(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_model(small_ds):
    return train_model(small_ds, SMALL_TRAIN)


@pytest.fixture(scope="session")
def small_stats(small_model, small_ds):
    return calibrate(small_model, calibration_samples(small_ds))


@pytest.fixture(scope="session")
def small_static(small_model, small_stats):
    return quantize_model_static(small_model, small_stats)


@pytest.fixture(scope="session")
def small_dynamic(small_model):
    return quantize_model_dynamic(small_model)


@pytest.fixture(scope="session")
def small_bundles(small_model, small_static, small_dynamic):
    """fp32/static/dynamic bundles of the small toy model, versions 1.0.x."""
    created = "2000-01-01T00:00:00Z"
    return {
        "fp32": pack(small_model, name="toy-classifier", version="1.0.0",
                     condition_map=DEFAULT_CONDITION_MAP, created_at=created),
        "int8-static": pack(small_static, name="toy-classifier", version="1.0.1",
                            condition_map=DEFAULT_CONDITION_MAP, created_at=created),
        "int8-dynamic": pack(small_dynamic, name="toy-classifier", version="1.0.2",
                             condition_map=DEFAULT_CONDITION_MAP, created_at=created),
    }


@pytest.fixture(scope="session")
def default_pack():
    """Seed-42 default-spec dataset and model with its quantized forms.

    This is the configuration the acceptance criteria pin (300-sample test
    set, >=100k parameters). Built once; training takes a few seconds and
    the build duration is recorded so the accuracy criterion can count it
    against its runtime budget.
    """
    started = time.perf_counter()
    ds = generate_dataset(ToyDatasetSpec())
    model = train_model(ds, TrainConfig())
    stats = calibrate(model, calibration_samples(ds))
    static = quantize_model_static(model, stats)
    dynamic = quantize_model_dynamic(model)
    created = "2000-01-01T00:00:00Z"
    bundles = {
        "fp32": pack(model, name="toy-classifier", version="1.0.0",
                     condition_map=DEFAULT_CONDITION_MAP, created_at=created),
        "int8-static": pack(static, name="toy-classifier", version="1.1.0",
                            condition_map=DEFAULT_CONDITION_MAP, created_at=created),
        "int8-dynamic": pack(dynamic, name="toy-classifier", version="1.2.0",
                             condition_map=DEFAULT_CONDITION_MAP, created_at=created),
    }
    return {"ds": ds, "model": model, "static": static, "dynamic": dynamic,
            "bundles": bundles, "build_seconds": time.perf_counter() - started}


@pytest.fixture
def registry(tmp_path):
    return Registry(RegistryConfig(data_dir=tmp_path / "registry"))


@pytest.fixture
def server(registry):
    with ServerThread(registry) as srv:
        yield srv
