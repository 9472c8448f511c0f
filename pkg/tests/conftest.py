import numpy as np
import pytest

from wlsynth.catalog import Catalog, DatabaseDescriptor, WorkloadComponent
from wlsynth.features import FeatureSchema, PerformanceFeature


@pytest.fixture
def schema():
    return FeatureSchema(
        metrics=("cpu_time_ms", "scanned_bytes"),
        operators=("filter_num", "aggregate_num", "join_num", "sort_num"),
    )


@pytest.fixture
def small_schema():
    return FeatureSchema(metrics=("cpu_time_ms", "scanned_bytes"),
                         operators=("filter_num", "aggregate_num"))


def make_component(schema, component_id, duration_ms, values, benchmark="tpch",
                   scale_factor=1.0, skewness=0, origin="benchmark"):
    values = np.asarray(values, dtype=float)
    return WorkloadComponent(
        component_id=component_id,
        query_ref=f"{component_id}.sql",
        database_ref=DatabaseDescriptor(benchmark, scale_factor, skewness),
        duration_ms=float(duration_ms),
        feature=PerformanceFeature(values[: schema.n_metrics],
                                   values[schema.n_metrics :]),
        origin=origin,
    )


def make_catalog(schema, rows):
    """rows: list of (component_id, duration_ms, feature_values)."""
    return Catalog([make_component(schema, cid, dur, vals) for cid, dur, vals in rows],
                   schema)


def random_catalog(schema, n, rng, duration_range=(5000, 60000), value_range=(0, 20)):
    rows = []
    for j in range(n):
        dur = int(rng.integers(*duration_range))
        vals = rng.integers(value_range[0], value_range[1] + 1,
                            size=schema.n_metrics + schema.n_operators)
        rows.append((f"c{j:02d}", dur, vals.astype(float)))
    return make_catalog(schema, rows)
