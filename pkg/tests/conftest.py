import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from skyrise_lab.dataform import SCHEMAS, TableMeta, describe, generate_files  # noqa: E402
from skyrise_lab.engine import QueryContext, load_plan  # noqa: E402
from skyrise_lab.pricing import load_catalog  # noqa: E402
from skyrise_lab.simcore import Simulation  # noqa: E402
from skyrise_lab.storesim import create_container, load_storage_calibration  # noqa: E402

PLANS = ROOT / "plans"
SUITE = ("q1", "q6", "q12", "bb3")
# small files and row groups so every query gets several fragments
LAB_PARTITIONS = {"lineitem": 4, "orders": 2, "clickstreams": 3, "item": 1}


def table_files(scale, seed, partitions=None, row_group_rows=1024):
    partitions = partitions or LAB_PARTITIONS
    return {
        kind: generate_files(kind, scale, seed, partitions=count, row_group_rows=row_group_rows)
        for kind, count in partitions.items()
    }


def load_bucket(bucket, files, sim_file_bytes=None):
    """Put generated files into ``bucket`` and describe them as tables."""
    tables = {}
    for kind, pairs in files.items():
        metas = []
        for key, data in pairs:
            bucket.put_object(key, data, sim_file_bytes)
            metas.append(describe(key, data, sim_file_bytes))
        tables[kind] = TableMeta(kind, SCHEMAS[kind], metas)
    return tables


def fetcher(files):
    objects = {key: data for pairs in files.values() for key, data in pairs}
    return objects.__getitem__


@pytest.fixture
def root():
    return ROOT


@pytest.fixture
def sim():
    return Simulation(seed=7)


@pytest.fixture(scope="session")
def storage():
    return load_storage_calibration()


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def plans():
    return {name: load_plan(PLANS / f"{name}.json") for name in SUITE}


@pytest.fixture(scope="session")
def lab_files():
    return table_files(0.002, seed=11)


@pytest.fixture
def make_context(storage, catalog):
    """Factory: a fresh simulation, data bucket and query context over ``files``."""

    def make(files, seed=7, sim_file_bytes=None, profile="object_standard", **options):
        sim = Simulation(seed=seed)
        bucket = create_container(storage.profiles[profile], "data")
        tables = load_bucket(bucket, files, sim_file_bytes)
        return QueryContext.create(sim, bucket, tables, catalog=catalog, **options)

    return make
