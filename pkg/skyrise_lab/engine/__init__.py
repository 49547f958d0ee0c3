"""Distributed query engine: plans, compilation, workers and execution drivers."""

from skyrise_lab.engine.compiler import DEFAULT_BUDGET, StagePlan, compile_distributed
from skyrise_lab.engine.local import LocalStore, run_local
from skyrise_lab.engine.plan import QueryPlan, inject_barrier, load_plan, plan_from_dict
from skyrise_lab.engine.reference import run_reference
from skyrise_lab.engine.runtime import (
    Deployment,
    QueryContext,
    QueryResponse,
    exchange_object_keys,
    read_result,
    submit_query,
)
from skyrise_lab.engine.udfs import get_udf, register_udf, registered

__all__ = [
    "DEFAULT_BUDGET",
    "Deployment",
    "LocalStore",
    "QueryContext",
    "QueryPlan",
    "QueryResponse",
    "StagePlan",
    "compile_distributed",
    "exchange_object_keys",
    "get_udf",
    "inject_barrier",
    "load_plan",
    "plan_from_dict",
    "read_result",
    "register_udf",
    "registered",
    "run_local",
    "run_reference",
    "submit_query",
]
