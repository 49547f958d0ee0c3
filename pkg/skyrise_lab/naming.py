from typing import List, Optional, Tuple

PREFIX_TABLES = "tables"
PREFIX_EXCHANGE = "exchange"
PREFIX_RESULTS = "results"
PREFIX_BARRIERS = "barriers"
PREFIX_RAMP = "ramp"

FILE_SUFFIX = ".skyc"


def table_key(table: str, index: int) -> str:
    return f"{PREFIX_TABLES}/{table}/part-{index:05d}{FILE_SUFFIX}"


def exchange_key(query_id: str, stage: int, fragment: int) -> str:
    return f"{PREFIX_EXCHANGE}/{query_id}/stage_{stage}/frag_{fragment:05d}"


def result_prefix(query_id: str) -> str:
    return f"{PREFIX_RESULTS}/{query_id}/"


def result_key(query_id: str, index: int = 0) -> str:
    return f"{result_prefix(query_id)}part-{index:05d}{FILE_SUFFIX}"


def barrier_key(query_id: str, condition: str) -> str:
    return f"{PREFIX_BARRIERS}/{query_id}/{condition}"


def ramp_key(instance: int, obj: int, hashed_prefix: Optional[str] = None) -> str:
    if hashed_prefix is not None:
        return f"{hashed_prefix}/{PREFIX_RAMP}/inst-{instance:04d}/obj-{obj:05d}"
    return f"{PREFIX_RAMP}/inst-{instance:04d}/obj-{obj:05d}"


def validate_keys_are_canonical(keys: List[str]) -> Tuple[bool, List[str]]:
    errors: List[str] = []
    known = (PREFIX_TABLES, PREFIX_EXCHANGE, PREFIX_RESULTS, PREFIX_BARRIERS, PREFIX_RAMP)

    for key in keys:
        if not key:
            errors.append("Empty object key")
            continue
        if key.startswith("/"):
            errors.append(f"Key must not start with '/': {key}")
        if "//" in key:
            errors.append(f"Key contains double slash: {key}")
        if key.split("/", 1)[0] not in known:
            errors.append(f"Key outside known prefixes: {key}")

    return len(errors) == 0, errors
