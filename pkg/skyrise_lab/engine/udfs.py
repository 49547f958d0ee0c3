"""User-defined table functions for ``udf_map`` operators.

A UDF maps a whole input stream to a new one. Workers call ``apply`` on the
rows of one fragment; the reference interpreter calls ``apply_rows`` on plain
row dicts of the whole table. Rows that must be seen together (one user's
clicks, say) have to be co-partitioned by an exchange before the UDF.
"""

import datetime
import logging
from typing import Any, Dict, Iterable, List, Mapping, Protocol, Sequence, Tuple

from skyrise_lab.dataform import Batch, Schema
from skyrise_lab.errors import PlanInvalid, SchemaMismatch

logger = logging.getLogger(__name__)


class TableUdf(Protocol):
    name: str

    def output_schema(self, schema: Schema, params: Mapping[str, Any]) -> Schema: ...

    def apply(self, batch: Batch, params: Mapping[str, Any]) -> Batch: ...

    def apply_rows(self, rows: Sequence[Mapping[str, Any]], params: Mapping[str, Any]) -> List[Dict[str, Any]]: ...


_REGISTRY: Dict[str, TableUdf] = {}


def register_udf(udf: TableUdf) -> TableUdf:
    _REGISTRY[udf.name] = udf
    return udf


def get_udf(name: str) -> TableUdf:
    try:
        return _REGISTRY[name]
    except KeyError as exc:
        raise PlanInvalid(f"unknown UDF '{name}', registered: {sorted(_REGISTRY)}") from exc


def registered() -> List[str]:
    return sorted(_REGISTRY)


class ViewedBeforePurchase:
    """Items a user viewed shortly before buying another item.

    For every purchase click, emits the last ``views`` view clicks of the
    same user that happened within ``days`` days before it, skipping views of
    the purchased item itself. Optional ``purchased_item`` restricts the
    purchases considered.
    """

    name = "viewed_before_purchase"
    inputs = ("cs_user_id", "cs_item_id", "cs_click_date", "cs_click_time", "cs_is_purchase")
    output = Schema.of(("purchased_item_id", "int64"), ("viewed_item_id", "int64"))

    def output_schema(self, schema: Schema, params: Mapping[str, Any]) -> Schema:
        try:
            for name in self.inputs:
                schema.column(name)
        except SchemaMismatch as exc:
            raise PlanInvalid(f"{self.name}: {exc}") from exc
        return self.output

    def _pairs(self, clicks: Iterable[Tuple[Any, ...]], params: Mapping[str, Any]) -> List[Tuple[int, int]]:
        days = int(params.get("days", 10))
        views = int(params.get("views", 5))
        only = params.get("purchased_item")
        by_user: Dict[int, List[Tuple[Any, ...]]] = {}
        for user, item, date, time, purchase in clicks:
            by_user.setdefault(user, []).append((_ordinal(date), time, purchase, item))
        pairs: List[Tuple[int, int]] = []
        for user in sorted(by_user):
            history = sorted(by_user[user])
            for position, (day, _, purchase, item) in enumerate(history):
                if not purchase or (only is not None and item != only):
                    continue
                recent = [
                    viewed
                    for viewed_day, _, viewed_purchase, viewed in history[:position]
                    if not viewed_purchase and viewed != item and 0 <= day - viewed_day <= days
                ]
                pairs.extend((item, viewed) for viewed in recent[-views:])
        return pairs

    def apply(self, batch: Batch, params: Mapping[str, Any]) -> Batch:
        columns = [batch.column(name).tolist() for name in self.inputs]
        pairs = self._pairs(zip(*columns), params)
        return Batch.from_rows(self.output, pairs)

    def apply_rows(self, rows: Sequence[Mapping[str, Any]], params: Mapping[str, Any]) -> List[Dict[str, Any]]:
        clicks = [tuple(row[name] for name in self.inputs) for row in rows]
        return [dict(zip(self.output.names, pair)) for pair in self._pairs(clicks, params)]


def _ordinal(date: Any) -> int:
    if isinstance(date, datetime.date):
        return date.toordinal()
    return int(date)


register_udf(ViewedBeforePurchase())
