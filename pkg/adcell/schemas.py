"""
Wire formats for every JSON boundary of the package.

Rationals travel as strings ("3/2" or "0.25"); plain JSON numbers are
accepted on input and converted exactly. Domain types stay dataclasses in
adcell.services.model; these models only convert at the edges.
"""

import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError, field_validator

from adcell.errors import InstanceError
from adcell.services.model import (
    Advertiser,
    Customer,
    Instance,
    Query,
    Scenario,
    format_fraction,
    to_fraction,
)
from adcell.services.online import StreamEvent


def _rational_text(value: Any) -> str:
    if isinstance(value, bool):
        raise ValueError("booleans are not rationals")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int, Fraction)):
        return str(value)
    if isinstance(value, str):
        return value.strip()
    raise ValueError(f"expected a rational, got {value!r}")


class AdvertiserModel(BaseModel):
    budget: str

    @field_validator("budget", mode="before")
    @classmethod
    def _budget_text(cls, v: Any) -> str:
        return _rational_text(v)


class CustomerModel(BaseModel):
    capacity: int


class QueryModel(BaseModel):
    customer: int
    time: int
    prob: str
    bids: Dict[int, str] = {}

    @field_validator("prob", mode="before")
    @classmethod
    def _prob_text(cls, v: Any) -> str:
        return _rational_text(v)

    @field_validator("bids", mode="before")
    @classmethod
    def _bids_text(cls, v: Any) -> Any:
        if isinstance(v, dict):
            return {k: _rational_text(u) for k, u in v.items()}
        return v


class InstanceModel(BaseModel):
    advertisers: List[AdvertiserModel] = []
    customers: List[CustomerModel] = []
    queries: List[QueryModel] = []

    def to_instance(self) -> Instance:
        queries = []
        for q in self.queries:
            bids = {i: to_fraction(u) for i, u in sorted(q.bids.items())}
            queries.append(Query(
                customer=q.customer,
                time=q.time,
                prob=to_fraction(q.prob),
                bids={i: u for i, u in bids.items() if u != 0},
            ))
        return Instance(
            advertisers=tuple(Advertiser(budget=to_fraction(a.budget)) for a in self.advertisers),
            queries=tuple(queries),
            customers=tuple(Customer(capacity=c.capacity) for c in self.customers),
        )

    @classmethod
    def from_instance(cls, inst: Instance) -> "InstanceModel":
        return cls(
            advertisers=[AdvertiserModel(budget=format_fraction(a.budget)) for a in inst.advertisers],
            customers=[CustomerModel(capacity=c.capacity) for c in inst.customers],
            queries=[
                QueryModel(
                    customer=q.customer,
                    time=q.time,
                    prob=format_fraction(q.prob),
                    bids={i: format_fraction(u) for i, u in sorted(q.bids.items())},
                )
                for q in inst.queries
            ],
        )


class ScenarioModel(BaseModel):
    arrived: List[bool]

    def to_scenario(self) -> Scenario:
        return Scenario(arrived=tuple(self.arrived))


class StreamEventModel(BaseModel):
    time: int
    group: int
    customer: int
    arrived_query: Optional[int] = None


class AssignmentValue(BaseModel):
    advertiser: int
    query: int
    value: str


class LpSolutionModel(BaseModel):
    variant: str
    mode: str
    status: str
    objective: str
    objective_float: float
    iterations: int
    values: List[AssignmentValue] = []


class RoundingStepRecord(BaseModel):
    step: int
    case: str
    columns: List[Tuple[int, int]]
    alpha: Optional[str] = None
    beta: Optional[str] = None
    branch: str
    fixed: List[Tuple[int, int]] = []
    tightened: List[str] = []
    updates: List[AssignmentValue] = []
    payments: List[str] = []


def _read_json(path: Union[str, Path]) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InstanceError(f"File not found: {path}")
    except json.JSONDecodeError as e:
        raise InstanceError(f"Malformed JSON in {path}: {e}")


def parse_instance(data: Any) -> Instance:
    try:
        return InstanceModel.model_validate(data).to_instance()
    except ValidationError as e:
        raise InstanceError(f"Malformed instance: {e}")


def load_instance(path: Union[str, Path]) -> Instance:
    return parse_instance(_read_json(path))


def dump_instance(inst: Instance, path: Optional[Union[str, Path]] = None) -> str:
    text = InstanceModel.from_instance(inst).model_dump_json(indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        return ScenarioModel.model_validate(_read_json(path)).to_scenario()
    except ValidationError as e:
        raise InstanceError(f"Malformed scenario: {e}")


def dump_scenario(scenario: Scenario, path: Optional[Union[str, Path]] = None) -> str:
    text = ScenarioModel(arrived=list(scenario.arrived)).model_dump_json()
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


class OfflineReportModel(BaseModel):
    revenue: str
    revenue_float: float
    lp_objective: str
    ratio: Optional[str] = None
    bound: str
    assignment: List[AssignmentValue] = []
    steps: int
    cases: Dict[str, int] = {}


def dump_stream(events: Sequence[StreamEvent], path: Optional[Union[str, Path]] = None) -> str:
    """One JSON object per line: time, group, customer and the arrived query (or null)."""
    text = "".join(
        StreamEventModel(
            time=e.time, group=e.group, customer=e.customer, arrived_query=e.arrived_query
        ).model_dump_json() + "\n"
        for e in events
    )
    if path is not None:
        Path(path).write_text(text)
    return text


def load_stream(path: Union[str, Path]) -> List[StreamEvent]:
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise InstanceError(f"File not found: {path}")
    events = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            model = StreamEventModel.model_validate_json(line)
        except ValidationError as e:
            raise InstanceError(f"Malformed stream event on line {n} of {path}: {e}")
        events.append(StreamEvent(
            time=model.time, group=model.group, customer=model.customer, arrived_query=model.arrived_query
        ))
    return events
