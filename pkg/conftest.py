"""Shared fixtures for the adcell test suites."""

from fractions import Fraction

import pytest

from adcell import config
from adcell.services.harness import gen_half_tight, gen_integrality_gap
from adcell.services.model import FractionalAssignment, Instance, Scenario


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings come back from the environment after every test."""
    config.reload_settings()
    yield
    config.reload_settings()


@pytest.fixture
def gap4() -> Instance:
    return gen_integrality_gap(4)


@pytest.fixture
def half_tight() -> Instance:
    return gen_half_tight(Fraction(1, 10))


@pytest.fixture
def shared_query() -> Instance:
    """Two advertisers bidding 1 on one certain query; capacity and budgets are slack."""
    return Instance.create(budgets=[10, 10], capacities=[5], queries=[(0, 1, 1, {0: 1, 1: 1})])


@pytest.fixture
def square() -> Instance:
    """Two advertisers and two certain queries of one customer, every pair bid on."""
    return Instance.create(
        budgets=[10, 10],
        capacities=[5],
        queries=[
            (0, 1, 1, {0: 1, 1: 2}),
            (0, 2, 1, {0: 3, 1: 1}),
        ],
    )


@pytest.fixture
def square_cycle() -> FractionalAssignment:
    """Fractional point of `square` whose support is the 4-cycle a0-q0-a1-q1."""
    return FractionalAssignment(y={
        (0, 0): Fraction(1, 2),
        (1, 0): Fraction(1, 2),
        (0, 1): Fraction(1, 3),
        (1, 1): Fraction(2, 3),
    })


def all_arrived(inst: Instance) -> Scenario:
    return Scenario.all_arrived(inst)
