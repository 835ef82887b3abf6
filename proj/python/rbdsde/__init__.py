"""Penalization solver for reflected backward doubly stochastic equations."""

import json

from ._rbdsde import (
    ConvexDomain,
    Error,
    SetupError,
    mann_kendall,
    resolvent_step,
    weighted_norm,
)
from . import _rbdsde

__all__ = [
    "ConvexDomain",
    "Error",
    "SetupError",
    "mann_kendall",
    "resolvent_step",
    "weighted_norm",
    "validate_problem",
    "tree_oracle",
    "solve_penalized",
    "solve_reflected",
    "REFLECTING_BENCHMARK",
]

REFLECTING_BENCHMARK = {
    "domain": {"kind": "half-space", "normal": [-1.0], "offset": 0.0},
    "T": 1.0,
    "d": 1,
    "k": 1,
    "l": 1,
    "forward": {"name": "brownian"},
    "terminal": "identity",
    "terminal_policy": "allow",
}


def _text(problem):
    return problem if isinstance(problem, str) else json.dumps(problem)


def validate_problem(problem):
    _rbdsde.validate_problem(_text(problem))


def tree_oracle(problem, depth, x0=0.0):
    return _rbdsde.tree_oracle(_text(problem), depth, x0)


def solve_penalized(problem, n, **kwargs):
    return _rbdsde.solve_penalized(_text(problem), n, **kwargs)


def solve_reflected(problem, schedule, **kwargs):
    return _rbdsde.solve_reflected(_text(problem), list(schedule), **kwargs)
