import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from jsonschema import Draft202012Validator
from referencing import Registry, Resource

sys.path.insert(0, str(Path(__file__).parent))

from extval.data import Sample, Term, TransformedMatrix, MomentTarget  # noqa: E402


def column_problem(columns, target):
    """TransformedMatrix/MomentTarget pair for marginal-mean terms over raw columns."""
    z = np.atleast_2d(np.asarray(columns, dtype=float))
    if z.shape[0] == 1 and np.ndim(columns) == 1:
        z = z.T
    terms = tuple(Term("marginalMean", f"c{j}") for j in range(z.shape[1]))
    return TransformedMatrix(z, terms), MomentTarget(np.atleast_1d(np.asarray(target, dtype=float)), terms)


def random_feasible(rng: np.random.Generator, n: int, k: int):
    """Random Z with a strictly interior target (a Dirichlet mix of its rows)."""
    z = rng.normal(size=(n, k)) * rng.uniform(0.5, 3.0, size=k) + rng.normal(size=k)
    mix = rng.dirichlet(np.full(n, 2.0))
    return column_problem(z, z.T @ mix)


def toy_sample(rng: np.random.Generator, n: int = 200, p: int = 3) -> Sample:
    x = rng.normal(size=(n, p))
    y = (rng.random(n) < 1 / (1 + np.exp(-x[:, 0]))).astype(int)
    y[:2] = (0, 1)
    return Sample(x, y, tuple(f"x{j + 1}" for j in range(p)))


@pytest.fixture(scope="session")
def schema_validator():
    root = resources.files("extval") / "schemas"
    registry = Registry()
    schemas = {}
    for entry in root.iterdir():
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text(encoding="utf-8"))
            registry = registry.with_resource(doc["$id"], Resource.from_contents(doc))
            schemas[entry.name] = doc

    def validate(report: dict, name: str) -> None:
        Draft202012Validator(schemas[f"{name}.schema.json"], registry=registry).validate(report)

    return validate


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
