"""Throughput-comparison arithmetic for containerized vs. native runs.

``fom_delta`` expresses the relative difference of two figure-of-merit
values as a percentage of the containerized run's value,

    100 * (fom_easey - fom_native) / fom_easey

rounded half-up to two decimals, so a positive delta means the container
ran faster.  ``fom_per_core`` normalizes a FOM value by core count for
per-core scaling plots.  Reference samples load from a small CSV fixture
(header ``p,cores,nodes,fom_easey,fom_native,delta``) whose core counts
must be exact cubes of the problem edge length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from importlib import resources
from pathlib import Path

FIXTURE_HEADER = ["p", "cores", "nodes", "fom_easey", "fom_native", "delta"]


class NonPositiveFom(ValueError):
    pass


class ParseError(Exception):
    pass


@dataclass(frozen=True)
class FomSample:
    p: int
    cores: int
    nodes: int
    fom_easey: float
    fom_native: float


def fom_delta(fom_easey: float, fom_native: float) -> float:
    """Percentage difference relative to the containerized value, 2 decimals."""
    if fom_easey <= 0:
        raise NonPositiveFom(f"fom_easey must be positive, got {fom_easey}")
    delta = Decimal(100) * (Decimal(str(fom_easey)) - Decimal(str(fom_native))) \
        / Decimal(str(fom_easey))
    return float(delta.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def fom_per_core(fom: float, cores: int) -> float:
    if cores < 1:
        raise ValueError(f"cores must be >= 1, got {cores}")
    return fom / cores


def default_table_path() -> Path:
    return Path(str(resources.files("easey").joinpath("data/fom_table.csv")))


def load_fom_table(path: str | Path) -> list[FomSample]:
    """Parse the reference fixture; enforces cores == p**3 per row."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc

    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError(f"{path}: file is empty")
    if rows[0] != FIXTURE_HEADER:
        raise ParseError(f"{path}: expected header {','.join(FIXTURE_HEADER)!r}")
    if len(rows) == 1:
        raise ParseError(f"{path}: no data rows")

    samples: list[FomSample] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(FIXTURE_HEADER):
            raise ParseError(f"{path}:{lineno}: expected {len(FIXTURE_HEADER)} columns")
        try:
            p, cores, nodes = int(row[0]), int(row[1]), int(row[2])
            fom_easey, fom_native = float(row[3]), float(row[4])
            float(row[5])  # delta column must at least parse
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if cores != p ** 3:
            raise ParseError(f"{path}:{lineno}: cores={cores} is not {p}^3={p ** 3}")
        if nodes < 1:
            raise ParseError(f"{path}:{lineno}: nodes must be >= 1")
        samples.append(FomSample(p=p, cores=cores, nodes=nodes,
                                 fom_easey=fom_easey, fom_native=fom_native))
    return samples
