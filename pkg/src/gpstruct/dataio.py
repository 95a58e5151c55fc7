"""Reading series, standardizing them, and the posterior/prediction file formats."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .gp import AffineTransform, Dataset
from .kernels import HyperParams, layout_of, parse, render
from .smc import Particle, Population, make_particle

POSTERIOR_FORMAT = "gpstruct-posterior/1"
PREDICTION_COLUMNS = ("x", "mean", "q10", "q50", "q90")


def _parse_row(row: list[str], line: int) -> tuple[float, float] | None:
    if len(row) != 2:
        raise DataError(f"line {line}: expected two columns, got {len(row)}")
    try:
        x, y = float(row[0]), float(row[1])
    except ValueError:
        raise DataError(f"line {line}: non-numeric value in {row!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise DataError(f"line {line}: non-finite value in {row!r}")
    return x, y


def read_series(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse two-column CSV text into sorted, de-duplicated (x, y) arrays.

    A non-numeric first row is taken as a header.  Line numbers in errors
    count data lines from 0.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if rows:
        try:
            float(rows[0][0])
            float(rows[0][1])
        except (ValueError, IndexError):
            rows = rows[1:]
    points = sorted({_parse_row([c.strip() for c in row], i) for i, row in enumerate(rows)})
    if len(points) < 2:
        raise DataError(f"need at least 2 data points, got {len(points)}")
    arr = np.array(points, dtype=float)
    return arr[:, 0], arr[:, 1]


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return read_series(text)


@dataclass(frozen=True)
class SplitRule:
    """Training points are ``x <= train_end_x``, or the first ``train_fraction`` of points.

    With neither set, every point is used for training.
    """

    train_end_x: float | None = None
    train_fraction: float | None = None

    def __post_init__(self):
        if self.train_end_x is not None and self.train_fraction is not None:
            raise ConfigError("give either train_end_x or train_fraction, not both")
        if self.train_fraction is not None and not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")

    def mask(self, x: np.ndarray) -> np.ndarray:
        if self.train_end_x is not None:
            return x <= self.train_end_x
        if self.train_fraction is not None:
            return np.arange(x.size) < int(math.floor(self.train_fraction * x.size))
        return np.ones(x.size, dtype=bool)

    def to_json(self) -> dict:
        return {"train_end_x": self.train_end_x, "train_fraction": self.train_fraction}


@dataclass(frozen=True, eq=False)
class SplitData:
    train: Dataset
    test_x: np.ndarray  # raw units
    test_y: np.ndarray


def standardize(x, y, split: SplitRule = SplitRule()) -> SplitData:
    """Split, then fit transforms on the training part only.

    x is mapped to [0, 1] by min-max scaling, y is z-scored.  Test inputs go
    through the same transforms; test pairs are kept in raw units.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = split.mask(x)
    xs, ys = x[mask], y[mask]
    if xs.size < 2:
        raise ConfigError(f"split leaves {xs.size} training points; need at least 2")
    y_sd = float(np.std(ys))
    if not y_sd > 0:
        raise DataError("training targets have zero variance")
    x_span = float(xs.max() - xs.min())
    if not x_span > 0:
        raise DataError("training inputs are all identical")
    x_tr = AffineTransform(scale=x_span, shift=float(xs.min()))
    y_tr = AffineTransform(scale=y_sd, shift=float(np.mean(ys)))
    train = Dataset(x_tr.forward(xs), y_tr.forward(ys), x_tr, y_tr)
    return SplitData(train, x[~mask], y[~mask])


def destandardize(values, transform: AffineTransform) -> np.ndarray:
    return transform.inverse(values)


# ---------------------------------------------------------------------------
# Posterior JSON
# ---------------------------------------------------------------------------


def _transform_json(t: AffineTransform) -> dict:
    return {"scale": t.scale, "shift": t.shift}


def posterior_document(
    population: Population,
    data: Dataset,
    engine: str,
    seed: int,
    config_echo: dict,
    extra: dict | None = None,
) -> dict:
    particles = []
    for particle, weight in zip(population.particles, population.weights):
        particles.append(
            {
                "structure": render(particle.expr),
                "params": particle.params.constrained(),
                "unconstrained": [float(v) for v in particle.params.values],
                "log_marginal": particle.log_marginal,
                "weight": float(weight),
            }
        )
    doc = {
        "format": POSTERIOR_FORMAT,
        "engine": engine,
        "seed": seed,
        "config": config_echo,
        "transforms": {"x": _transform_json(data.x_transform), "y": _transform_json(data.y_transform)},
        "particles": particles,
    }
    doc.update(extra or {})
    return doc


def dumps_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_posterior(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("particles"), list) or not doc["particles"]:
        raise DataError(f"{path} is not a posterior file (no particles)")
    for i, p in enumerate(doc["particles"]):
        if not isinstance(p, dict) or not {"structure", "weight", "log_marginal"} <= set(p):
            raise DataError(f"{path}: particle {i} is missing fields")
    return doc


def population_from_document(doc: dict, data: Dataset, prior) -> Population:
    """Rebuild particles (recomputing caches against ``data``) and their weights."""
    particles: list[Particle] = []
    weights = []
    for i, entry in enumerate(doc["particles"]):
        expr = parse(entry["structure"])
        if "unconstrained" not in entry:
            raise DataError(f"particle {i} has no unconstrained parameter vector")
        params = HyperParams(np.array(entry["unconstrained"], dtype=float), layout_of(expr))
        particles.append(make_particle(expr, params, data, prior))
        weights.append(float(entry["weight"]))
    with np.errstate(divide="ignore"):
        log_w = np.log(np.array(weights))
    return Population(tuple(particles), log_w)


# ---------------------------------------------------------------------------
# Predictions CSV
# ---------------------------------------------------------------------------


def predictions_csv(x, mean, q10, q50, q90) -> str:
    buf = io.StringIO()
    buf.write(",".join(PREDICTION_COLUMNS) + "\n")
    for row in zip(x, mean, q10, q50, q90):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def read_predictions(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_COLUMNS:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = [[float(r[c]) for c in PREDICTION_COLUMNS] for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, len(PREDICTION_COLUMNS))
    return {c: arr[:, i] for i, c in enumerate(PREDICTION_COLUMNS)}
