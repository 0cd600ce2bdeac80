"""Versioned CSV outputs: per-epoch metrics, per-step corrections and aggregated curves."""
import csv
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Dict, List, Sequence, TextIO, Union

import numpy as np

from gensafe.errors import InsufficientDataError, SchemaMismatchError

logger = logging.getLogger(__name__)

METRICS_SCHEMA = "gensafe.metrics/1"
CORRECTIONS_SCHEMA = "gensafe.corrections/1"
CURVES_SCHEMA = "gensafe.curves/1"
CURVE_COLUMNS = ("mean_episode_reward", "mean_episode_cost", "violations", "lagrange_multiplier")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mean_episode_reward: float
    mean_episode_cost: float
    violations: int
    lagrange_multiplier: float
    vc_loss: float
    gensafe_active: bool
    corrections: int
    mean_correction_distance: float


@dataclass(frozen=True)
class CorrectionRecord:
    timestep: int
    feasible: bool
    distance: float
    immediate: float
    future: float


def _format(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class SchemaCsvWriter:
    """CSV writer whose first line names the schema, followed by a header row."""

    def __init__(self, path: Union[str, Path], schema: str, columns: Sequence[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        self._handle: TextIO = open(self.path, "w", newline="")
        self._handle.write(f"# schema: {schema}\n")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(self.columns)

    def write(self, row) -> None:
        self._writer.writerow([_format(v) for v in row])
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MetricsWriter(SchemaCsvWriter):
    def __init__(self, path: Union[str, Path]):
        super().__init__(path, METRICS_SCHEMA, [f.name for f in fields(EpochMetrics)])

    def write(self, row: EpochMetrics) -> None:
        super().write(astuple(row))


class CorrectionsWriter(SchemaCsvWriter):
    def __init__(self, path: Union[str, Path]):
        super().__init__(path, CORRECTIONS_SCHEMA, [f.name for f in fields(CorrectionRecord)])

    def write(self, row: CorrectionRecord) -> None:
        super().write(astuple(row))


def read_schema_csv(path: Union[str, Path], schema: str) -> Dict[str, np.ndarray]:
    """Read a schema-tagged CSV into float columns.

    Raises:
        SchemaMismatchError: If the schema line is missing or names another schema
    """
    path = Path(path)
    with open(path, newline="") as handle:
        first = handle.readline().strip()
        if first != f"# schema: {schema}":
            raise SchemaMismatchError(f"{path} has schema line {first!r}, expected '# schema: {schema}'")
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatchError(f"{path} has no header row")
        rows = [row for row in reader if row]
    columns = {name: np.array([float(row[i]) for row in rows]) for i, name in enumerate(header)}
    return columns


def read_metrics(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    columns = read_schema_csv(path, METRICS_SCHEMA)
    missing = [f.name for f in fields(EpochMetrics) if f.name not in columns]
    if missing:
        raise SchemaMismatchError(f"{path} is missing metrics columns: {', '.join(missing)}")
    return columns


def aggregate_curves(paths: Sequence[Union[str, Path]]) -> Dict[str, np.ndarray]:
    """Per-epoch mean and population standard deviation across seeds.

    Series of different lengths are cut to the shortest one.

    Returns:
        Columns 'epoch' and '<metric>_mean' / '<metric>_std' for each curve metric
    """
    if not paths:
        raise InsufficientDataError("At least one metrics file is required")
    runs = [read_metrics(p) for p in paths]
    length = min(len(run["epoch"]) for run in runs)
    if any(len(run["epoch"]) != length for run in runs):
        logger.warning(f"Metrics files differ in length; aggregating the first {length} epochs")
    curves: Dict[str, np.ndarray] = {"epoch": runs[0]["epoch"][:length].astype(int)}
    for column in CURVE_COLUMNS:
        stacked = np.stack([run[column][:length] for run in runs])
        curves[f"{column}_mean"] = stacked.mean(axis=0)
        curves[f"{column}_std"] = stacked.std(axis=0)
    return curves


def write_curves(path: Union[str, Path], curves: Dict[str, np.ndarray]) -> Path:
    columns: List[str] = list(curves)
    with SchemaCsvWriter(path, CURVES_SCHEMA, columns) as writer:
        for index in range(len(curves["epoch"])):
            writer.write([curves[c][index].item() for c in columns])
    return Path(path)


def read_curves(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return read_schema_csv(path, CURVES_SCHEMA)
