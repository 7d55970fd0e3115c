"""
Result files: JSON for results, CSV for bulk samples, whitespace
separated data for gnuplot. Floats are written with 17 significant
digits so that reading a file back reproduces the values exactly.
Run metadata (ids, timestamps) lives in a separate sidecar so primary
outputs are byte-identical across reruns.
"""

import csv
import dataclasses
import json
import math
import numpy as np
from datetime import datetime, timezone
from importlib import metadata
from log.log import get_logger
from pathlib import Path
from pydantic import BaseModel
from reboot.decay.errors import ConfigError
from typing import Any, Optional, Sequence
from uuid7 import create as uuid7  # type: ignore[import-untyped]

logger = get_logger(__name__)

PACKAGE = "durable-decay"


def format_float(value: float) -> str:
    return format(value, ".17g")


def to_jsonable(value: Any) -> Any:
    """
    Plain data for `value`: dataclasses and pydantic models become
    dicts, numpy arrays lists, paths strings.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            field.name: to_jsonable(getattr(value, field.name))
            for field in dataclasses.fields(value)
        }
    elif isinstance(value, BaseModel):
        return to_jsonable(value.model_dump(mode="json", by_alias=True))
    elif isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    elif isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    elif isinstance(value, np.ndarray):
        return [to_jsonable(item) for item in value.tolist()]
    elif isinstance(value, np.bool_):
        return bool(value)
    elif isinstance(value, np.integer):
        return int(value)
    elif isinstance(value, np.floating):
        return float(value)
    elif isinstance(value, Path):
        return str(value)
    return value


def _encode(value: Any, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    elif isinstance(value, float):
        if math.isnan(value):
            return '"nan"'
        elif math.isinf(value):
            # JSON has no infinity.
            return '"inf"' if value > 0 else '"-inf"'
        return format_float(value)
    elif isinstance(value, (int, str)):
        return json.dumps(value)
    elif isinstance(value, dict):
        if not value:
            return "{}"
        items = ",\n".join(
            f"{pad}{json.dumps(key)}: {_encode(item, indent + 1)}"
            for key, item in value.items()
        )
        return "{\n" + items + "\n" + end + "}"
    elif isinstance(value, list):
        if not value:
            return "[]"
        if all(
            isinstance(item, (int, float)) and not isinstance(item, bool)
            for item in value
        ):
            return "[" + ", ".join(_encode(item, 0) for item in value) + "]"
        items = ",\n".join(
            f"{pad}{_encode(item, indent + 1)}" for item in value
        )
        return "[\n" + items + "\n" + end + "]"
    raise TypeError(f"Cannot encode {type(value).__name__} as JSON")


def dumps(value: Any) -> str:
    return _encode(to_jsonable(value), 0) + "\n"


def write_json(path: Path, value: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(value))
    logger.info(f"Wrote '{path}'")


def write_csv(path: Path, columns: dict[str, np.ndarray]) -> None:
    """Numeric columns of equal length, with a header row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        path,
        np.column_stack([np.asarray(column) for column in columns.values()]),
        fmt="%.17g",
        delimiter=",",
        header=",".join(columns),
        comments="",
    )
    logger.info(f"Wrote '{path}'")


def write_table(
    path: Path,
    header: Sequence[str],
    rows: Sequence[Sequence[Any]],
) -> None:
    """A CSV of mixed rows; `None` becomes an empty cell."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    "" if cell is None else
                    format_float(cell) if isinstance(cell, float) else cell
                    for cell in row
                ]
            )
    logger.info(f"Wrote '{path}'")


def read_csv_column(path: Path, column: Optional[str] = None) -> np.ndarray:
    """
    One column of a CSV written by `write_csv()`. Without `column`,
    takes `sojourn`, else `length`, else the last column.
    """
    try:
        with open(path) as file:
            header = file.readline().strip().split(",")
    except OSError as error:
        raise ConfigError(f"Cannot read samples '{path}': {error}")

    if column is None:
        column = next(
            (name for name in ("sojourn", "length") if name in header),
            header[-1],
        )
    if column not in header:
        raise ConfigError(
            f"No column '{column}' in '{path}', found {', '.join(header)}"
        )

    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, header.index(column)]


def write_h_curve(
    path: Path,
    curve: Sequence[tuple[float, float]],
    markers: dict[str, float],
) -> None:
    """
    gnuplot data: block 0 holds (theta, h(theta)) for finite h, block 1
    (`index 1`) the marker positions, e.g., c_FB, c_FIFO, dr(B).
    """
    lines = ["# theta h"]
    for theta, value in curve:
        if math.isfinite(value):
            lines.append(f"{format_float(theta)} {format_float(value)}")
    lines += ["", "", "# marker theta"]
    for name, theta in markers.items():
        lines.append(
            f"{name} {format_float(theta) if math.isfinite(theta) else 'inf'}"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote '{path}'")


def package_version() -> str:
    try:
        return metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        return "unknown"


def metadata_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_metadata(
    path: Path,
    *,
    command: str,
    config: Any,
    started: datetime,
    finished: Optional[datetime] = None,
) -> Path:
    """Writes the `<path>.meta.json` sidecar of the output at `path`."""
    sidecar = metadata_path(path)
    write_json(
        sidecar,
        {
            "run_id": str(uuid7()),
            "command": command,
            "version": package_version(),
            "started": started.isoformat(),
            "finished": (finished or datetime.now(timezone.utc)).isoformat(),
            "config": config,
        },
    )
    return sidecar
