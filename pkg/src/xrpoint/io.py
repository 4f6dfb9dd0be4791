"""Trial-log CSV persistence, auxiliary tables and atomic file output."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
import os
import tempfile
import types
import typing
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .trial import TrialRecord

SCHEMA_VERSION = "1.0"
RECORD_FIELDS = tuple(f.name for f in dataclasses.fields(TrialRecord))
COLUMNS = ("schema_version",) + RECORD_FIELDS
_HINTS = typing.get_type_hints(TrialRecord)


class LogFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# atomic output


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: str | Path, obj) -> Path:
    plain = json.loads(json.dumps(obj, default=_json_default))
    return atomic_write_text(path, json.dumps(_finite(plain), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# value formatting


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def _base_type(hint):
    args = typing.get_args(hint)
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        non_none = [a for a in args if a is not type(None)]
        return non_none[0], True
    return hint, False


def parse_value(text: str, hint):
    base, optional = _base_type(hint)
    if text == "":
        if optional:
            return None
        if base is str:
            return ""
        raise ValueError("missing required value")
    if base is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    if base is int:
        return int(text)
    if base is float:
        return float(text)
    if isinstance(base, type) and issubclass(base, enum.Enum):
        return base(text)
    return text


# ---------------------------------------------------------------------------
# trial log


def record_row(record: TrialRecord) -> list[str]:
    return [SCHEMA_VERSION] + [format_value(getattr(record, name)) for name in RECORD_FIELDS]


def records_to_csv(records: Iterable[TrialRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow(record_row(r))
    return buf.getvalue()


def export_csv(records: Iterable[TrialRecord], path: str | Path) -> Path:
    """Write the trial log: fixed column order, 6 significant digits, empty = missing."""
    return atomic_write_text(path, records_to_csv(records))


def records_from_csv(text: str, source: str = "<string>") -> list[TrialRecord]:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise LogFormatError(f"{source}: empty file") from None
    if tuple(header) != COLUMNS:
        if set(header) == set(COLUMNS):
            raise LogFormatError(f"{source}: header columns are out of order")
        missing = sorted(set(COLUMNS) - set(header))
        extra = sorted(set(header) - set(COLUMNS))
        raise LogFormatError(f"{source}: header mismatch (missing {missing}, unexpected {extra})")
    records = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(COLUMNS):
            raise LogFormatError(f"{source}: row {row_no}: expected {len(COLUMNS)} fields, found {len(row)}")
        if row[0] != SCHEMA_VERSION:
            raise LogFormatError(
                f"{source}: row {row_no}: schema version mismatch (expected {SCHEMA_VERSION}, found {row[0]})"
            )
        kwargs = {}
        for name, text in zip(RECORD_FIELDS, row[1:]):
            try:
                kwargs[name] = parse_value(text, _HINTS[name])
            except ValueError as exc:
                raise LogFormatError(f"{source}: row {row_no}: column {name}: {exc}") from exc
        records.append(TrialRecord(**kwargs))
    return records


def load_csv(path: str | Path) -> list[TrialRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return records_from_csv(fh.read(), str(path))


def load_schema() -> dict:
    """The machine-readable column schema shipped with the package."""
    text = resources.files("xrpoint").joinpath("schema/trial_log.json").read_text(encoding="utf-8")
    return json.loads(text)


# ---------------------------------------------------------------------------
# generic tables


def rows_to_csv(header: Sequence[str], rows: Iterable[dict | Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        values = [row.get(h) for h in header] if isinstance(row, dict) else list(row)
        writer.writerow([format_value(v) for v in values])
    return buf.getvalue()


def write_table(path: str | Path, header: Sequence[str], rows: Iterable) -> Path:
    return atomic_write_text(path, rows_to_csv(header, rows))


def read_table(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


ACTION_COLUMNS = ("participant_id", "block_idx", "trial_idx", "action", "value", "applied")
QC_COLUMNS = ("participant_id", "block_idx", "trial_idx", "reasons")
VERIFICATION_COLUMNS = ("participant_id", "modality", "ui_mode", "pressure", "ID_bits", "rt_ms")


def write_actions(path, actions) -> Path:
    return write_table(path, ACTION_COLUMNS, (dataclasses.asdict(a) for a in actions))


def write_qc_ledger(path, entries) -> Path:
    rows = (
        {"participant_id": e.participant_id, "block_idx": e.block_idx, "trial_idx": e.trial_idx,
         "reasons": ";".join(e.reasons)}
        for e in entries
    )
    return write_table(path, QC_COLUMNS, rows)


def write_verification(path, rows) -> Path:
    return write_table(path, VERIFICATION_COLUMNS, rows)


def read_verification(path) -> list[dict]:
    rows = read_table(path)
    if rows and set(VERIFICATION_COLUMNS) - set(rows[0]):
        raise LogFormatError(f"{path}: verification export lacks {sorted(set(VERIFICATION_COLUMNS) - set(rows[0]))}")
    for i, row in enumerate(rows, start=2):
        try:
            row["rt_ms"] = float(row["rt_ms"])
            row["ID_bits"] = float(row["ID_bits"])
        except ValueError as exc:
            raise LogFormatError(f"{path}: row {i}: {exc}") from exc
    return rows
