"""
Export Manager Module
Handles CSV/JSONL report export and JSON run metadata
"""
import json
import logging
import math
import os
from pathlib import Path

import pandas as pd

from config import (
    FLOAT_FORMAT,
    REPORT_COLUMNS,
    STREAM_CHAIN,
    STREAM_DISORDER,
    STREAM_EXCHANGE,
    STREAM_INIT,
    TOOLKIT_VERSION,
)
from run_config import ReportRow

logger = logging.getLogger(__name__)

FORMATS = ("csv", "jsonl")


def format_value(value):
    """Report text for one cell: floats with 17 significant digits, NaN and None empty"""
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else FLOAT_FORMAT % value
    return str(value)


def _json_value(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "null"
    if isinstance(value, float):
        if math.isinf(value):
            raise ValueError(f"cannot write {value} to a JSON report")
        return FLOAT_FORMAT % value
    if isinstance(value, str):
        return json.dumps(value)
    return str(value)


def report_frame(rows):
    """Report rows as a string-valued DataFrame in the fixed column order"""
    records = [row.as_record() for row in rows]
    return pd.DataFrame(
        [[format_value(record[column]) for column in REPORT_COLUMNS] for record in records],
        columns=REPORT_COLUMNS,
    )


def jsonl_lines(rows):
    lines = []
    for row in rows:
        record = row.as_record()
        fields = ", ".join(f"{json.dumps(column)}: {_json_value(record[column])}" for column in REPORT_COLUMNS)
        lines.append("{" + fields + "}\n")
    return lines


def _write_atomically(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    try:
        write(partial)
        os.replace(partial, path)
    except OSError as error:
        raise OSError(f"cannot write report {path}: {error}") from error
    finally:
        if partial.exists():
            partial.unlink()
    return path


def emit_report(rows, format, path):
    """
    Write report rows to `path` as CSV (header + one line per row) or JSONL
    (one object per line, same keys). Nothing is written unless every row formats.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("refusing to write an empty report")
    if format not in FORMATS:
        raise ValueError(f"report format must be one of {FORMATS}, got {format!r}")

    if format == "csv":
        frame = report_frame(rows)
        written = _write_atomically(path, lambda target: frame.to_csv(target, index=False, lineterminator="\n"))
    else:
        lines = jsonl_lines(rows)
        written = _write_atomically(path, lambda target: Path(target).write_text("".join(lines)))

    logger.info(f"Report exported to {format.upper()}: {written} ({len(rows)} rows)")
    return written


def read_jsonl(path):
    """Parse a JSONL report back into ReportRow objects"""
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append(ReportRow.from_record(json.loads(line)))
    return rows


def read_csv(path):
    """CSV report as a DataFrame (empty cells become NaN)"""
    return pd.read_csv(path)


def metadata_path(report_path):
    report_path = Path(report_path)
    return report_path.with_name(report_path.name + ".meta.json")


def log_run_metadata(config, rows, alerts, report_path, extra=None):
    """
    Write the `<report>.meta.json` sidecar: config echo, version, key schedule,
    alerts and notes. Content depends only on the config and results.
    """
    metadata = {
        "toolkit_version": TOOLKIT_VERSION,
        "config": config.model_dump(mode="json"),
        "report": Path(report_path).name,
        "row_count": len(rows),
        "rng": {
            "bit_generator": "Philox",
            "streams": {
                "disorder": STREAM_DISORDER,
                "chain": STREAM_CHAIN,
                "init": STREAM_INIT,
                "exchange": STREAM_EXCHANGE,
            },
        },
        "alerts": alerts,
    }
    if extra:
        metadata.update(extra)

    meta_file = metadata_path(report_path)
    text = json.dumps(metadata, indent=2, sort_keys=True, allow_nan=False) + "\n"
    _write_atomically(meta_file, lambda target: Path(target).write_text(text))
    logger.info(f"Run metadata logged to {meta_file}")
    return meta_file
