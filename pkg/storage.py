"""
Storage module for the HRIS channel estimation toolkit
Handles result tables: CSV with a schema comment in row 1, optional JSON mirror
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import pandas as pd

from utils import ensure_directory_exists, get_file_timestamp, get_timestamp

logger = logging.getLogger(__name__)

RESULTS_SCHEMA = "hris-results/v1"
TRACE_SCHEMA = "hris-trace/v1"
VALIDATION_SCHEMA = "hris-validate/v1"

# Columns excluded when comparing runs for reproducibility
TIMING_COLUMNS = ("wall_time_s",)


def _as_frame(records: Union[pd.DataFrame, Iterable[Dict[str, Any]]]) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    return pd.DataFrame(list(records))


def _atomic_write(path: Path, text: str):
    ensure_directory_exists(path.parent)
    # Write to temporary file first, then rename for atomic operation
    temp_file = path.with_name(path.name + ".tmp")
    with open(temp_file, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    os.replace(temp_file, path)


class ResultStorage:
    """Writes and reads result tables under one output directory"""

    def __init__(self, output_dir: str = "results"):
        self.output_dir = Path(output_dir)

    def output_path(self, sweep: str, timestamp: Optional[str] = None, suffix: str = ".csv") -> Path:
        """<sweep>_<timestamp>.csv under the output directory"""
        return self.output_dir / f"{sweep}_{timestamp or get_file_timestamp()}{suffix}"

    @staticmethod
    def schema_line(schema: str, sweep: str, seed: int, generated: Optional[str] = None) -> str:
        return f"# schema={schema} sweep={sweep} seed={seed} generated={generated or get_timestamp()}"

    def write_table(self, records, schema: str, sweep: str, seed: int,
                    path: Optional[Path] = None, json_mirror: bool = False) -> Path:
        """Write a table; the JSON mirror gets the same path with a .json suffix"""
        frame = _as_frame(records)
        path = Path(path) if path is not None else self.output_path(sweep)
        generated = get_timestamp()
        header = self.schema_line(schema, sweep, seed, generated)
        _atomic_write(path, header + "\n" + frame.to_csv(index=False, lineterminator="\n"))
        logger.info(f"Wrote {len(frame)} rows to {path}")

        if json_mirror:
            json_path = path.with_suffix(".json")
            payload = {
                "schema": schema,
                "sweep": sweep,
                "seed": seed,
                "generated": generated,
                "records": frame.astype(object).where(frame.notna(), None).to_dict(orient="records"),
            }
            _atomic_write(json_path, json.dumps(payload, indent=2, ensure_ascii=False))
            logger.info(f"Wrote JSON mirror to {json_path}")
        return path

    @staticmethod
    def read_header(path: Union[str, Path]) -> Dict[str, str]:
        """Parse the row-1 schema comment into a mapping"""
        with open(path, 'r', encoding='utf-8') as f:
            first = f.readline().strip()
        if not first.startswith("#"):
            raise ValueError(f"{path} has no schema header")
        return dict(item.split("=", 1) for item in first.lstrip("# ").split() if "=" in item)

    def read_table(self, path: Union[str, Path]) -> Tuple[Dict[str, str], pd.DataFrame]:
        return self.read_header(path), pd.read_csv(path, skiprows=1)

    @staticmethod
    def deterministic_body(path: Union[str, Path]) -> str:
        """CSV body without row 1 and timing columns"""
        frame = pd.read_csv(path, skiprows=1, dtype=str, keep_default_na=False)
        frame = frame.drop(columns=[c for c in TIMING_COLUMNS if c in frame.columns])
        return frame.to_csv(index=False, lineterminator="\n")
