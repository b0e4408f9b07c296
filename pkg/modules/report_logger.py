"""
Report logger for ergolab
Writes experiment tables as CSV plus text and JSON summaries
"""

import csv
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .utils import _jsonable


def _cell(value: Any) -> str:
    """Round-trip text for one CSV cell"""
    if isinstance(value, (np.generic,)):
        value = value.item()
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ' '.join(_cell(v) for v in np.asarray(value).reshape(-1).tolist())
    return str(value)


class ReportLogger:
    """
    Logs the rows of one experiment to <kind>_<hash>.csv and writes
    <kind>_<hash>_summary.txt / .json at the end.

    CSV files hold no wall-clock values unless include_timings is set, so the
    same configuration always produces the same bytes.
    """

    def __init__(self, output_dir: Path, kind: str, config_hash: str, include_timings: bool = False):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.kind = kind
        self.config_hash = config_hash
        self.include_timings = include_timings
        stem = f"{kind}_{config_hash[:12]}"
        self.csv_path = self.output_dir / f"{stem}.csv"
        self.summary_txt = self.output_dir / f"{stem}_summary.txt"
        self.summary_json = self.output_dir / f"{stem}_summary.json"
        self.rows: List[Dict[str, Any]] = []
        logging.debug(f"Report logger for {kind} writing to {self.output_dir}")

    def log_result(self, row: Dict[str, Any]):
        """Queue one table row"""
        if not self.include_timings:
            row = {k: v for k, v in row.items() if k != 'runtime_s'}
        self.rows.append(row)

    def log_results(self, rows: List[Dict[str, Any]]):
        for row in rows:
            self.log_result(row)

    def _fieldnames(self) -> List[str]:
        names: List[str] = []
        for row in self.rows:
            for key in row:
                if key not in names:
                    names.append(key)
        return names

    def write_csv(self) -> Path:
        fieldnames = self._fieldnames()
        try:
            with open(self.csv_path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
                writer.writeheader()
                for row in self.rows:
                    writer.writerow({k: _cell(row[k]) if k in row else '' for k in fieldnames})
        except OSError as e:
            logging.error(f"Error writing CSV report: {e}")
            raise
        return self.csv_path

    def generate_summary(self, criteria: Dict[str, bool], details: Dict[str, Any],
                         wall_clock: Optional[float] = None) -> Path:
        """Write the text and JSON summaries"""
        passed = all(criteria.values()) if criteria else True
        try:
            with open(self.summary_txt, 'w', encoding='utf-8') as f:
                f.write(f"=== ERGOLAB {self.kind.upper()} SUMMARY ===\n\n")
                f.write(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
                f.write(f"Config hash: {self.config_hash}\n")
                f.write(f"Rows: {len(self.rows)}\n")
                if wall_clock is not None:
                    f.write(f"Wall clock: {wall_clock:.2f} seconds\n")
                f.write("\nCriteria:\n")
                for name, ok in criteria.items():
                    f.write(f"  {name}: {'PASS' if ok else 'FAIL'}\n")
                if details:
                    f.write("\nDetails:\n")
                    for key, value in details.items():
                        f.write(f"  {key}: {value}\n")
                f.write(f"\nResult: {'PASS' if passed else 'FAIL'}\n")
            with open(self.summary_json, 'w', encoding='utf-8') as f:
                json.dump({'kind': self.kind, 'config_hash': self.config_hash, 'rows': len(self.rows),
                           'criteria': criteria, 'passed': passed, 'details': details,
                           'wall_clock_s': wall_clock}, f, indent=2, default=_jsonable)
        except OSError as e:
            logging.error(f"Error writing summary: {e}")
        return self.summary_txt

    def finalize(self, criteria: Dict[str, bool], details: Dict[str, Any],
                 wall_clock: Optional[float] = None) -> Path:
        csv_path = self.write_csv()
        summary = self.generate_summary(criteria, details, wall_clock)
        logging.info(f"Report saved to {csv_path}")
        logging.info(f"Summary saved to {summary}")
        return csv_path
