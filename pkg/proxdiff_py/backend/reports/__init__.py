"""
Report entries and writers for proxdiff runs.

Every service returns plain dictionaries built with ``success_entry`` /
``error_entry`` and persists them as JSON and CSV.
"""

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy


class Reports:
    """
    Response formatting for services.

    Mirrors the success/error envelope every service returns.
    """

    @staticmethod
    def success_entry(data: Any, **extra: Any) -> Dict[str, Any]:
        """
        Create a successful report entry.

        Args:
            data: Entry payload

        Returns:
            {'success': True, 'data': data, ...extra}
        """
        entry = {'success': True, 'data': data}
        entry.update(extra)
        return entry

    @staticmethod
    def error_entry(message: str, **extra: Any) -> Dict[str, Any]:
        """
        Create an error report entry.

        Args:
            message: Error message

        Returns:
            {'success': False, 'error': message, ...extra}
        """
        entry = {'success': False, 'error': message}
        entry.update(extra)
        return entry

    @staticmethod
    def validate_required_params(data: Dict[str, Any], required: Sequence[str]) -> Tuple[bool, str]:
        """
        Validate that required parameters are present.

        Args:
            data: Configuration dictionary
            required: List of required parameter names

        Returns:
            Tuple of (is_valid, error_message)
        """
        missing = [param for param in required if param not in data]
        if missing:
            return False, f"Missing required parameters: {', '.join(missing)}"
        return True, ""


def spec_digest(spec: Any) -> str:
    """SHA-256 of the canonical JSON form of a run specification."""
    text = json.dumps(spec, sort_keys=True, default=_json_default, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def report_header(spec: Any, seeds: Iterable[int]) -> Dict[str, Any]:
    """Everything needed to reproduce a report: spec digest, seeds and code versions."""
    from ... import __version__
    return {
        'spec_sha256': spec_digest(spec),
        'seeds': [int(s) for s in seeds],
        'proxdiff_version': __version__,
        'numpy_version': np.__version__,
        'scipy_version': scipy.__version__,
        'python_version': platform.python_version(),
    }


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: Any, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, default=_json_default)
    return path


def write_csv(path: Any, rows: List[Dict[str, Any]], fieldnames: Optional[Sequence[str]] = None) -> Path:
    """
    Write dictionaries as CSV rows.

    The header is the union of keys in first-seen order unless given.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            for key in row:
                if key not in fieldnames:
                    fieldnames.append(key)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in fieldnames})
    return path


def _csv_value(value: Any) -> Any:
    if value is None:
        return ''
    if isinstance(value, (list, tuple, np.ndarray)):
        return json.dumps(value, default=_json_default)
    return value


def write_samples_csv(path: Any, samples: np.ndarray) -> Path:
    """One row per chain, columns x0..x{d-1}."""
    samples = np.atleast_2d(samples)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ','.join(f"x{i}" for i in range(samples.shape[1]))
    np.savetxt(path, samples, delimiter=',', header=header, comments='', fmt='%.17g')
    return path


def read_samples_csv(path: Any) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2))


def write_histogram_csv(path: Any, hist: Dict[str, List[float]]) -> Path:
    """Columns: left edge, right edge, count."""
    edges, counts = hist['edges'], hist['counts']
    rows = [{'left': edges[i], 'right': edges[i + 1], 'count': counts[i]} for i in range(len(counts))]
    return write_csv(path, rows, fieldnames=['left', 'right', 'count'])


__all__ = [
    'Reports', 'spec_digest', 'report_header', 'write_json', 'write_csv',
    'write_samples_csv', 'read_samples_csv', 'write_histogram_csv',
]
