"""On-disk layout of featurization outputs and their hash cache.

A featurize run writes per-subject files under ``abdomenprint/`` or
``clouds/`` and records, for each of them, the hash of the input file, of
the parameters and of the output. A later run skips every output whose three
hashes still match.
"""
import csv
import io
import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config.settings import STRUCTURES
from src.errors import DataError, FileFormatError
from src.storage import atomic_write_json, atomic_write_text, sha256_file

logger = logging.getLogger(__name__)

INDEX_NAME = "featurize_index.json"
MATRIX_NAME = "abdomenprint.csv"


@dataclass(frozen=True)
class FeatureLayout:
    root: Path

    @property
    def descriptor_dir(self) -> Path:
        return self.root / "abdomenprint"

    @property
    def cloud_dir(self) -> Path:
        return self.root / "clouds"

    @property
    def matrix_path(self) -> Path:
        return self.descriptor_dir / MATRIX_NAME

    @property
    def index_path(self) -> Path:
        return self.root / INDEX_NAME

    def descriptor_path(self, subject_id: str, organ: str) -> Path:
        return self.descriptor_dir / f"{subject_id}.{organ}.csv"

    def cloud_path(self, subject_id: str, organ: str) -> Path:
        return self.cloud_dir / f"{subject_id}.{organ}.pcl"


def subject_seed(base_seed: int, subject_id: str, organ: str) -> int:
    """Per-subject, per-organ seed independent of manifest order"""
    sequence = np.random.SeedSequence([base_seed, zlib.crc32(subject_id.encode("utf-8")), STRUCTURES.index(organ)])
    return int(sequence.generate_state(1)[0])


def organ_selection(organ: str) -> List[str]:
    if organ == "both":
        return list(STRUCTURES)
    if organ not in STRUCTURES:
        raise DataError(f"Unknown organ selection {organ}")
    return [organ]


class CacheIndex:
    """Hash cache deciding which featurize outputs are up to date"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.entries: Dict[str, Dict[str, str]] = {}
        if self.path.exists():
            try:
                self.entries = json.loads(self.path.read_text())
            except json.JSONDecodeError as e:
                logger.warning(f"Ignoring unreadable cache index {self.path}: {e}")
                self.entries = {}

    def _key(self, output: Path) -> str:
        return output.relative_to(self.path.parent).as_posix()

    def is_current(self, output: Path, input_sha: str, params_sha: str) -> bool:
        entry = self.entries.get(self._key(output))
        if entry is None or not output.exists():
            return False
        return (
            entry.get("input") == input_sha
            and entry.get("params") == params_sha
            and entry.get("output") == sha256_file(output)
        )

    def record(self, output: Path, input_sha: str, params_sha: str):
        self.entries[self._key(output)] = {"input": input_sha, "params": params_sha, "output": sha256_file(output)}

    def save(self) -> Path:
        return atomic_write_json(self.path, dict(sorted(self.entries.items())))


def matrix_columns(length: int, organs: Sequence[str]) -> List[str]:
    return [f"{organ}_{i}" for organ in organs for i in range(1, length + 1)]


def matrix_csv(ids: Sequence[str], labels: Sequence[int], columns: Sequence[str], matrix: np.ndarray) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "label"] + list(columns))
    for subject, label, row in zip(ids, labels, matrix):
        writer.writerow([subject, int(label)] + [repr(float(v)) for v in row])
    return buffer.getvalue()


def save_matrix(path: Union[str, Path], ids, labels, columns, matrix) -> Path:
    return atomic_write_text(path, matrix_csv(ids, labels, columns, matrix))


def load_matrix(path: Union[str, Path]) -> Tuple[List[str], np.ndarray, List[str], np.ndarray]:
    """Read an AbdomenPrint matrix CSV into (ids, labels, columns, matrix)"""
    try:
        rows = list(csv.reader(Path(path).read_text().splitlines()))
    except OSError as e:
        raise DataError(f"Cannot read feature matrix {path}: {e}", cause=e)
    if not rows or rows[0][:2] != ["id", "label"]:
        raise FileFormatError(f"{path} is not an AbdomenPrint matrix")
    columns = rows[0][2:]
    try:
        ids = [r[0] for r in rows[1:]]
        labels = np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
        matrix = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=np.float64)
    except (ValueError, IndexError) as e:
        raise FileFormatError(f"Malformed feature matrix {path}: {e}", cause=e)
    if matrix.size and matrix.shape[1] != len(columns):
        raise FileFormatError(f"{path}: rows do not match the {len(columns)} header columns")
    return ids, labels, columns, matrix.reshape(len(ids), len(columns))


def select_columns(columns: Sequence[str], matrix: np.ndarray, organs: Sequence[str],
                   path: Optional[Path] = None) -> Tuple[List[str], np.ndarray]:
    keep = [j for j, name in enumerate(columns) if name.split("_", 1)[0] in organs]
    if not keep:
        raise DataError(f"No {'/'.join(organs)} columns in feature matrix {path or ''}".rstrip())
    return [columns[j] for j in keep], matrix[:, keep]
