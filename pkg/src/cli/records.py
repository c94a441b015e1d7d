import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

from pydantic import BaseModel, Field, ValidationError

from src.errors import FileFormatError
from src.storage import atomic_write_json, sha256_file

logger = logging.getLogger(__name__)


class RunRecord(BaseModel):
    """Provenance of one command run, written next to its outputs"""
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    outputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    parameters: Dict[str, Any] = Field(default_factory=dict)
    failures: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float = 0.0
    peak_rss: int = 0

    def add_input(self, path: Union[str, Path]):
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path: Union[str, Path]):
        self.outputs[str(path)] = sha256_file(path)


def record_path(out_dir: Union[str, Path], command: str) -> Path:
    return Path(out_dir) / f"{command}.run.json"


def save_record(record: RunRecord, out_dir: Union[str, Path]) -> Path:
    path = atomic_write_json(record_path(out_dir, record.command), record.model_dump(mode="json"))
    logger.info(f"Run record written to {path}")
    return path


def load_record(path: Union[str, Path]) -> RunRecord:
    try:
        with open(path) as f:
            return RunRecord.model_validate(json.load(f))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise FileFormatError(f"Cannot read run record {path}: {e}", cause=e)
