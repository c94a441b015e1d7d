import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.config.settings import STRUCTURES
from src.errors import ManifestError
from src.storage import atomic_write_json

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


class SubjectEntry(BaseModel):
    """One subject: id, binary label and per-organ voxel (.vox) or cloud (.pcl) file"""
    id: str = Field(min_length=1)
    label: int
    liver: Optional[str] = None
    spleen: Optional[str] = None

    @field_validator("label")
    def validate_label(cls, v):
        if v not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {v}")
        return v

    def organ_path(self, organ: str) -> Optional[str]:
        if organ not in STRUCTURES:
            raise ManifestError(f"Unknown organ {organ}")
        return getattr(self, organ)


class Manifest(BaseModel):
    """A cohort on disk; relative file paths resolve against the manifest directory"""
    schema_version: int = SCHEMA_VERSION
    name: str = "cohort"
    seed: Optional[int] = None
    separation: Optional[float] = None
    subjects: List[SubjectEntry] = Field(default_factory=list)

    @field_validator("schema_version")
    def validate_schema(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"Unsupported manifest schema version {v} (expected {SCHEMA_VERSION})")
        return v

    @model_validator(mode="after")
    def validate_subjects(self):
        if not self.subjects:
            raise ValueError("Manifest lists no subjects")
        ids = [s.id for s in self.subjects]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"Duplicate subject ids: {duplicates}")
        for subject in self.subjects:
            if subject.liver is None and subject.spleen is None:
                raise ValueError(f"Subject {subject.id} references no organ file")
        return self

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.subjects]

    @property
    def labels(self) -> List[int]:
        return [s.label for s in self.subjects]

    def subject(self, subject_id: str) -> SubjectEntry:
        for entry in self.subjects:
            if entry.id == subject_id:
                return entry
        raise ManifestError(f"Subject {subject_id} is not in manifest {self.name}")

    def resolve(self, entry: SubjectEntry, organ: str, root: Union[str, Path]) -> Path:
        raw = entry.organ_path(organ)
        if raw is None:
            raise ManifestError(f"Subject {entry.id} has no {organ} file")
        path = Path(raw)
        return path if path.is_absolute() else Path(root) / path

    def label_map(self) -> Dict[str, int]:
        return {s.id: s.label for s in self.subjects}


def save_manifest(manifest: Manifest, path: Union[str, Path]) -> Path:
    return atomic_write_json(path, manifest.model_dump(mode="json"))


def load_manifest(path: Union[str, Path], check_files: bool = True) -> Manifest:
    """Parse and validate a manifest; every referenced file must exist when ``check_files``"""
    path = Path(path)
    try:
        with open(path) as f:
            manifest = Manifest.model_validate(json.load(f))
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}", cause=e)
    except json.JSONDecodeError as e:
        raise ManifestError(f"Manifest {path} is not valid JSON: {e}", cause=e)
    except ValidationError as e:
        raise ManifestError(f"Invalid manifest {path}: {e}", cause=e)

    if check_files:
        missing = [
            str(manifest.resolve(entry, organ, path.parent))
            for entry in manifest.subjects
            for organ in STRUCTURES
            if entry.organ_path(organ) is not None and not manifest.resolve(entry, organ, path.parent).exists()
        ]
        if missing:
            raise ManifestError(f"Manifest {path} references {len(missing)} missing file(s), first: {missing[0]}")
    logger.debug(f"Loaded manifest {manifest.name} with {len(manifest.subjects)} subjects")
    return manifest
