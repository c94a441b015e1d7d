from src.cli.commands import (
    CommandContext,
    cmd_eigenfunctions,
    cmd_embed,
    cmd_eval,
    cmd_featurize,
    cmd_gen_cohort,
    cmd_report,
    cmd_train,
    load_trained,
)
from src.cli.manifest import Manifest, SubjectEntry, load_manifest, save_manifest
from src.cli.records import RunRecord, load_record, save_record

__all__ = [
    "CommandContext",
    "Manifest",
    "RunRecord",
    "SubjectEntry",
    "cmd_eigenfunctions",
    "cmd_embed",
    "cmd_eval",
    "cmd_featurize",
    "cmd_gen_cohort",
    "cmd_report",
    "cmd_train",
    "load_manifest",
    "load_record",
    "load_trained",
    "save_manifest",
    "save_record",
]
