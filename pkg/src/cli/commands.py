import asyncio
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.analysis.features import feature_dump, save_feature_dump
from src.analysis.plotting import save_embedding_svg, save_roc_svg
from src.analysis.roc import RocResult, roc_auc, roc_csv, save_roc
from src.analysis.split import Split, save_split, split_50_50
from src.analysis.tsne import save_embedding, tsne
from src.baseline.gbt import GbtModel, load_gbt, save_gbt, train_gbt
from src.cli.manifest import MANIFEST_NAME, Manifest, SubjectEntry, load_manifest, save_manifest
from src.cli.records import RunRecord, save_record
from src.cli.store import (
    CacheIndex,
    FeatureLayout,
    load_matrix,
    matrix_columns,
    organ_selection,
    save_matrix,
    select_columns,
    subject_seed,
)
from src.config.config_manager import Config
from src.config.settings import STRUCTURES, CohortConfig, MSPNetConfig
from src.errors import AbdoshapeError, DataError, NumericalError, ShapeMismatchError, wrap_errors
from src.geometry.mesh import load_off, marching_cubes, save_off
from src.geometry.sampling import center_cloud, load_cloud, resample_cloud, sample_surface, save_cloud
from src.geometry.synthetic import ORGAN_PROTOCOLS, cohort_specs, generate_organ
from src.geometry.volume import load_voxels, save_voxels
from src.monitoring.error_reporting import FailureReporter, PerformanceMonitor
from src.mspnet.dataset import LabeledSubject
from src.mspnet.model import MSPNetModel
from src.mspnet.training import load_model, load_sidecar, save_model, sidecar_path, train
from src.spectra.fem import assemble_fem
from src.spectra.shapedna import (
    b_orthonormality_error,
    eigenfunction_export,
    load_eigenfunctions,
    load_shape_dna,
    save_eigenfunctions,
    save_shape_dna,
    shape_dna,
)
from src.storage import atomic_write_json, atomic_write_text, sha256_file, sha256_json

logger = logging.getLogger(__name__)

METHODS = ("gbt", "mspnet")
ORGAN_MODES = ("liver", "spleen", "both")
METHOD_TITLES = {"gbt": "AbdomenPrint+GBT", "mspnet": "MSPNet"}
ORTHONORMALITY_TOL = 1e-6

Model = Union[MSPNetModel, GbtModel]


@dataclass
class CommandContext:
    """Resolved configuration, output directory and run bookkeeping shared by commands"""
    config: Config
    out_dir: Path
    argv: List[str] = field(default_factory=list)
    monitor: PerformanceMonitor = field(default_factory=PerformanceMonitor)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def start(self, command: str, **parameters) -> Tuple[RunRecord, float]:
        record = RunRecord(
            command=command,
            argv=list(self.argv),
            config=self.config.model_dump(mode="json"),
            seeds={
                "runtime": self.config.runtime.seed,
                "cohort": self.config.cohort.seed,
                "mspnet": self.config.mspnet.seed,
                "gbt": self.config.gbt.seed,
                "tsne": self.config.tsne.seed,
            },
            parameters={k: v for k, v in parameters.items() if v is not None},
        )
        self.monitor.start_operation(command)
        return record, time.perf_counter()

    def finish(self, record: RunRecord, started: float) -> RunRecord:
        self.monitor.end_operation(record.command)
        record.wall_time = time.perf_counter() - started
        record.peak_rss = self.monitor.peak_rss
        save_record(record, self.out_dir)
        logger.info(f"{record.command} finished in {record.wall_time:.1f}s, {len(record.outputs)} output(s)")
        return record


# per-subject fan-out

Outcome = Tuple[Any, Any, Optional[Exception]]
RECOVERABLE = (AbdoshapeError, ArithmeticError, ValueError, np.linalg.LinAlgError)


def _run_one(worker: Callable, item) -> Outcome:
    try:
        return item, worker(item), None
    except RECOVERABLE as e:
        return item, None, e


async def _fan_out(items: Sequence, worker: Callable, threads: int) -> List[Outcome]:
    semaphore = asyncio.Semaphore(threads)
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        async def run(item):
            async with semaphore:
                return await loop.run_in_executor(pool, _run_one, worker, item)
        return list(await asyncio.gather(*(run(item) for item in items)))


def run_per_subject(items: Sequence, worker: Callable, threads: int = 1) -> List[Outcome]:
    """Apply ``worker`` to every item; results come back in input order with any recoverable error"""
    if threads <= 1 or len(items) <= 1:
        return [_run_one(worker, item) for item in items]
    return asyncio.run(_fan_out(items, worker, threads))


# gen-cohort

@wrap_errors
def cmd_gen_cohort(ctx: CommandContext, count_per_class: Optional[int] = None,
                   separation: Optional[float] = None, name: Optional[str] = None) -> RunRecord:
    """Synthetic liver/spleen voxel files for a balanced cohort plus its manifest"""
    overrides = {
        k: v for k, v in (("count_per_class", count_per_class), ("separation", separation), ("name", name))
        if v is not None
    }
    if overrides.get("count_per_class", 2) < 2:
        raise DataError(f"count-per-class must be >= 2, got {count_per_class}")
    cohort = CohortConfig.model_validate({**ctx.config.cohort.model_dump(), **overrides})
    record, started = ctx.start("gen-cohort", count_per_class=cohort.count_per_class,
                                separation=cohort.separation, name=cohort.name)
    record.seeds["cohort"] = cohort.seed
    specs = cohort_specs(cohort.count_per_class, cohort.separation, cohort.seed)
    voxel_dir = ctx.out_dir / "voxels"

    def generate(subject: Dict) -> Dict[str, str]:
        paths = {}
        for organ, spec in subject["organs"].items():
            relative = f"voxels/{subject['id']}.{organ}.vox"
            save_voxels(generate_organ(organ, spec), ctx.out_dir / relative)
            paths[organ] = relative
        return paths

    logger.info(f"Generating {len(specs)} subjects into {voxel_dir}")
    outcomes = run_per_subject(specs, generate, ctx.config.runtime.threads)
    errors = [(subject["id"], error) for subject, _, error in outcomes if error is not None]
    if errors:
        subject_id, error = errors[0]
        raise DataError(f"Generating subject {subject_id} failed: {error}", cause=error)

    manifest = Manifest(
        name=cohort.name,
        seed=cohort.seed,
        separation=cohort.separation,
        subjects=[SubjectEntry(id=s["id"], label=s["label"], **paths) for s, paths, _ in outcomes],
    )
    manifest_path = save_manifest(manifest, ctx.out_dir / MANIFEST_NAME)
    specs_path = atomic_write_json(ctx.out_dir / "cohort_specs.json", [
        {"id": s["id"], "label": s["label"],
         "organs": {organ: spec.model_dump(mode="json") for organ, spec in s["organs"].items()}}
        for s in specs
    ])
    for _, paths, _ in outcomes:
        for relative in paths.values():
            record.add_output(ctx.out_dir / relative)
    record.add_output(manifest_path)
    record.add_output(specs_path)
    logger.info(
        f"Cohort {cohort.name}: {len(manifest.subjects)} subjects, "
        f"organs {list(ORGAN_PROTOCOLS)}, separation {cohort.separation}"
    )
    return ctx.finish(record, started)


# featurize

def _featurize_params(config: Config, method: str) -> Dict[str, Any]:
    if method == "abdomenprint":
        spectra = config.spectra
        return {
            "method": method,
            "iso": config.geometry.iso,
            "l": spectra.descriptor_length,
            "tol": spectra.tol,
            "lump": spectra.lump,
            "dense_threshold": spectra.dense_threshold,
            "refine_iterations": spectra.refine_iterations,
            "max_arpack_iterations": spectra.max_arpack_iterations,
        }
    if method == "clouds":
        return {
            "method": method,
            "iso": config.geometry.iso,
            "n": config.geometry.points_per_cloud,
            "unit_scale": config.geometry.unit_scale,
            "seed": config.runtime.seed,
        }
    raise DataError(f"Unknown featurize method {method}; use abdomenprint or clouds")


def _solver_options(config: Config) -> Dict[str, Any]:
    return {
        "dense_threshold": config.spectra.dense_threshold,
        "refine_iterations": config.spectra.refine_iterations,
        "max_iterations": config.spectra.max_arpack_iterations,
    }


def _surface(source: Path, config: Config):
    if source.suffix == ".pcl":
        raise DataError(f"{source} is a point cloud; a voxel file is needed for surface extraction")
    return marching_cubes(load_voxels(source), iso=config.geometry.iso,
                          min_area=config.geometry.min_triangle_area,
                          tolerance=config.geometry.weld_tolerance)


def _descriptor_for(source: Path, target: Path, config: Config):
    mesh = _surface(source, config)
    dna = shape_dna(mesh, l=config.spectra.descriptor_length, tol=config.spectra.tol,
                    lump=config.spectra.lump, **_solver_options(config))
    save_shape_dna(dna, target)


def _cloud_for(source: Path, target: Path, config: Config, seed: int):
    n = config.geometry.points_per_cloud
    if source.suffix == ".pcl":
        cloud = resample_cloud(load_cloud(source), n, seed)
    else:
        cloud = sample_surface(_surface(source, config), n, seed)
    save_cloud(center_cloud(cloud, unit_scale=config.geometry.unit_scale), target)


@wrap_errors
def cmd_featurize(ctx: CommandContext, manifest_path: Union[str, Path], method: str,
                  force: bool = False) -> RunRecord:
    """Per-subject ShapeDNA descriptors plus the AbdomenPrint matrix, or PCL1 clouds.

    Outputs whose input, parameter and output hashes match the cache index are
    skipped. Failing subjects are excluded; more than the tolerated share of
    failures is an error.
    """
    config = ctx.config
    params = _featurize_params(config, method)
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    layout = FeatureLayout(ctx.out_dir)
    index = CacheIndex(layout.index_path)
    params_sha = sha256_json(params)
    record, started = ctx.start("featurize", method=method, manifest=str(manifest_path), force=force)
    record.add_input(manifest_path)

    items = [(entry, organ) for entry in manifest.subjects for organ in STRUCTURES
             if entry.organ_path(organ) is not None]

    def work(item: Tuple[SubjectEntry, str]) -> Tuple[str, Path, str]:
        entry, organ = item
        source = manifest.resolve(entry, organ, root)
        input_sha = sha256_file(source)
        if method == "abdomenprint":
            target = layout.descriptor_path(entry.id, organ)
        else:
            target = layout.cloud_path(entry.id, organ)
        if not force and index.is_current(target, input_sha, params_sha):
            return "skipped", target, input_sha
        if method == "abdomenprint":
            _descriptor_for(source, target, config)
        else:
            _cloud_for(source, target, config, subject_seed(config.runtime.seed, entry.id, organ))
        return "computed", target, input_sha

    logger.info(f"Featurizing {len(manifest.subjects)} subjects ({len(items)} organ files) with {method}")
    outcomes = run_per_subject(items, work, config.runtime.threads)

    reporter = FailureReporter(total=len(manifest.subjects), max_fraction=config.runtime.failure_fraction)
    failed_ids = set()
    counts = {"computed": 0, "skipped": 0}
    for (entry, organ), result, error in outcomes:
        if error is not None:
            if entry.id not in failed_ids:
                reporter.report_failure(entry.id, error, stage=f"{method}:{organ}")
            failed_ids.add(entry.id)
            continue
        status, target, input_sha = result
        record.inputs[str(manifest.resolve(entry, organ, root))] = input_sha
        counts[status] += 1
        if status == "skipped":
            logger.info(f"Skipped {entry.id} {organ}: up to date")
        index.record(target, input_sha, params_sha)
        record.add_output(target)
    index.save()
    record.failures = reporter.get_failure_stats()
    logger.info(f"Featurize: {counts['computed']} computed, {counts['skipped']} skipped, {len(failed_ids)} failed")
    reporter.check_policy()

    if method == "abdomenprint":
        kept = [e for e in manifest.subjects if e.id not in failed_ids]
        organs = [o for o in STRUCTURES if kept and all(e.organ_path(o) is not None for e in kept)]
        length = config.spectra.descriptor_length
        rows = []
        for entry in kept:
            descriptors = [load_shape_dna(layout.descriptor_path(entry.id, organ)) for organ in organs]
            if any(d.length != length for d in descriptors):
                raise ShapeMismatchError(f"Subject {entry.id} descriptor length differs from l={length}",
                                         shapes=tuple(d.length for d in descriptors))
            rows.append(np.concatenate([d.reweighted for d in descriptors]))
        matrix = np.array(rows, dtype=np.float64).reshape(len(rows), length * len(organs))
        save_matrix(layout.matrix_path, [e.id for e in kept], [e.label for e in kept],
                    matrix_columns(length, organs), matrix)
        record.add_output(layout.matrix_path)
        logger.info(f"AbdomenPrint matrix: {matrix.shape[0]} subjects x {matrix.shape[1]} columns")
    return ctx.finish(record, started)


# data loading shared by train / eval / embed / report

@dataclass
class CohortData:
    ids: List[str]
    labels: np.ndarray
    organs: List[str]
    matrix: Optional[np.ndarray] = None
    columns: Optional[List[str]] = None
    clouds: Optional[Dict[str, np.ndarray]] = None
    inputs: List[Path] = field(default_factory=list)

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        position = {subject: i for i, subject in enumerate(self.ids)}
        return np.array([position[subject] for subject in ids], dtype=np.int64)

    def subset(self, ids: Sequence[str]):
        """Model input for the given subjects: matrix rows or per-organ cloud stacks"""
        index = self.rows(ids)
        if self.matrix is not None:
            return self.matrix[index]
        return {organ: stack[index] for organ, stack in self.clouds.items()}


def load_cohort_data(ctx: CommandContext, manifest_path: Union[str, Path], method: str, organ: str,
                     features_dir: Optional[Union[str, Path]] = None, points: Optional[int] = None) -> CohortData:
    """Model inputs for every manifest subject that has them; subjects lacking features are skipped"""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    layout = FeatureLayout(Path(features_dir) if features_dir else ctx.out_dir)
    organs = organ_selection(organ)
    labels_by_id = manifest.label_map()

    if method == "gbt":
        ids, labels, columns, matrix = load_matrix(layout.matrix_path)
        columns, matrix = select_columns(columns, matrix, organs, layout.matrix_path)
        keep = [i for i, subject in enumerate(ids) if subject in labels_by_id]
        for i in keep:
            if labels_by_id[ids[i]] != labels[i]:
                raise DataError(f"Label of {ids[i]} in {layout.matrix_path} disagrees with the manifest")
        skipped = len(manifest.subjects) - len(keep)
        if skipped:
            logger.warning(f"{skipped} manifest subject(s) have no AbdomenPrint row and are skipped")
        return CohortData(
            ids=[ids[i] for i in keep],
            labels=labels[keep],
            organs=organs,
            matrix=matrix[keep],
            columns=columns,
            inputs=[manifest_path, layout.matrix_path],
        )

    if method == "mspnet":
        points = points or ctx.config.mspnet.points
        ids, labels, inputs = [], [], [manifest_path]
        stacks: Dict[str, List[np.ndarray]] = {o: [] for o in organs}
        for entry in manifest.subjects:
            paths = {}
            for o in organs:
                cached = layout.cloud_path(entry.id, o)
                listed = entry.organ_path(o)
                if cached.exists():
                    paths[o] = cached
                elif listed is not None and listed.endswith(".pcl"):
                    paths[o] = manifest.resolve(entry, o, manifest_path.parent)
            if len(paths) != len(organs):
                logger.warning(f"Subject {entry.id} has no {'/'.join(organs)} cloud(s) and is skipped")
                continue
            for o, path in paths.items():
                cloud = load_cloud(path)
                if cloud.n != points:
                    cloud = resample_cloud(cloud, points, subject_seed(ctx.config.runtime.seed, entry.id, o))
                stacks[o].append(cloud.points)
                inputs.append(path)
            ids.append(entry.id)
            labels.append(entry.label)
        if not ids:
            raise DataError(f"No subject in {manifest_path} has point clouds; run featurize --method clouds")
        return CohortData(
            ids=ids,
            labels=np.array(labels, dtype=np.int64),
            organs=organs,
            clouds={o: np.stack(v) for o, v in stacks.items()},
            inputs=inputs,
        )
    raise DataError(f"Unknown method {method}; use mspnet or gbt")


def _score(model: Model, data: CohortData, ids: Sequence[str]) -> np.ndarray:
    inputs = data.subset(ids)
    if isinstance(model, MSPNetModel):
        return model.predict_proba_batch(inputs)
    return model.predict_proba(inputs)


@dataclass
class FitResult:
    method: str
    organ: str
    model: Model
    split: Split
    train_roc: RocResult
    test_roc: RocResult
    data: CohortData

    @property
    def tag(self) -> str:
        return f"{self.method}-{self.organ}"


def fit_and_score(ctx: CommandContext, data: CohortData, method: str, organ: str,
                  split_seed: int, stratified: bool = True) -> FitResult:
    """50/50 split, train on the first half, ROC on both halves"""
    split = split_50_50(data.ids, data.labels, split_seed, stratified=stratified)
    train_rows = data.rows(split.train_ids)
    if method == "mspnet":
        config = MSPNetConfig.model_validate({**ctx.config.mspnet.model_dump(), "structures": data.organs})
        subjects = [
            LabeledSubject(subject_id=data.ids[i], clouds={o: data.clouds[o][i] for o in data.organs},
                           label=int(data.labels[i]))
            for i in train_rows
        ]
        with ctx.monitor.track(f"train:{method}-{organ}"):
            model = train(subjects, config)
    else:
        with ctx.monitor.track(f"train:{method}-{organ}"):
            model = train_gbt(data.matrix[train_rows], data.labels[train_rows], ctx.config.gbt)

    train_roc = roc_auc(_score(model, data, split.train_ids), data.labels[train_rows])
    test_roc = roc_auc(_score(model, data, split.test_ids), data.labels[data.rows(split.test_ids)])
    logger.info(f"{METHOD_TITLES[method]} ({organ}): train AUC {train_roc.auc:.4f}, test AUC {test_roc.auc:.4f}")
    return FitResult(method=method, organ=organ, model=model, split=split,
                     train_roc=train_roc, test_roc=test_roc, data=data)


def _split_seed(ctx: CommandContext, split_seed: Optional[int]) -> int:
    return ctx.config.runtime.seed if split_seed is None else split_seed


def _check_method(method: str, organ: str):
    if method not in METHODS:
        raise DataError(f"Unknown method {method}; use one of {list(METHODS)}")
    if organ not in ORGAN_MODES:
        raise DataError(f"Unknown organ mode {organ}; use one of {list(ORGAN_MODES)}")


# train / eval

@wrap_errors
def cmd_train(ctx: CommandContext, manifest_path: Union[str, Path], method: str, organ: str = "both",
              features_dir: Optional[Union[str, Path]] = None, split_seed: Optional[int] = None,
              stratified: bool = True) -> RunRecord:
    _check_method(method, organ)
    split_seed = _split_seed(ctx, split_seed)
    record, started = ctx.start("train", method=method, organ=organ, split_seed=split_seed,
                                stratified=stratified, manifest=str(manifest_path))
    record.seeds["split"] = split_seed
    data = load_cohort_data(ctx, manifest_path, method, organ, features_dir)
    for path in data.inputs:
        record.add_input(path)

    result = fit_and_score(ctx, data, method, organ, split_seed, stratified)
    tag = result.tag
    extra = {"method": method, "organ": organ, "split": asdict(result.split),
             "columns": data.columns, "manifest": str(manifest_path)}
    models_dir = ctx.out_dir / "models"
    if method == "mspnet":
        model_path = save_model(result.model, models_dir / f"{tag}.tnsr", extra=extra)
        record.add_output(sidecar_path(model_path))
    else:
        model_path = save_gbt(result.model, models_dir / f"{tag}.json", extra=extra)
    record.add_output(model_path)

    split_path = save_split(result.split, ctx.out_dir / f"{tag}.split.json")
    test_csv, test_json = ctx.out_dir / f"{tag}.roc.csv", ctx.out_dir / f"{tag}.roc.json"
    save_roc(result.test_roc, test_csv, test_json)
    train_csv = atomic_write_text(ctx.out_dir / f"{tag}.roc_train.csv", roc_csv(result.train_roc))
    metrics = {
        "method": method,
        "organ": organ,
        "split_seed": split_seed,
        "stratified": stratified,
        "n_train": len(result.split.train_ids),
        "n_test": len(result.split.test_ids),
        "train_auc": result.train_roc.auc,
        "test_auc": result.test_roc.auc,
        "model": str(model_path),
    }
    if method == "mspnet" and result.model.history:
        metrics["final_loss"] = result.model.history[-1]["loss"]
        metrics["final_accuracy"] = result.model.history[-1]["accuracy"]
    elif method == "gbt":
        metrics["final_loss"] = result.model.loss_history[-1]
    metrics_path = atomic_write_json(ctx.out_dir / f"{tag}.metrics.json", metrics)
    for path in (split_path, test_csv, test_json, train_csv, metrics_path):
        record.add_output(path)
    return ctx.finish(record, started)


def load_trained(path: Union[str, Path]) -> Tuple[Model, Dict[str, Any]]:
    """Trained model plus the metadata stored with it at training time"""
    path = Path(path)
    if sidecar_path(path).exists():
        return load_model(path), load_sidecar(path).get("extra", {})
    model = load_gbt(path)
    with open(path) as f:
        return model, json.load(f).get("extra", {})


def _model_points(model: Model) -> Optional[int]:
    return model.config.points if isinstance(model, MSPNetModel) else None


def _model_identity(model: Model, extra: Dict[str, Any]) -> Tuple[str, str]:
    method = extra.get("method") or ("mspnet" if isinstance(model, MSPNetModel) else "gbt")
    organ = extra.get("organ")
    if organ is None:
        if isinstance(model, MSPNetModel):
            organ = "both" if len(model.config.structures) == 2 else model.config.structures[0]
        else:
            organ = "both"
    return method, organ


@wrap_errors
def cmd_eval(ctx: CommandContext, model_path: Union[str, Path], manifest_path: Union[str, Path],
             features_dir: Optional[Union[str, Path]] = None, all_subjects: bool = False) -> RunRecord:
    """ROC of a stored model on the test half of its split, or on every subject"""
    model, extra = load_trained(model_path)
    method, organ = _model_identity(model, extra)
    record, started = ctx.start("eval", model=str(model_path), manifest=str(manifest_path),
                                all_subjects=all_subjects)
    record.add_input(model_path)
    data = load_cohort_data(ctx, manifest_path, method, organ, features_dir, _model_points(model))
    for path in data.inputs:
        record.add_input(path)

    if all_subjects or "split" not in extra:
        if not all_subjects:
            logger.warning(f"{model_path} carries no split; evaluating on every subject")
        ids = list(data.ids)
    else:
        available = set(data.ids)
        ids = [i for i in extra["split"]["test_ids"] if i in available]
        if not ids:
            raise DataError("None of the model's test subjects are available")
    labels = data.labels[data.rows(ids)]
    result = roc_auc(_score(model, data, ids), labels)
    tag = f"{method}-{organ}.eval"
    csv_path, json_path = ctx.out_dir / f"{tag}.roc.csv", ctx.out_dir / f"{tag}.roc.json"
    save_roc(result, csv_path, json_path)
    metrics_path = atomic_write_json(ctx.out_dir / f"{tag}.metrics.json", {
        "method": method, "organ": organ, "subjects": len(ids), "auc": result.auc, "all_subjects": all_subjects,
    })
    for path in (csv_path, json_path, metrics_path):
        record.add_output(path)
    logger.info(f"Evaluated {method} ({organ}) on {len(ids)} subjects: AUC {result.auc:.4f}")
    return ctx.finish(record, started)


# embed

@wrap_errors
def cmd_embed(ctx: CommandContext, model_path: Union[str, Path], manifest_path: Union[str, Path],
              features_dir: Optional[Union[str, Path]] = None, organ: Optional[str] = None,
              per_organ: bool = False) -> RunRecord:
    """t-SNE of the classifier's descriptor space, colored by true and predicted label.

    MSPNet embeds the concatenated branch features by default, one organ's
    branch with ``organ``, or every branch separately with ``per_organ``.
    AbdomenPrint embeds the reweighted spectra of the selected organ(s).
    """
    model, extra = load_trained(model_path)
    method, model_organ = _model_identity(model, extra)
    record, started = ctx.start("embed", model=str(model_path), manifest=str(manifest_path),
                                organ=organ, per_organ=per_organ)
    record.add_input(model_path)
    data = load_cohort_data(ctx, manifest_path, method, model_organ, features_dir, _model_points(model))
    for path in data.inputs:
        record.add_input(path)

    if organ == "both":
        organ = None
    if per_organ:
        selections = list(data.organs)
    else:
        selections = [organ]
    for selection in selections:
        if selection is not None and selection not in data.organs:
            raise DataError(f"Model was trained on {data.organs}; cannot embed {selection}")

    model_input = data.subset(data.ids)
    for selection in selections:
        if isinstance(model, MSPNetModel):
            dump = feature_dump(model, data.ids, data.labels, model_input, organ=selection)
        else:
            dump = feature_dump(model, data.ids, data.labels, model_input)
            if selection is not None:
                _, dump.features = select_columns(data.columns, dump.features, [selection])
                dump.source = f"abdomenprint:{selection}"
        embedding = tsne(dump.features, config=ctx.config.tsne)
        suffix = "" if selection is None else f"-{selection}"
        title = f"{METHOD_TITLES[method]} {selection or model_organ}"
        outputs = [
            save_feature_dump(dump, ctx.out_dir / f"features{suffix}.csv"),
            save_embedding(ctx.out_dir / f"embedding{suffix}.csv", dump.ids, embedding, dump.labels, dump.predicted),
            save_embedding_svg(ctx.out_dir / f"embedding{suffix}.true.svg", embedding.coordinates, dump.labels,
                               f"{title}: true label"),
            save_embedding_svg(ctx.out_dir / f"embedding{suffix}.predicted.svg", embedding.coordinates,
                               dump.predicted, f"{title}: predicted label"),
        ]
        for path in outputs:
            record.add_output(path)
        record.parameters.setdefault("kl_divergence", {})[selection or "all"] = embedding.kl_divergence
    return ctx.finish(record, started)


# eigenfunctions

@wrap_errors
def cmd_eigenfunctions(ctx: CommandContext, voxel_path: Union[str, Path], k: Optional[int] = None) -> RunRecord:
    """Surface mesh (OFF) and its first k non-constant eigenfunctions (CSV), re-verified on reload"""
    config = ctx.config
    k = k or config.spectra.eigenfunctions
    voxel_path = Path(voxel_path)
    record, started = ctx.start("eigenfunctions", voxels=str(voxel_path), k=k)
    record.add_input(voxel_path)

    mesh = _surface(voxel_path, config)
    table, _, basis = eigenfunction_export(mesh, k=k, tol=config.spectra.tol, lump=config.spectra.lump,
                                           **_solver_options(config))
    stem = voxel_path.name[:-len(voxel_path.suffix)] if voxel_path.suffix else voxel_path.name
    off_path = save_off(mesh, ctx.out_dir / f"{stem}.off")
    csv_path = save_eigenfunctions(table, ctx.out_dir / f"{stem}.eigenfunctions.csv")

    reloaded = load_off(off_path)
    loaded = load_eigenfunctions(csv_path)
    if loaded.shape != (reloaded.vertex_count, k):
        raise ShapeMismatchError(
            f"Eigenfunction table {loaded.shape} does not match mesh with {reloaded.vertex_count} vertices",
            shapes=(loaded.shape, (reloaded.vertex_count, k)),
        )
    error = b_orthonormality_error(loaded, assemble_fem(reloaded, lump=config.spectra.lump))
    if error > ORTHONORMALITY_TOL:
        raise NumericalError(f"Exported eigenfunctions are not B-orthonormal (max error {error:.2e})")
    summary_path = atomic_write_json(ctx.out_dir / f"{stem}.eigenfunctions.json", {
        "k": k,
        "vertices": mesh.vertex_count,
        "triangles": mesh.triangle_count,
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "residual_max": float(np.max(basis.residuals)),
        "b_orthonormality_error": error,
    })
    for path in (off_path, csv_path, summary_path):
        record.add_output(path)
    logger.info(f"Exported {k} eigenfunctions on {mesh.vertex_count} vertices (B-orthonormality {error:.1e})")
    return ctx.finish(record, started)


# report

def auc_table_markdown(rows: List[Dict[str, Any]], organs: Sequence[str]) -> str:
    lines = ["| method | " + " | ".join(organs) + " |", "|---" * (len(organs) + 1) + "|"]
    for method in dict.fromkeys(r["method"] for r in rows):
        cells = {r["organ"]: r["test_auc"] for r in rows if r["method"] == method}
        values = [f"{cells[o]:.3f}" if o in cells else "-" for o in organs]
        lines.append(f"| {METHOD_TITLES[method]} | " + " | ".join(values) + " |")
    return "\n".join(lines) + "\n"


@wrap_errors
def cmd_report(ctx: CommandContext, manifest_path: Union[str, Path],
               features_dir: Optional[Union[str, Path]] = None, methods: Sequence[str] = METHODS,
               organs: Sequence[str] = ORGAN_MODES, split_seed: Optional[int] = None,
               stratified: bool = True) -> RunRecord:
    """Test AUC for every method and organ mode on one shared split"""
    split_seed = _split_seed(ctx, split_seed)
    for method in methods:
        for organ in organs:
            _check_method(method, organ)
    record, started = ctx.start("report", methods=list(methods), organs=list(organs),
                                split_seed=split_seed, manifest=str(manifest_path))
    record.seeds["split"] = split_seed

    rows, curves = [], []
    for method in methods:
        for organ in organs:
            data = load_cohort_data(ctx, manifest_path, method, organ, features_dir)
            for path in data.inputs:
                record.inputs.setdefault(str(path), sha256_file(path))
            result = fit_and_score(ctx, data, method, organ, split_seed, stratified)
            curve_path = atomic_write_text(ctx.out_dir / f"roc_{result.tag}.csv", roc_csv(result.test_roc))
            record.add_output(curve_path)
            curves.append((f"{METHOD_TITLES[method]} {organ}", result.test_roc))
            rows.append({
                "method": method,
                "organ": organ,
                "train_auc": result.train_roc.auc,
                "test_auc": result.test_roc.auc,
                "n_train": len(result.split.train_ids),
                "n_test": len(result.split.test_ids),
            })

    header = ["method", "organ", "train_auc", "test_auc", "n_train", "n_test"]
    table = ",".join(header) + "\n" + "".join(
        f"{r['method']},{r['organ']},{r['train_auc']!r},{r['test_auc']!r},{r['n_train']},{r['n_test']}\n" for r in rows
    )
    outputs = [
        atomic_write_text(ctx.out_dir / "auc_table.csv", table),
        atomic_write_text(ctx.out_dir / "auc_table.md", auc_table_markdown(rows, organs)),
        save_roc_svg(ctx.out_dir / "roc_report.svg", curves, title="Test ROC by method and organ mode"),
    ]
    for path in outputs:
        record.add_output(path)
    return ctx.finish(record, started)
