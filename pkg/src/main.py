import argparse
import logging
import os
import signal
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from src.cli.commands import (
    METHODS,
    ORGAN_MODES,
    CommandContext,
    cmd_eigenfunctions,
    cmd_embed,
    cmd_eval,
    cmd_featurize,
    cmd_gen_cohort,
    cmd_report,
    cmd_train,
)
from src.config.config_manager import ConfigManager
from src.errors import EXIT_OK, EXIT_USAGE, AbdoshapeError, UsageError
from src.monitoring.log_config import configure_logging

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser: argparse.ArgumentParser, defaults: bool):
    # subcommands repeat the flags with SUPPRESS so they do not clobber earlier values
    default = None if defaults else argparse.SUPPRESS
    parser.add_argument("--seed", type=int, default=default, help="Seed for every random stream")
    parser.add_argument("--threads", type=int, default=default, help="Per-subject workers")
    parser.add_argument("--out-dir", default="out" if defaults else argparse.SUPPRESS, help="Output directory")
    parser.add_argument("--precision", choices=["f32", "f64"], default=default, help="MSPNet arithmetic")
    parser.add_argument("--config", default="config.json" if defaults else argparse.SUPPRESS,
                        help="JSON configuration file")
    parser.add_argument("--log-level", default=default, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-json", action="store_true", default=False if defaults else argparse.SUPPRESS,
                        help="Emit JSON log lines")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="abdoshape", description="Organ shape descriptors and classifiers")
    _global_flags(parser, defaults=True)
    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands.required = True

    def command(name: str, help_text: str) -> ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        _global_flags(sub, defaults=False)
        return sub

    gen = command("gen-cohort", "Generate a synthetic liver/spleen cohort")
    gen.add_argument("--count-per-class", type=int, default=None)
    gen.add_argument("--separation", type=float, default=None)
    gen.add_argument("--name", default=None)

    feat = command("featurize", "Compute AbdomenPrint descriptors or point clouds")
    feat.add_argument("manifest")
    feat.add_argument("--method", choices=["abdomenprint", "clouds"], required=True)
    feat.add_argument("--l", dest="descriptor_length", type=int, default=None, help="Eigenvalues per organ")
    feat.add_argument("--points", type=int, default=None, help="Points per cloud")
    feat.add_argument("--lump", action="store_true", default=None, help="Lumped mass matrix")
    feat.add_argument("--force", action="store_true", help="Recompute up-to-date outputs")

    def model_flags(sub: ArgumentParser):
        sub.add_argument("--epochs", type=int, default=None)
        sub.add_argument("--batch-size", type=int, default=None)
        sub.add_argument("--learning-rate", type=float, default=None)
        sub.add_argument("--points", type=int, default=None)
        sub.add_argument("--rounds", type=int, default=None)
        sub.add_argument("--max-depth", type=int, default=None)

    def split_flags(sub: ArgumentParser):
        sub.add_argument("--features", default=None, help="Featurize output directory (default: --out-dir)")
        sub.add_argument("--split-seed", type=int, default=None)
        sub.add_argument("--unstratified", action="store_true")

    tr = command("train", "Split 50/50, train and report AUC")
    tr.add_argument("manifest")
    tr.add_argument("--method", choices=list(METHODS), required=True)
    tr.add_argument("--organ", choices=list(ORGAN_MODES), default="both")
    split_flags(tr)
    model_flags(tr)

    ev = command("eval", "ROC of a trained model on its test half")
    ev.add_argument("model")
    ev.add_argument("manifest")
    ev.add_argument("--features", default=None)
    ev.add_argument("--all", dest="all_subjects", action="store_true", help="Score every subject")

    em = command("embed", "t-SNE of a trained model's descriptor space")
    em.add_argument("model")
    em.add_argument("manifest")
    em.add_argument("--features", default=None)
    em.add_argument("--organ", choices=list(ORGAN_MODES), default=None)
    em.add_argument("--per-organ", action="store_true")
    em.add_argument("--perplexity", type=float, default=None)
    em.add_argument("--iterations", type=int, default=None)

    eig = command("eigenfunctions", "Export a surface mesh and its eigenfunctions")
    eig.add_argument("voxels")
    eig.add_argument("--k", type=int, default=None)

    rep = command("report", "AUC table over methods and organ modes")
    rep.add_argument("manifest")
    rep.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
    rep.add_argument("--organs", nargs="+", choices=list(ORGAN_MODES), default=list(ORGAN_MODES))
    split_flags(rep)
    model_flags(rep)
    return parser


def config_updates(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Config overrides from command-line flags; unset flags leave the config alone"""
    updates: Dict[str, Dict[str, Any]] = {}

    def put(section: str, key: str, value):
        if value is not None:
            updates.setdefault(section, {})[key] = value

    if args.seed is not None:
        for section in ("runtime", "cohort", "mspnet", "gbt", "tsne"):
            put(section, "seed", args.seed)
    put("runtime", "threads", args.threads)
    put("runtime", "precision", args.precision)
    put("mspnet", "precision", args.precision)
    put("runtime", "log_level", args.log_level)
    if args.log_json:
        put("runtime", "log_json", True)
    put("spectra", "descriptor_length", getattr(args, "descriptor_length", None))
    put("spectra", "lump", getattr(args, "lump", None))
    points = getattr(args, "points", None)
    put("geometry", "points_per_cloud", points)
    put("mspnet", "points", points)
    put("mspnet", "epochs", getattr(args, "epochs", None))
    put("mspnet", "batch_size", getattr(args, "batch_size", None))
    put("mspnet", "learning_rate", getattr(args, "learning_rate", None))
    put("gbt", "rounds", getattr(args, "rounds", None))
    put("gbt", "max_depth", getattr(args, "max_depth", None))
    put("tsne", "perplexity", getattr(args, "perplexity", None))
    put("tsne", "iterations", getattr(args, "iterations", None))
    return updates


def dispatch(ctx: CommandContext, args: argparse.Namespace):
    stratified = not getattr(args, "unstratified", False)
    if args.command == "gen-cohort":
        return cmd_gen_cohort(ctx, args.count_per_class, args.separation, args.name)
    if args.command == "featurize":
        return cmd_featurize(ctx, args.manifest, args.method, force=args.force)
    if args.command == "train":
        return cmd_train(ctx, args.manifest, args.method, args.organ, args.features, args.split_seed, stratified)
    if args.command == "eval":
        return cmd_eval(ctx, args.model, args.manifest, args.features, args.all_subjects)
    if args.command == "embed":
        return cmd_embed(ctx, args.model, args.manifest, args.features, args.organ, args.per_organ)
    if args.command == "eigenfunctions":
        return cmd_eigenfunctions(ctx, args.voxels, args.k)
    if args.command == "report":
        return cmd_report(ctx, args.manifest, args.features, args.methods, args.organs, args.split_seed, stratified)
    raise UsageError(f"Unknown command {args.command}")


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, configure and run one command; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        load_dotenv()
        config_manager = ConfigManager(args.config)
        config_manager.load_environment_config()
        config_manager.update_config(config_updates(args))
        config = config_manager.get_config()
        configure_logging(config.runtime.log_level, config.runtime.log_json)
        ctx = CommandContext(config=config, out_dir=args.out_dir, argv=argv)
        dispatch(ctx, args)
        return EXIT_OK
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except AbdoshapeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        if e.cause is not None:
            logger.debug(f"Caused by {type(e.cause).__name__}: {e.cause}")
        return e.exit_code


def handle_sigint(signum, frame):
    logger.info("Received interrupt signal")
    raise KeyboardInterrupt()


def main() -> int:
    signal.signal(signal.SIGINT, handle_sigint)
    if not logging.getLogger().handlers:
        configure_logging(os.getenv("LOG_LEVEL", "INFO"))
    try:
        code = run()
    except KeyboardInterrupt:
        logger.info("Interrupted")
        code = 130
    sys.exit(code)


if __name__ == "__main__":
    main()
