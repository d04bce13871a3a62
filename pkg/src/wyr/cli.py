"""
Command-line entry point: `wyr <command> [options]`.

Commands:
    gen-data           generate (or ingest from FASTA) a labelled dataset and split it
    train-explanandum  train the classifier to be explained
    train-explainer    train the Explainer against the frozen classifier
    explain            write masks and renderings for a dataset
    evaluate           classify a test set under every masking condition
    report             regenerate the human-readable report from a stored report.json

Exit codes: 0 on success, 2 on a usage error, 1 when the run fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from wyr.autodiff.tensor import no_grad
from wyr.config import RunConfig, load_config
from wyr.data.dataset import LabeledDataset, LabelAssignment, iter_batches, stratified_split
from wyr.data.fasta import load_fasta
from wyr.data.tokenizer import Vocabulary
from wyr.errors import WyrError
from wyr.evaluation.metrics import argmax_lowest, plot_mask_statistics
from wyr.evaluation.render import gallery, render_mask
from wyr.evaluation.report import (
    GALLERY_HTML,
    REPORT_JSON,
    EvaluationReport,
    evaluate_conditions,
    explain_dataset,
    write_gallery,
)
from wyr.masking import export_masks
from wyr.models.checkpoint import (
    check_vocabulary,
    load_explainer,
    load_explanandum,
    save_checkpoint,
)
from wyr.models.explainer import Explainer
from wyr.models.explanandum import Explanandum
import wyr.synthetic.genomics.planted_motif  # noqa: F401  registers the experiments
from wyr.synthetic.utilities import retrieve
from wyr.training import train_explainer, train_explanandum

logger = logging.getLogger("wyr")

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


def setup_logging(run_dir: Path, level: int = logging.INFO) -> Path:
    """Log to the console and to `run.log` in `run_dir`, replacing earlier handlers."""
    run_dir.mkdir(parents=True, exist_ok=True)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    log_file = run_dir / "run.log"
    file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
    file_handler.setFormatter(formatter)
    logger.addHandler(console)
    logger.addHandler(file_handler)
    logger.setLevel(level)
    logger.propagate = False
    return log_file


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """What a command ran with and what it produced, written as `manifest.json`."""

    command: str
    argv: List[str]
    config: dict
    config_digest: str
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: Optional[str] = None

    def record_outputs(self, run_dir: Path, paths: Sequence[Path]) -> None:
        for path in paths:
            if path is not None and Path(path).is_file():
                self.outputs[str(Path(path).relative_to(run_dir))] = _sha256(Path(path))

    def write(self, run_dir: Path) -> Path:
        self.finished = _now()
        path = run_dir / MANIFEST
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def parse_classes(value: str) -> Tuple[int, ...]:
    """
    `"4x12"` is two heads of 4 and 12 classes; `"10"` is a single head.

    Examples:
        >>> parse_classes("4x12")
        (4, 12)
    """
    try:
        counts = tuple(int(part) for part in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected class counts like 4x12, got {value!r}")
    if not counts or min(counts) < 2:
        raise argparse.ArgumentTypeError(f"every head needs at least 2 classes, got {value!r}")
    return counts


def _load_split(root: Path, name: str) -> LabeledDataset:
    return LabeledDataset.load(root / name)


def _check_heads(model_heads: Sequence[int], data: LabeledDataset, what: str) -> None:
    if tuple(model_heads) != data.head_classes:
        raise ValueError(
            f"{what} has heads {tuple(model_heads)}, the data has {data.head_classes}"
        )


def _load_models(
    args: argparse.Namespace, data: LabeledDataset
) -> Tuple[Explanandum, Explainer]:
    """Load both checkpoints and check them against the data before any compute."""
    explanandum, vocab = load_explanandum(args.explanandum)
    check_vocabulary(data.vocabulary, vocab, f"explanandum checkpoint {args.explanandum}")
    _check_heads(explanandum.head_classes, data, "the explanandum")
    explainer, vocab = load_explainer(args.explainer)
    check_vocabulary(data.vocabulary, vocab, f"explainer checkpoint {args.explainer}")
    _check_heads(explainer.head_classes, data, "the explainer")
    return explanandum.freeze().eval(), explainer


def _training_config(config, args):
    return dataclasses.replace(config, progress=not args.no_progress)


# ---------------------------------------------------------------------------- commands


def cmd_gen_data(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    if args.fasta:
        if not args.labels:
            raise ValueError("--fasta needs --labels")
        data, report = load_fasta(args.fasta, args.labels, Vocabulary(k=args.k))
        manifest.inputs.update(fasta=str(args.fasta), labels=str(args.labels))
        if report.skipped:
            logger.warning("%d FASTA records had no complete label row", report.skipped)
    else:
        experiment = args.experiment or config.data.experiment
        params = dict(config.data.params)
        if args.classes:
            if len(args.classes) == 2:
                params.update(coarse_classes=args.classes[0], fine_classes=args.classes[1])
            elif len(args.classes) == 1:
                params.update(classes=args.classes[0])
            else:
                raise ValueError(f"{experiment} supports one or two heads, got {args.classes}")
        try:
            collection = retrieve(experiment, **params)
        except TypeError as error:
            raise ValueError(f"bad parameters for {experiment}: {error}") from error
        n_per_class = args.n or config.data.n_per_class
        logger.info("generating %s with %d items per class", collection.name, n_per_class)
        data = collection.run(n_per_class=n_per_class, random_state=config.seed)
        manifest.inputs["experiment"] = experiment

    splits = stratified_split(
        data, config.data.test_fraction, config.data.val_fraction, seed=config.seed
    )
    paths = []
    for name, split in zip(SPLITS, splits):
        paths.extend(split.save(args.out / name))
    return paths


def cmd_train_explanandum(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    train, val = _load_split(args.data, "train"), _load_split(args.data, "val")
    manifest.inputs["data"] = str(args.data)
    model_config = config.explanandum_config(
        train.vocabulary.size, train.head_classes, [h.name for h in train.heads]
    )
    model, history = train_explanandum(
        train, val, model_config, _training_config(config.train_explanandum, args)
    )
    model.freeze()
    checkpoint = save_checkpoint(
        args.out / "explanandum.json",
        model,
        train.vocabulary,
        extra={"best_epoch": history.best_epoch, "config_digest": config.digest()},
    )
    return [checkpoint, *history.save(args.out, "explanandum")]


def cmd_train_explainer(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    train, val = _load_split(args.data, "train"), _load_split(args.data, "val")
    explanandum, vocab = load_explanandum(args.explanandum)
    check_vocabulary(train.vocabulary, vocab, f"explanandum checkpoint {args.explanandum}")
    _check_heads(explanandum.head_classes, train, "the explanandum")
    manifest.inputs.update(data=str(args.data), explanandum=str(args.explanandum))

    explainer_config = config.explainer_config(train.vocabulary.size, sum(train.head_classes))
    explainer, history = train_explainer(
        train,
        val,
        explanandum.freeze(),
        explainer_config,
        config.losses.weights(),
        config.losses.bounds(),
        _training_config(config.train_explainer, args),
    )
    checkpoint = save_checkpoint(
        args.out / "explainer.json",
        explainer,
        vocab,
        extra={"best_epoch": history.best_epoch, "config_digest": config.digest()},
    )
    return [checkpoint, *history.save(args.out, "explainer")]


def _predicted_labels(
    explanandum: Explanandum, data: LabeledDataset, batch_size: int
) -> LabelAssignment:
    rows = []
    with no_grad():
        for batch in iter_batches(data, batch_size):
            probs = explanandum.predict_probs(batch.tokens)
            rows.append(np.stack([argmax_lowest(p.data) for p in probs], axis=1))
    return LabelAssignment(np.concatenate(rows), data.head_classes)


def cmd_explain(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    data = LabeledDataset.load(args.data)
    explanandum, explainer = _load_models(args, data)
    manifest.inputs.update(
        data=str(args.data), explanandum=str(args.explanandum), explainer=str(args.explainer)
    )
    batch_size = config.evaluation.batch_size
    labels = None
    if args.target == "predicted":
        labels = _predicted_labels(explanandum, data, batch_size)
    masks = explain_dataset(explainer, data, batch_size, labels)
    threshold = config.evaluation.threshold
    paths = [export_masks(args.out / "masks.jsonl", data.ids, masks, threshold)]

    shown = range(min(args.limit, len(data)))
    if args.format == "html":
        items = [(data.ids[i], data.sequences[i], masks.row(i)) for i in shown]
        path = args.out / "masks.html"
        gallery(items, data.vocabulary, path)
        paths.append(path)
    else:
        lines = [
            f"{data.ids[i]}: {render_mask(data.sequences[i], masks.row(i), data.vocabulary)}"
            for i in shown
        ]
        path = args.out / "masks.ansi.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("\n".join(lines))
        paths.append(path)
    return paths


def cmd_evaluate(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    test = LabeledDataset.load(args.data)
    explanandum, explainer = _load_models(args, test)
    manifest.inputs.update(
        data=str(args.data), explanandum=str(args.explanandum), explainer=str(args.explainer)
    )
    report = evaluate_conditions(explanandum, explainer, test, config.evaluation)
    paths = report.write(args.out)
    gallery_path = args.out / GALLERY_HTML
    if write_gallery(
        explainer,
        test,
        gallery_path,
        config.evaluation.gallery_size,
        config.evaluation.threshold,
        explanandum=explanandum,
    ):
        paths.append(gallery_path)
    if args.plot:
        plot_path = args.out / "statistics.png"
        plot_mask_statistics(report.statistics, plot_path)
        paths.append(plot_path)
    print(report.to_markdown())
    return paths


def cmd_report(args, config: RunConfig, manifest: RunManifest) -> List[Path]:
    report = EvaluationReport.load(args.report)
    manifest.inputs["report"] = str(args.report)
    paths = report.write(args.out)
    if args.plot:
        plot_path = args.out / "statistics.png"
        plot_mask_statistics(report.statistics, plot_path)
        paths.append(plot_path)
    print(report.to_markdown())
    return paths


COMMANDS: Dict[str, Callable[..., List[Path]]] = {
    "gen-data": cmd_gen_data,
    "train-explanandum": cmd_train_explanandum,
    "train-explainer": cmd_train_explainer,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON, TOML or YAML run configuration")
    common.add_argument("--seed", type=int, help="the one seed behind all randomness")
    common.add_argument("--out", type=Path, help="run directory (default runs/<command>)")
    common.add_argument("--threads", type=int, help="evaluation worker threads")
    common.add_argument("--epochs", type=int, help="maximum training epochs")
    common.add_argument("--batch-size", type=int, help="training batch size")
    common.add_argument("--lr", type=float, help="base learning rate")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(
        prog="wyr", description="Learned per-token masks explaining a frozen sequence classifier"
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = commands.add_parser("gen-data", parents=[common], help="generate and split a dataset")
    gen.add_argument("--experiment", help="registered synthetic dataset")
    gen.add_argument("--classes", type=parse_classes, help="class counts per head, e.g. 4x12")
    gen.add_argument("--n", type=int, help="items per finest class")
    gen.add_argument("--fasta", type=Path, help="ingest this FASTA file instead")
    gen.add_argument("--labels", type=Path, help="labels CSV of the FASTA records")
    gen.add_argument("--k", type=int, default=6, help="k-mer length for FASTA ingestion")

    train_f = commands.add_parser(
        "train-explanandum", parents=[common], help="train the classifier"
    )
    train_f.add_argument("--data", type=Path, required=True, help="gen-data output directory")

    train_e = commands.add_parser(
        "train-explainer", parents=[common], help="train the Explainer"
    )
    train_e.add_argument("--data", type=Path, required=True, help="gen-data output directory")
    train_e.add_argument("--explanandum", type=Path, required=True, help="classifier checkpoint")

    for name, text in (("explain", "write masks"), ("evaluate", "evaluate the masks")):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("--data", type=Path, required=True, help="dataset directory")
        sub.add_argument("--explanandum", type=Path, required=True, help="classifier checkpoint")
        sub.add_argument("--explainer", type=Path, required=True, help="Explainer checkpoint")
        if name == "explain":
            sub.add_argument("--format", choices=("ansi", "html"), default="ansi")
            sub.add_argument("--limit", type=int, default=8, help="sequences to render")
            sub.add_argument(
                "--target",
                choices=("label", "predicted"),
                default="label",
                help="explain the true classes or the classifier's predictions",
            )
        else:
            sub.add_argument("--plot", action="store_true", help="also plot mask statistics")

    rep = commands.add_parser("report", parents=[common], help="rewrite a stored report")
    rep.add_argument("--report", type=Path, required=True, help=f"path of a {REPORT_JSON}")
    rep.add_argument("--plot", action="store_true", help="also plot mask statistics")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)

    args.out = args.out or Path("runs") / args.command
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    setup_logging(args.out, level)
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            threads=args.threads,
        )
        manifest = RunManifest(
            command=args.command,
            argv=argv,
            config=config.to_dict(),
            config_digest=config.digest(),
            seed=config.seed,
        )
        if args.config:
            manifest.inputs["config"] = str(args.config)
        paths = COMMANDS[args.command](args, config, manifest)
        manifest.record_outputs(args.out, paths)
        manifest.write(args.out)
    except (WyrError, ValueError, OSError, KeyError, IndexError) as error:
        if args.verbose:
            logger.exception("%s failed", args.command)
        else:
            logger.error("%s failed: %s: %s", args.command, type(error).__name__, error)
        return 1
    logger.info("%s finished; outputs in %s", args.command, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
