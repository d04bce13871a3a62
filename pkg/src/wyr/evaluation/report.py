"""
Evaluation of a trained Explainer against its frozen Explanandum.

Every test item is classified under seven conditions: unmasked, through its target mask, the
mask's complement, the rounded mask and its complement, and from its relevant or irrelevant
chunks classified on their own. Per-head balanced accuracies, mask statistics, timings, an
occlusion baseline and, for synthetic data, agreement with the planted motifs make up the
report.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from wyr.autodiff.tensor import no_grad
from wyr.data.dataset import Batch, LabeledDataset, LabelAssignment, iter_batches
from wyr.data.tokenizer import TokenBatch, TokenSequence
from wyr.evaluation.metrics import (
    CONDITIONS,
    REFERENCE_ACCURACY,
    REFERENCE_HEADS,
    REFERENCE_STATISTICS,
    MaskStatistics,
    argmax_lowest,
    balanced_accuracy,
    mask_statistics,
)
from wyr.evaluation.occlusion import occlusion_additivity, occlusion_importance
from wyr.evaluation.render import Attribution, gallery
from wyr.masking import (
    DEFAULT_THRESHOLD,
    BinaryMask,
    SoftMask,
    complement,
    round_mask,
    segment_chunks,
    target_mask,
)
from wyr.models.explainer import Explainer
from wyr.models.explanandum import Explanandum

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_MARKDOWN = "report.md"
TIMINGS_JSON = "timings.json"
ACCURACY_CSV = "accuracies.csv"
GALLERY_HTML = "gallery.html"
# Lower bounds of the occlusion views in the gallery; None shows every signed score.
ATTRIBUTION_BOUNDS = (None, 0.0, 0.5)
# Marks an item without a chunk of the requested kind.
MISSING = -1


@dataclass(frozen=True)
class EvaluationConfig:
    """
    Attributes:
        threshold: rounding threshold of the binary masks
        batch_size: items per evaluation batch
        threads: worker threads evaluating batches
        histogram_bins: bins of the mask-value histogram
        occlusion_sample: test items scored by the occlusion baseline; 0 skips it
        gallery_size: sequences rendered into the HTML gallery
    """

    threshold: float = DEFAULT_THRESHOLD
    batch_size: int = 64
    threads: int = 1
    histogram_bins: int = 10
    occlusion_sample: int = 32
    gallery_size: int = 8

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.batch_size < 1 or self.threads < 1 or self.histogram_bins < 1:
            raise ValueError("batch_size, threads and histogram_bins must be at least 1")
        if self.occlusion_sample < 0 or self.gallery_size < 0:
            raise ValueError("occlusion_sample and gallery_size must be non-negative")


@dataclass
class EvaluationReport:
    """
    Attributes:
        heads: head names, in order
        head_classes: class count per head
        accuracies: balanced accuracy per condition and head, in [0, 1]
        counts: items contributing to each condition
        statistics: statistics of the target masks
        timings: mean seconds per sequence for mask generation and the occlusion baseline
        oracle: agreement of masks and occlusion scores with planted motifs, when known
        occlusion: summed single-token drops against the drop from occluding everything
    """

    heads: List[str]
    head_classes: List[int]
    accuracies: Dict[str, Dict[str, float]]
    counts: Dict[str, int]
    statistics: MaskStatistics
    timings: Dict[str, float] = field(default_factory=dict)
    oracle: Optional[Dict[str, float]] = None
    occlusion: Optional[Dict[str, float]] = None

    def accuracy_frame(self) -> pd.DataFrame:
        """One row per condition, one column per head, plus the item count."""
        frame = pd.DataFrame.from_dict(self.accuracies, orient="index")[self.heads]
        frame["items"] = pd.Series(self.counts)
        frame.index.name = "condition"
        return frame.loc[[c for c in CONDITIONS if c in self.accuracies]]

    def to_dict(self) -> dict:
        """Everything except the wall-clock timings, which differ between identical runs."""
        return {
            "heads": self.heads,
            "head_classes": self.head_classes,
            "accuracies": self.accuracies,
            "counts": self.counts,
            "statistics": self.statistics.to_dict(),
            "oracle": self.oracle,
            "occlusion": self.occlusion,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvaluationReport":
        return cls(
            heads=list(payload["heads"]),
            head_classes=list(payload["head_classes"]),
            accuracies=payload["accuracies"],
            counts=payload["counts"],
            statistics=MaskStatistics.from_dict(payload["statistics"]),
            timings=payload.get("timings") or {},
            oracle=payload.get("oracle"),
            occlusion=payload.get("occlusion"),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvaluationReport":
        """Read `report.json`, and `timings.json` when it sits next to it."""
        path = Path(path)
        report = cls.from_dict(json.loads(path.read_text()))
        timings = path.with_name(TIMINGS_JSON)
        if timings.is_file():
            report.timings = json.loads(timings.read_text())
        return report

    def to_markdown(self) -> str:
        """Conditions as rows and heads as columns, in percent at full precision."""
        lines = ["# Balanced accuracy", ""]
        lines.append("| condition | " + " | ".join(self.heads) + " | items |")
        lines.append("|---" * (len(self.heads) + 2) + "|")
        for condition, row in self.accuracy_frame().iterrows():
            cells = [repr(100 * float(row[h])) for h in self.heads]
            lines.append(f"| {condition} | " + " | ".join(cells) + f" | {int(row['items'])} |")

        lines += ["", "Corpus-scale reference values (percent):", ""]
        lines.append("| condition | " + " | ".join(REFERENCE_HEADS) + " |")
        lines.append("|---" * (len(REFERENCE_HEADS) + 1) + "|")
        for condition in CONDITIONS:
            cells = [str(v) for v in REFERENCE_ACCURACY[condition]]
            lines.append(f"| {condition} | " + " | ".join(cells) + " |")

        lines += ["", "# Mask statistics", ""]
        lines += ["| statistic | value | reference |", "|---|---|---|"]
        for key, value in self.statistics.summary().items():
            reference = REFERENCE_STATISTICS.get(key, "")
            lines.append(f"| {key} | {value} | {reference} |")
        for title, block in (
            ("Timings (seconds per sequence)", self.timings),
            ("Planted-motif agreement", self.oracle),
            ("Occlusion additivity", self.occlusion),
        ):
            if block:
                lines += ["", f"# {title}", "", "| quantity | value |", "|---|---|"]
                lines += [f"| {key} | {value} |" for key, value in block.items()]
        return "\n".join(lines) + "\n"

    def write(self, directory: Union[str, Path]) -> List[Path]:
        """Write the JSON report, the Markdown tables and the CSV exports into `directory`."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / REPORT_JSON
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        markdown_path = directory / REPORT_MARKDOWN
        markdown_path.write_text(self.to_markdown())
        timings_path = directory / TIMINGS_JSON
        timings_path.write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")
        csv_path = directory / ACCURACY_CSV
        self.accuracy_frame().to_csv(csv_path)
        paths = [json_path, markdown_path, timings_path, csv_path]
        paths += self.statistics.write_csv(directory)
        logger.info("wrote evaluation report to %s", directory)
        return paths


def _head_probs(explanandum: Explanandum, tokens: TokenBatch, mask=None) -> List[np.ndarray]:
    return [p.data for p in explanandum.predict_probs(tokens, mask)]


def _predict(probs: Sequence[np.ndarray]) -> np.ndarray:
    """`(B, H)` per-head argmax, ties to the lowest index."""
    return np.stack([argmax_lowest(p) for p in probs], axis=1)


def chunk_condition_eval(
    explanandum: Explanandum,
    x: TokenSequence,
    binary_mask: BinaryMask,
) -> Dict[bool, Optional[np.ndarray]]:
    """
    Classify every chunk of one item's rounded mask as a standalone sequence and average the
    probabilities per kind of chunk.

    Returns:
        for `True` (relevant chunks) and `False` (irrelevant chunks), the `(H,)` per-head
        prediction from the averaged probabilities, or None when the item has no such chunk
    """
    segmentation = segment_chunks(binary_mask)[0]
    result: Dict[bool, Optional[np.ndarray]] = {}
    for flag in (True, False):
        ranges = segmentation.ranges(flag)
        if not ranges:
            result[flag] = None
            continue
        chunks = [TokenSequence(x.tokens[s:e]) for s, e in ranges]
        probs = _head_probs(explanandum, TokenBatch.from_sequences(chunks))
        averaged = [p.mean(axis=0, keepdims=True) for p in probs]
        result[flag] = _predict(averaged)[0]
    return result


@dataclass
class _BatchResult:
    index: np.ndarray
    predictions: Dict[str, np.ndarray]
    mask: SoftMask
    seconds: float


def _evaluate_batch(
    explanandum: Explanandum,
    explainer: Explainer,
    batch: Batch,
    threshold: float,
) -> _BatchResult:
    # Grad mode is per thread, so each worker switches it off itself.
    with no_grad():
        started = time.perf_counter()
        m = target_mask(explainer.explain(batch.tokens), batch.labels)
        seconds = time.perf_counter() - started
        rounded = round_mask(m, threshold)
        soft_rounded = rounded.as_soft()
        predictions = {
            "unmasked": _predict(_head_probs(explanandum, batch.tokens)),
            "masked": _predict(_head_probs(explanandum, batch.tokens, m)),
            "inverted": _predict(_head_probs(explanandum, batch.tokens, complement(m))),
            "rounded": _predict(_head_probs(explanandum, batch.tokens, soft_rounded)),
            "inverted-rounded": _predict(
                _head_probs(explanandum, batch.tokens, complement(soft_rounded))
            ),
        }
        heads = len(batch.labels.head_classes)
        relevant = np.full((len(batch.index), heads), MISSING)
        irrelevant = np.full((len(batch.index), heads), MISSING)
        for row in range(len(batch.index)):
            single = BinaryMask(rounded.values[row : row + 1], rounded.valid_len[row : row + 1])
            chunks = chunk_condition_eval(explanandum, batch.tokens.sequence(row), single)
            if chunks[True] is not None:
                relevant[row] = chunks[True]
            if chunks[False] is not None:
                irrelevant[row] = chunks[False]
        predictions["relevant-chunks"] = relevant
        predictions["irrelevant-chunks"] = irrelevant
    return _BatchResult(batch.index, predictions, m.detach(), seconds)


def _accuracies(
    predictions: Dict[str, np.ndarray], labels: LabelAssignment, heads: Sequence[str]
) -> Tuple[Dict[str, Dict[str, float]], Dict[str, int]]:
    accuracies, counts = {}, {}
    for condition in CONDITIONS:
        pred = predictions[condition]
        present = (pred != MISSING).all(axis=1)
        counts[condition] = int(present.sum())
        if not present.any():
            logger.warning("no test item has any %s; condition left out", condition)
            continue
        if not present.all():
            logger.warning("%d items lack %s", int((~present).sum()), condition)
        accuracies[condition] = {
            name: balanced_accuracy(
                pred[present, h], labels.indices[present, h], labels.head_classes[h]
            )
            for h, name in enumerate(heads)
        }
    return accuracies, counts


def _oracle(
    data: LabeledDataset, masks: List[np.ndarray], occlusion: Optional[Dict[int, np.ndarray]]
) -> Optional[Dict[str, float]]:
    if not data.has_flags:
        return None
    flags = np.concatenate(data.flags)
    values = np.concatenate(masks)
    if flags.min() == flags.max():
        logger.warning("planted-motif flags are constant; agreement block skipped")
        return None
    block = {
        "mean_mask_motif": float(values[flags == 1].mean()),
        "mean_mask_background": float(values[flags == 0].mean()),
    }
    block["separation"] = block["mean_mask_motif"] - block["mean_mask_background"]
    block["mask_auroc"] = float(roc_auc_score(flags, values))
    if occlusion:
        rows = sorted(occlusion)
        occluded_flags = np.concatenate([data.flags[i] for i in rows])
        if occluded_flags.min() != occluded_flags.max():
            scores = np.concatenate([occlusion[i] for i in rows])
            block["occlusion_auroc"] = float(roc_auc_score(occluded_flags, scores))
    return block


def evaluate_conditions(
    explanandum: Explanandum,
    explainer: Explainer,
    testset: LabeledDataset,
    config: EvaluationConfig = EvaluationConfig(),
) -> EvaluationReport:
    """
    Classify the test set under every masking condition and summarise the masks.

    Batches run on `config.threads` worker threads; results are gathered in batch order, so
    the report does not depend on the thread count.

    Raises:
        ValueError: for an empty test set or heads that disagree between models and data
    """
    if len(testset) == 0:
        raise ValueError("the test set is empty")
    if tuple(explanandum.head_classes) != testset.head_classes:
        raise ValueError(
            f"explanandum heads {explanandum.head_classes} do not match the test set's "
            f"{testset.head_classes}"
        )
    explanandum.eval()
    explainer.eval()
    heads = [h.name for h in testset.heads]
    batches = list(iter_batches(testset, config.batch_size))
    logger.info(
        "evaluating %d items in %d batches on %d threads",
        len(testset), len(batches), config.threads,
    )
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(
            pool.map(
                lambda b: _evaluate_batch(explanandum, explainer, b, config.threshold), batches
            )
        )

    predictions = {c: np.concatenate([r.predictions[c] for r in results]) for c in CONDITIONS}
    accuracies, counts = _accuracies(predictions, testset.label_assignment(), heads)
    masks = [r.mask for r in results]
    rows = [m.row(i) for m in masks for i in range(len(m))]
    statistics = mask_statistics(masks, config.threshold, config.histogram_bins)
    timings = {"explainer_seconds_per_sequence": sum(r.seconds for r in results) / len(testset)}

    occlusion_scores: Dict[int, np.ndarray] = {}
    additivity = None
    if config.occlusion_sample:
        sample = list(range(min(config.occlusion_sample, len(testset))))
        batch = testset.batch(sample)
        started = time.perf_counter()
        scores = occlusion_importance(explanandum, batch.tokens, batch.labels)
        timings["occlusion_seconds_per_sequence"] = (time.perf_counter() - started) / len(sample)
        occlusion_scores = {
            i: scores[row, : batch.tokens.valid_len[row]] for row, i in enumerate(sample)
        }
        drops = occlusion_additivity(explanandum, batch.tokens, batch.labels, scores)
        additivity = {**asdict(drops), "gap": drops.gap}

    report = EvaluationReport(
        heads=heads,
        head_classes=list(testset.head_classes),
        accuracies=accuracies,
        counts=counts,
        statistics=statistics,
        timings=timings,
        oracle=_oracle(testset, rows, occlusion_scores),
        occlusion=additivity,
    )
    for condition, row in accuracies.items():
        logger.info("%s: %s", condition, {k: round(v, 4) for k, v in row.items()})
    return report


def write_gallery(
    explainer: Explainer,
    testset: LabeledDataset,
    path: Union[str, Path],
    size: int,
    threshold: float = DEFAULT_THRESHOLD,
    explanandum: Optional[Explanandum] = None,
) -> Optional[str]:
    """
    Render the first `size` test items, each soft target mask followed by its rounding.

    With `explanandum`, the item's occlusion scores follow at every `ATTRIBUTION_BOUNDS`
    lower bound: all signed scores, positive ones only, and strongly positive ones only.
    """
    size = min(size, len(testset))
    if size == 0:
        return None
    batch = testset.batch(range(size))
    with no_grad():
        masks = target_mask(explainer.explain(batch.tokens), batch.labels).detach()
    rounded = round_mask(masks, threshold)
    scores = None
    if explanandum is not None:
        scores = occlusion_importance(explanandum, batch.tokens, batch.labels)
    items = []
    for i in range(size):
        x = testset.sequences[i]
        labels = ", ".join(
            f"{h.name}={h.class_name(int(c))}" for h, c in zip(testset.heads, testset.labels[i])
        )
        items.append((f"{testset.ids[i]} ({labels})", x, masks.row(i)))
        items.append(
            (f"{testset.ids[i]} rounded", x, BinaryMask([rounded.row(i)], [x.valid_len]))
        )
        if scores is None:
            continue
        for bound in ATTRIBUTION_BOUNDS:
            caption = f"{testset.ids[i]} occlusion"
            if bound is not None:
                caption += f" (scaled score >= {bound})"
            items.append((caption, x, Attribution(scores[i, : x.valid_len], bound)))
    return gallery(items, testset.vocabulary, path)


def explain_dataset(
    explainer: Explainer,
    data: LabeledDataset,
    batch_size: int = 64,
    labels: Optional[LabelAssignment] = None,
) -> SoftMask:
    """
    Target masks of every item, padded to the longest sequence.

    Args:
        labels: the classes to explain; the dataset's labels when omitted
    """
    labels = labels if labels is not None else data.label_assignment()
    width = max([1] + [s.valid_len for s in data.sequences])
    values = np.zeros((len(data), width))
    valid_len = np.array([s.valid_len for s in data.sequences], dtype=np.int64)
    with no_grad():
        for batch in iter_batches(data, batch_size):
            m = target_mask(explainer.explain(batch.tokens), labels[batch.index])
            values[batch.index, : m.length] = m.values.data
    return SoftMask(values, valid_len)
