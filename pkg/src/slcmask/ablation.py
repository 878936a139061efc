"""Grid runs over context-block variants under one seed and one corpus."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .data.augment import AugmentPolicy
from .data.corpus import Sample
from .metrics import MATCH_IOU, MetricsReport, evaluate
from .pipeline.config import PipelineConfig
from .pipeline.infer import infer
from .pipeline.model import MaskRCNN
from .pipeline.train import TrainingDiverged, train
from .slc import SlcConfig

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ("Method", "layers=2", "layers=3", "cls&reg", "r1&r2", "R(%)", "AP(%)")
CHECK = "x"


class GridFormatError(ValueError):
    pass


def evaluate_model(model: MaskRCNN, samples: Sequence[Sample], iou_threshold: float = MATCH_IOU, label: str = "") -> MetricsReport:
    dets = [infer(model, s.image) for s in samples]
    return evaluate(dets, [s.annotations for s in samples], iou_threshold, label)


@dataclass
class AblationRow:
    slc: SlcConfig
    report: Optional[MetricsReport] = None
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.report is None

    def cells(self) -> Tuple[str, ...]:
        s = self.slc
        if not s.enabled:
            method, layers2, layers3, clsreg, rates = "baseline", "", "", "", "-"
        else:
            method = "SLC"
            layers2 = CHECK if tuple(s.fused_layers) == (1, 3) else ""
            layers3 = CHECK if tuple(s.fused_layers) == (1, 2, 3) else ""
            clsreg = CHECK if s.attach_to_cls_reg else ""
            rates = f"{s.r1},{s.r2}"
        if self.failed:
            metrics = ("failed", "failed")
        else:
            metrics = tuple("n/a" if v is None else f"{v:.2f}" for v in (self.report.recall_mask, self.report.ap_mask))
        return (method, layers2, layers3, clsreg, rates) + metrics


def _run_one(args) -> AblationRow:
    slc, base, train_samples, test_samples, seed, policy, iou_threshold = args
    cfg = replace(base, slc=replace(slc, channels=base.mask_channels))
    try:
        result = train(train_samples, cfg, seed=seed, policy=policy)
        report = evaluate_model(result.model, test_samples, iou_threshold, label=f"r={slc.r1},{slc.r2}")
    except (TrainingDiverged, ValueError, FloatingPointError) as exc:
        logger.warning("ablation row %s failed: %s", slc, exc)
        return AblationRow(slc, None, str(exc))
    return AblationRow(slc, report)


def run_ablation(
    grid: Sequence[SlcConfig],
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample],
    base: PipelineConfig,
    seed: int = 0,
    policy: Optional[AugmentPolicy] = None,
    iou_threshold: float = MATCH_IOU,
    workers: int = 1,
) -> List[AblationRow]:
    """Train and evaluate one model per grid entry; a failing entry yields a failed row."""
    jobs = [(slc, base, train_samples, test_samples, seed, policy, iou_threshold) for slc in grid]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def ablation_table(rows: Sequence[AblationRow]) -> str:
    cells = [r.cells() for r in rows]
    widths = [max(len(x) for x in col) for col in zip(ABLATION_COLUMNS, *cells)]

    def line(values):
        return "  ".join(v.center(w) for v, w in zip(values, widths)).rstrip()

    header = line(ABLATION_COLUMNS)
    return "\n".join([header, "-" * len(header)] + [line(c) for c in cells])


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for r in rows:
        writer.writerow(r.cells())
    return buf.getvalue()


def read_grid(path: str) -> List[Dict[str, str]]:
    """One variant per line as ``slc.key=value`` tokens; ``#`` starts a comment."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise GridFormatError(f"{path}: {exc.strerror}") from None
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        row = {}
        for token in text.split():
            key, sep, value = token.partition("=")
            if not sep or not key.startswith("slc."):
                raise GridFormatError(f"{path}: line {lineno}: expected slc.<key>=<value>, got {token!r}")
            row[key] = value
        rows.append(row)
    return rows
