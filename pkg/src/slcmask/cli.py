"""``slcmask`` command line.

Usage::

    slcmask [--config FILE] [--preset NAME] [--workers N] [--section.key=value ...] COMMAND ...

Exit codes: 0 success, 1 receptive-field check failed, 2 usage or I/O error,
3 corrupt input data, 4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Callable, List, Optional, Sequence, Tuple


from . import config as cfgmod
from .ablation import GridFormatError, ablation_csv, ablation_table, evaluate_model, read_grid, run_ablation
from .autodiff.tensor import NumericalError
from .data.corpus import CorpusError, load_image, make_corpus, read_corpus, save_image, write_corpus
from .data.stats import dataset_stats
from .geometry.annotations import (
    AnnotationFormatError,
    instances_to_annotations,
    read_annotations,
    write_annotations,
)
from .geometry.tiling import tile_image
from .metrics import format_table
from .pipeline.checkpoint import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .pipeline.train import TrainingDiverged, train, write_loss_log
from .slc import closed_form_receptive_fields, measured_layer_receptive_fields, slc_layer_receptive_fields

logger = logging.getLogger("slcmask")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MeasureFn = Callable[[int, int], Tuple[int, int, int]]


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slcmask", description="Instance segmentation with a sequence local context block.")
    p.add_argument("--config", help="config file of key = value lines")
    p.add_argument("--preset", help=f"packaged preset ({', '.join(cfgmod.preset_names())})")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for ablation rows (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("out_dir")

    t = sub.add_parser("tile", help="cut object-centred tiles from a large image")
    t.add_argument("image")
    t.add_argument("centers", help="text file with one 'x y' centre per line")
    t.add_argument("out_dir")
    t.add_argument("--annotations", help="image-frame annotation file to remap into the tiles")

    tr = sub.add_parser("train", help="train on the train split of a corpus")
    tr.add_argument("corpus")
    tr.add_argument("out_dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("corpus")
    e.add_argument("checkpoint")
    e.add_argument("--out", help="directory for report.txt and report.csv")

    a = sub.add_parser("ablate", help="train and evaluate every row of an ablation grid")
    a.add_argument("corpus")
    a.add_argument("out_dir")
    a.add_argument("--grid", help="grid file (default: the packaged five-row grid)")

    r = sub.add_parser("rf", help="analytic vs measured receptive fields")
    r.add_argument("r1", type=int)
    r.add_argument("r2", type=int)
    r.add_argument("--fused", default="1,2,3", help="fused layers, e.g. 1,3")
    return p


# ----------------------------------------------------------------- commands
def cmd_synth(cfg: cfgmod.RunConfig, out_dir: str) -> int:
    s = cfg.section("synth")
    samples = make_corpus(cfg.scene(), s["count"], cfg.seed, s["train_fraction"])
    write_corpus(out_dir, samples, cfgmod.config_header(cfg))
    n_train = sum(x.split == "train" for x in samples)
    n_test = len(samples) - n_train
    ratio = f"{n_train / n_test:.2f}:1" if n_test else "n/a"
    print(f"images: {len(samples)}  train:test = {n_train}:{n_test} ({ratio})")
    anns = [a for x in samples for a in x.annotations]
    print(dataset_stats(anns).summary() if anns else "instances: 0")
    return EXIT_OK


def _read_centers(path: str) -> List[Tuple[float, float]]:
    centers = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            try:
                if len(parts) != 2:
                    raise ValueError
                centers.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise CorpusError(f"{path}: line {lineno}: expected 'x y'") from None
    return centers


def cmd_tile(cfg: cfgmod.RunConfig, image_path: str, centers_path: str, out_dir: str, ann_path: Optional[str]) -> int:
    image = load_image(image_path)
    _, h, w = image.shape
    centers = []
    for i, (cx, cy) in enumerate(_read_centers(centers_path)):
        if 0 <= cx <= w and 0 <= cy <= h:
            centers.append((cx, cy))
        else:
            logger.warning("centre %d at (%g, %g) lies outside the %dx%d image; skipped", i, cx, cy, w, h)
    tiles = tile_image((w, h), centers, cfg.tiles())
    anns = []
    if ann_path:
        with open(ann_path) as fh:
            _, insts = read_annotations(fh, ann_path)
        anns = instances_to_annotations(insts, (h, w))
    os.makedirs(out_dir, exist_ok=True)
    instances = []
    for tid, tile in enumerate(tiles):
        x1, y1, x2, y2 = (int(v) for v in tile.as_array())
        save_image(os.path.join(out_dir, f"tile{tid:04d}.png"), image[:, y1:y2, x1:x2])
        for ann in anns:
            b = ann.box
            if b.x1 < x2 and b.x2 > x1 and b.y1 < y2 and b.y2 > y1:
                instances.append((tid, ann))
    with open(os.path.join(out_dir, "tiles.txt"), "w") as fh:
        for line in cfgmod.config_header(cfg):
            fh.write(f"# {line}\n")
        write_annotations(fh, tiles, instances)
    print(f"kept {len(tiles)} of {len(centers)} candidate tiles; {len(instances)} instance records")
    return EXIT_OK


def _split(samples, split: str):
    return [s for s in samples if s.split == split]


def cmd_train(cfg: cfgmod.RunConfig, corpus: str, out_dir: str) -> int:
    samples = read_corpus(corpus, split="train")
    if not samples:
        raise CorpusError(f"{corpus}: no train samples in manifest")
    result = train(samples, cfg.pipeline(), seed=cfg.seed, policy=cfg.augment_policy())
    save_checkpoint(result.model, out_dir, run_config=cfg.as_dict())
    header = cfgmod.config_header(cfg)
    write_loss_log(os.path.join(out_dir, "loss.csv"), result.log, header)
    with open(os.path.join(out_dir, "run.cfg"), "w") as fh:
        fh.write(cfg.dump())
    print("epoch losses: " + " ".join(f"{x:.4f}" for x in result.epoch_losses))
    return EXIT_OK


def _write_report(out_dir: Optional[str], text: str, csv_text: str, cfg: cfgmod.RunConfig, stem: str) -> None:
    if not out_dir:
        return
    os.makedirs(out_dir, exist_ok=True)
    header = "".join(f"# {line}\n" for line in cfgmod.config_header(cfg))
    with open(os.path.join(out_dir, f"{stem}.txt"), "w") as fh:
        fh.write(header + text + "\n")
    with open(os.path.join(out_dir, f"{stem}.csv"), "w") as fh:
        fh.write(header + csv_text)


def cmd_eval(cfg: cfgmod.RunConfig, corpus: str, checkpoint: str, out_dir: Optional[str]) -> int:
    model, manifest = load_checkpoint(checkpoint)
    samples = _split(read_corpus(corpus), cfg["eval.split"])
    label = "SLC" if model.config.slc.enabled else "baseline"
    report = evaluate_model(model, samples, cfg["eval.iou_threshold"], label)
    table = format_table([report])
    print(table)
    row = report.to_row()
    csv_text = ",".join(row) + "\n" + ",".join(str(v) for v in row.values()) + "\n"
    _write_report(out_dir, table, csv_text, cfg, "report")
    return EXIT_OK


def cmd_ablate(cfg: cfgmod.RunConfig, corpus: str, out_dir: str, grid_path: Optional[str], workers: int) -> int:
    if grid_path is None:
        from importlib import resources

        grid_path = os.fspath(resources.files("slcmask").joinpath("presets", "ablation.grid"))
    grid = [cfg.with_overrides(row, grid_path).slc() for row in read_grid(grid_path)]
    samples = read_corpus(corpus)
    rows = run_ablation(
        grid,
        _split(samples, "train"),
        _split(samples, cfg["eval.split"]),
        cfg.pipeline(),
        seed=cfg.seed,
        policy=cfg.augment_policy(),
        iou_threshold=cfg["eval.iou_threshold"],
        workers=workers,
    )
    table = ablation_table(rows)
    print(table)
    _write_report(out_dir, table, ablation_csv(rows), cfg, "ablation")
    return EXIT_OK


def cmd_rf(r1: int, r2: int, fused: str, measure: Optional[MeasureFn] = None) -> int:
    try:
        layers = tuple(int(v) for v in fused.split(","))
    except ValueError:
        raise UsageError(f"--fused expects comma-separated layer numbers, got {fused!r}") from None
    if r1 < 1 or r2 < 1:
        raise UsageError(f"dilation rates must be >= 1, got {r1}, {r2}")
    if not layers or not set(layers) <= {1, 2, 3}:
        raise UsageError(f"fused layers must come from 1, 2, 3, got {fused!r}")
    analytic = slc_layer_receptive_fields(r1, r2)
    closed = closed_form_receptive_fields(r1, r2)
    measured = (measure or measured_layer_receptive_fields)(r1, r2)
    ok = analytic == closed == tuple(measured)
    print(f"{'layer':>5}  {'analytic':>8}  {'measured':>8}")
    for i, (a, m) in enumerate(zip(analytic, measured), start=1):
        flag = "" if a == m and a == closed[i - 1] else "  MISMATCH"
        print(f"{i:>5}  {a:>8}  {m:>8}{flag}")
    fused_a = max(analytic[i - 1] for i in layers)
    fused_m = max(measured[i - 1] for i in layers)
    print(f"fused {','.join(map(str, layers))}: analytic {fused_a}, measured {fused_m}")
    return EXIT_OK if ok and fused_a == fused_m else EXIT_MISMATCH


# --------------------------------------------------------------------- main
def main(argv: Optional[Sequence[str]] = None, measure: Optional[MeasureFn] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    overrides, rest = cfgmod.parse_cli_overrides(argv)
    parser = _parser()
    try:
        args = parser.parse_args(rest)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "rf":
            return cmd_rf(args.r1, args.r2, args.fused, measure)
        cfg = cfgmod.resolve(args.config, overrides, args.preset)
        logger.info("resolved config:\n%s", cfg.dump().rstrip())
        if args.command == "synth":
            return cmd_synth(cfg, args.out_dir)
        if args.command == "tile":
            return cmd_tile(cfg, args.image, args.centers, args.out_dir, args.annotations)
        if args.command == "train":
            return cmd_train(cfg, args.corpus, args.out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, args.corpus, args.checkpoint, args.out)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.corpus, args.out_dir, args.grid, args.workers)
    except (UsageError, cfgmod.ConfigError, GridFormatError) as exc:
        print(f"slcmask: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, CorruptCheckpoint, AnnotationFormatError) as exc:
        print(f"slcmask: corrupt input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NumericalError, FloatingPointError) as exc:
        print(f"slcmask: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"slcmask: {exc}", file=sys.stderr)
        return EXIT_USAGE
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
