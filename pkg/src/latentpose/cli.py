"""Command-line entry point: synth, train, infer, eval, oracle-check, overlay.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 dimension or schema mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .evaluate import clustering_score, pcp
from .features import FeatureBank
from .inference import brute_force_joint, infer_joint
from .learning import train
from .model import (
    ConfigError,
    DataError,
    LatentPoseError,
    OracleBudgetError,
    SchemaError,
    default_schema,
    default_skeleton,
)
from .plotting import objective_curve, pcp_bars, render_overlay
from .synth import SynthConfig, generate, synth_feature_config

log = logging.getLogger("latentpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SCHEMA = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        width=args.width,
        height=args.height,
        candidates=args.candidates,
        positives=args.positives,
        negatives=args.negatives,
        rho=args.rho,
        noise=args.noise,
        seed=args.seed,
    )
    data = generate(cfg)
    out = Path(args.out)
    header = io.DatasetHeader(default_skeleton(), default_schema(), synth_feature_config())
    image_dir = None if args.inline else out.parent / f"{out.stem}_images"
    io.write_dataset(out, header, data.samples, data.hidden, image_dir)
    print(f"wrote {len(data.samples)} records to {out}")
    return EXIT_OK


def _iteration_rows(report):
    yield "relabel\titeration\tobjective\tlabel_changes\tmined\tcache_size\tevicted\twall_time"
    for r in report.records:
        yield (
            f"{r.relabel}\t{r.iteration}\t{r.objective:.10g}\t{r.label_changes}\t{r.mined}"
            f"\t{r.cache_size}\t{r.evicted}\t{r.wall_time:.3f}"
        )


def cmd_train(args) -> int:
    settings = _load_config(args.config)
    if args.max_iters is not None:
        settings["max_iters"] = args.max_iters
    if args.mining is not None:
        settings["mining"] = args.mining
    cfg = io.train_config_from_dict(settings)
    data = io.read_dataset(args.dataset)
    n_pos = sum(s.z == 1 for s in data.samples)
    if n_pos == 0 or n_pos == len(data.samples):
        raise ConfigError("training needs at least one positive and one negative record")
    layout = data.header.layout()
    params, report = train(data.samples, layout, cfg, data.header.features, seed=args.seed)
    io.write_model(args.out, io.ModelFile(params, data.header.features, cfg, args.seed))
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".report.tsv")
    report_path.write_text("\n".join(_iteration_rows(report)) + "\n")
    objective_curve(report.records, report_path.with_suffix(".png"))
    print(f"wrote model to {args.out} and report to {report_path}")
    return EXIT_OK


def _banks(data, layout):
    for s in data.samples:
        if s.image is None:
            raise DataError(f"record {s.grid.image_ref} has no image")
        yield FeatureBank.from_image(s.image, s.grid, layout, data.header.features)


def cmd_infer(args) -> int:
    model = io.read_model(args.model)
    data = io.read_dataset(args.dataset)
    io.check_compatible(model, data.header)
    preds = []
    for bank in _banks(data, model.layout):
        res = infer_joint(bank, model.params, args.max_iters)
        preds.append(io.Prediction(res.label.pose, res.label.attributes, res.score, res.iterations, res.converged))
    io.write_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def evaluate_predictions(preds, data, threshold=0.5, variant="pairwise"):
    """Metric rows (section, name, value) and the per-part PCP in percent."""
    if len(preds) != len(data.samples):
        raise DataError(f"{len(preds)} predictions for {len(data.samples)} dataset records")
    names = data.header.tree.names
    rows, rates = [], None
    with_pose = [n for n, s in enumerate(data.samples) if s.pose is not None]
    if with_pose:
        pred_boxes = [data.samples[n].grid.selected(preds[n].pose) for n in with_pose]
        true_boxes = [data.samples[n].grid.selected(data.samples[n].pose) for n in with_pose]
        res = pcp(pred_boxes, true_boxes, threshold)
        rates = [100.0 * r for r in res.per_part]
        rows += [("pcp", name, rate) for name, rate in zip(names, rates)]
        rows += [("pcp_group", g, 100.0 * v) for g, v in res.groups.items()]
        rows.append(("pcp", "total", 100.0 * res.total))
    else:
        rows.append(("pcp", "total", "unavailable"))
    annotated = [n for n, a in enumerate(data.annotations) if a is not None]
    if len(annotated) >= 2:
        predicted = [preds[n].attributes.a for n in annotated]
        score = clustering_score(predicted, [data.annotations[n].a for n in annotated], variant)
        rows += [("f1", a.name, v) for a, v in zip(data.header.schema.attributes, score.per_attribute)]
        rows.append(("f1", "total", score.total))
    else:
        rows.append(("f1", "total", "unavailable"))
    return rows, rates


def cmd_eval(args) -> int:
    preds = io.read_predictions(args.predictions)
    data = io.read_dataset(args.dataset, load_images=False)
    rows, rates = evaluate_predictions(preds, data, args.pcp_threshold, args.f1_variant)
    io.write_metrics(args.out, rows)
    if rates is not None:
        pcp_bars(data.header.tree.names, rates, Path(args.out).with_suffix(".png"))
    for section, name, value in rows:
        print(f"{section}\t{name}\t{value if isinstance(value, str) else f'{value:.4g}'}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    model = io.read_model(args.model)
    data = io.read_dataset(args.dataset)
    io.check_compatible(model, data.header)
    checked = exact = skipped = 0
    gaps = []
    for bank in _banks(data, model.layout):
        try:
            ref = brute_force_joint(bank, model.params, args.budget)
        except OracleBudgetError:
            skipped += 1
            continue
        got = infer_joint(bank, model.params, args.max_iters)
        checked += 1
        gap = ref.score - got.score
        gaps.append(gap)
        exact += gap <= 1e-9
    if checked == 0:
        raise DataError(f"no record fits the oracle budget ({skipped} skipped)")
    print(f"checked\t{checked}\nskipped\t{skipped}\nrecovered\t{exact}")
    print(f"recovery_rate\t{exact / checked:.4f}\nmax_gap\t{max(gaps):.6g}")
    return EXIT_OK


def cmd_overlay(args) -> int:
    data = io.read_dataset(args.dataset)
    n = args.index - 1
    if not 0 <= n < len(data.samples):
        raise DataError(f"record {args.index} outside 1..{len(data.samples)}")
    sample = data.samples[n]
    if sample.image is None:
        raise DataError(f"record {args.index} has no image")
    if args.predictions:
        preds = io.read_predictions(args.predictions)
        if len(preds) != len(data.samples):
            raise DataError(f"{len(preds)} predictions for {len(data.samples)} dataset records")
        pose = preds[n].pose
    elif sample.pose is not None:
        pose = sample.pose
    else:
        raise DataError("nothing to draw: no predictions given and the record has no pose")
    boxes = sample.grid.selected(pose)
    verdicts = None
    if args.predictions and sample.pose is not None:
        truth = sample.grid.selected(sample.pose)
        verdicts = pcp([boxes], [truth], args.pcp_threshold).verdicts[0]
    image, _ = render_overlay(sample.image, boxes, verdicts, sample.grid.box_aspect)
    io.write_png(image, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentpose", description="Pose estimation with latent clothing attributes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--positives", type=int, default=50)
    p.add_argument("--negatives", type=int, default=25)
    p.add_argument("--candidates", type=int, default=40)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--inline", action="store_true", help="embed rasters instead of writing PNG files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="iteration report (TSV); default next to the model")
    p.add_argument("--config", help="JSON object of training settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--mining", choices=("standard", "literal"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict poses and attributes")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--max-iters", type=int, default=50)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="metrics file (TSV)")
    p.add_argument("--pcp-threshold", type=float, default=0.5)
    p.add_argument("--f1-variant", choices=("pairwise", "matched"), default="pairwise")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="compare joint inference with exhaustive search")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--budget", type=float, default=1e6, help="largest label space to enumerate")
    p.add_argument("--max-iters", type=int, default=50)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("overlay", help="draw a pose onto its image")
    p.add_argument("dataset")
    p.add_argument("--index", type=int, default=1, help="1-based record number")
    p.add_argument("--predictions", help="predictions file; parts are checked against the record's pose")
    p.add_argument("--out", required=True, help="PNG to write")
    p.add_argument("--pcp-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (DataError, LatentPoseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
