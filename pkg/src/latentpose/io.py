"""File formats: JSONL datasets with a schema header, JSON model files, predictions and metrics.

Candidate, pose and attribute indices are 1-based on disk and 0-based in memory.
Parts are referred to by name in headers so no index base is involved there.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .features import FeatureConfig, make_layout
from .model import (
    Attribute,
    AttributeAssignment,
    AttributeSchema,
    CandidateGrid,
    ConfigError,
    DataError,
    FeatureLayout,
    ImageRaster,
    ModelParams,
    PartCandidate,
    PoseAssignment,
    SchemaError,
    SkeletonTree,
    TrainConfig,
    TrainingSample,
)

DATASET_FORMAT = "latentpose-dataset"
MODEL_FORMAT = "latentpose-model"
PREDICTIONS_FORMAT = "latentpose-predictions"
VERSION = 1


def tree_to_dict(tree: SkeletonTree) -> dict:
    names = tree.names
    return {
        "parts": list(names),
        "root": names[tree.root],
        "edges": [[names[a], names[b]] for a, b in tree.edges],
    }


def _part_index(names, name, where) -> int:
    try:
        return names.index(name)
    except ValueError:
        raise SchemaError(f"{where}: unknown part {name!r}") from None


def tree_from_dict(d: dict) -> SkeletonTree:
    try:
        names = list(d["parts"])
        edges = [(_part_index(names, a, "tree"), _part_index(names, b, "tree")) for a, b in d["edges"]]
        root = _part_index(names, d.get("root", names[0]), "tree")
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed skeleton: {exc}") from None
    return SkeletonTree(len(names), tuple(edges), tuple(names), root)


def schema_to_dict(schema: AttributeSchema, tree: SkeletonTree) -> list:
    return [
        {"name": a.name, "parts": [tree.names[p] for p in a.parts], "kind": a.kind.value, "values": a.values}
        for a in schema.attributes
    ]


def schema_from_dict(items: list, tree: SkeletonTree) -> AttributeSchema:
    names = list(tree.names)
    try:
        attrs = [
            Attribute(
                d["name"],
                tuple(_part_index(names, p, f"attribute {d['name']}") for p in d["parts"]),
                d["kind"],
                int(d["values"]),
            )
            for d in items
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed attribute schema: {exc}") from None
    schema = AttributeSchema(tuple(attrs))
    schema.validate(tree, min_values=1)
    return schema


def features_from_dict(d: dict) -> FeatureConfig:
    known = {f.name for f in dataclasses.fields(FeatureConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown feature settings: {', '.join(sorted(unknown))}")
    return FeatureConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown training settings: {', '.join(sorted(unknown))}")
    return TrainConfig(**d)


@dataclass
class DatasetHeader:
    tree: SkeletonTree
    schema: AttributeSchema
    features: FeatureConfig
    box_aspect: float = 0.5

    def layout(self) -> FeatureLayout:
        return make_layout(self.tree, self.schema, self.features)

    def to_dict(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": VERSION,
            "tree": tree_to_dict(self.tree),
            "schema": schema_to_dict(self.schema, self.tree),
            "features": dataclasses.asdict(self.features),
            "box_aspect": self.box_aspect,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DatasetHeader:
        if d.get("format") != DATASET_FORMAT:
            raise DataError(f"not a dataset header (format {d.get('format')!r})")
        if d.get("version") != VERSION:
            raise DataError(f"unsupported dataset version {d.get('version')!r}")
        tree = tree_from_dict(d["tree"])
        return cls(tree, schema_from_dict(d["schema"], tree), features_from_dict(d["features"]), d.get("box_aspect", 0.5))


@dataclass
class Dataset:
    header: DatasetHeader
    samples: list  # TrainingSample
    annotations: list  # AttributeAssignment or None, evaluation only

    @property
    def truth_boxes(self) -> list:
        return [s.grid.selected(s.pose) if s.pose is not None else None for s in self.samples]


def encode_raster(image: ImageRaster) -> dict:
    return {"width": image.width, "height": image.height, "rgb": base64.b64encode(image.pixels.tobytes()).decode()}


def decode_raster(d: dict) -> ImageRaster:
    return ImageRaster.from_bytes(base64.b64decode(d["rgb"]), int(d["width"]), int(d["height"]))


def read_png(path) -> ImageRaster:
    try:
        with Image.open(path) as im:
            return ImageRaster(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def write_png(image: ImageRaster, path) -> None:
    Image.fromarray(image.pixels).save(path, format="PNG")


def _record(sample: TrainingSample, image_field, annotation) -> dict:
    rec = {
        "image": image_field,
        "candidates": [[[c.x, c.y, c.s, c.theta] for c in cands] for cands in sample.grid.parts],
        "z": sample.z,
    }
    if sample.grid.image_ref is not None:
        rec["id"] = sample.grid.image_ref
    if sample.pose is not None:
        rec["pose"] = sample.pose.to_external()
    if annotation is not None:
        rec["attributes"] = annotation.to_external()
    return rec


def write_dataset(path, header: DatasetHeader, samples, annotations=None, image_dir=None) -> None:
    """Write a dataset; images go to PNG files under ``image_dir`` or inline when it is None.

    Image paths are stored relative to the dataset file.
    """
    path = Path(path)
    annotations = annotations if annotations is not None else [None] * len(samples)
    if image_dir is not None:
        image_dir = Path(image_dir)
        image_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(header.to_dict(), sort_keys=True) + "\n")
        for n, (s, ann) in enumerate(zip(samples, annotations)):
            if s.image is None:
                image_field = s.grid.image_ref
            elif image_dir is None:
                image_field = encode_raster(s.image)
            else:
                png = image_dir / f"{s.grid.image_ref or f'img_{n:05d}'}.png"
                write_png(s.image, png)
                image_field = str(png.relative_to(path.parent)) if png.is_relative_to(path.parent) else str(png)
            fh.write(json.dumps(_record(s, image_field, ann), sort_keys=True) + "\n")


def _parse_record(rec: dict, header: DatasetHeader, base: Path, load_images: bool):
    m = header.tree.m
    cands = rec["candidates"]
    if len(cands) != m:
        raise SchemaError(f"record lists {len(cands)} parts, skeleton has {m}")
    parts = [[PartCandidate(*map(float, c)) for c in part] for part in cands]
    image, ref = None, rec.get("id")
    img = rec.get("image")
    if isinstance(img, dict):
        image = decode_raster(img) if load_images else None
    elif isinstance(img, str):
        ref = ref or img
        if load_images:
            p = Path(img)
            image = read_png(p if p.is_absolute() else base / p)
    grid = CandidateGrid(parts, image_ref=ref, box_aspect=header.box_aspect)
    pose = None
    if rec.get("pose") is not None:
        pose = PoseAssignment.from_external(rec["pose"])
        if len(pose.p) != m:
            raise SchemaError(f"pose lists {len(pose.p)} parts, skeleton has {m}")
        for i, k in enumerate(pose.p):
            if not 0 <= k < len(parts[i]):
                raise DataError(f"pose index {k + 1} out of range for part {header.tree.names[i]}")
    ann = None
    if rec.get("attributes") is not None:
        ann = AttributeAssignment.from_external(rec["attributes"])
        if len(ann.a) != header.schema.n:
            raise SchemaError(f"record lists {len(ann.a)} attributes, schema has {header.schema.n}")
        for v, t, attr in zip(ann.a, header.schema.values, header.schema.attributes):
            if not 0 <= v < t:
                raise DataError(f"attribute {attr.name} value {v + 1} outside 1..{t}")
    z = rec.get("z")
    if not isinstance(z, int):
        raise DataError("record needs an integer polarity z")
    return TrainingSample(grid, pose, z, None, image), ann


def read_dataset(path, load_images: bool = True) -> Dataset:
    """Parse a dataset file; every error names its 1-based line number."""
    path = Path(path)
    samples, annotations = [], []
    header = None
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot open dataset {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if header is None:
                    header = DatasetHeader.from_dict(rec)
                    continue
                sample, ann = _parse_record(rec, header, path.parent, load_images)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc!r})") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            samples.append(sample)
            annotations.append(ann)
    if header is None:
        raise DataError(f"{path}: missing dataset header")
    return Dataset(header, samples, annotations)


@dataclass
class ModelFile:
    params: ModelParams
    features: FeatureConfig
    train_config: TrainConfig | None = None
    seed: int | None = None

    @property
    def layout(self) -> FeatureLayout:
        return self.params.layout


def encode_beta(beta: np.ndarray) -> str:
    return base64.b64encode(np.asarray(beta, dtype="<f8").tobytes()).decode()


def decode_beta(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def model_to_json(model: ModelFile) -> str:
    layout = model.layout
    blocks = []
    for key, sl in layout.offsets().items():
        blocks.append({"block": key[0], "index": key[1], "start": sl.start, "stop": sl.stop})
    doc = {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "features": dataclasses.asdict(model.features),
        "tree": tree_to_dict(layout.tree),
        "schema": schema_to_dict(layout.schema, layout.tree),
        "dims": {k.value: v for k, v in layout.dims.items()},
        "size": layout.size,
        "blocks": blocks,
        "beta": encode_beta(model.params.beta),
        "train_config": dataclasses.asdict(model.train_config) if model.train_config else None,
        "seed": model.seed,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def model_from_json(text: str) -> ModelFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON ({exc.msg})") from None
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"not a model file (format {doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    features = features_from_dict(doc["features"])
    tree = tree_from_dict(doc["tree"])
    schema = schema_from_dict(doc["schema"], tree)
    layout = make_layout(tree, schema, features)
    stored = doc.get("dims", {})
    for kind, dim in layout.dims.items():
        if kind.value in stored and stored[kind.value] != dim:
            raise SchemaError(f"{kind.value} dimension: file says {stored[kind.value]}, features give {dim}")
    if doc.get("size") != layout.size:
        raise SchemaError(f"parameter size: file says {doc.get('size')}, layout gives {layout.size}")
    for b in doc.get("blocks", []):
        sl = layout.offsets()[(b["block"], b["index"])]
        if (sl.start, sl.stop) != (b["start"], b["stop"]):
            raise SchemaError(f"{b['block']} block {b['index']}: offsets differ from layout")
    beta = decode_beta(doc["beta"])
    if beta.size != layout.size:
        raise SchemaError(f"parameter size: stored vector has {beta.size}, layout gives {layout.size}")
    tc = doc.get("train_config")
    return ModelFile(
        ModelParams(layout, beta), features, train_config_from_dict(tc) if tc else None, doc.get("seed")
    )


def write_model(path, model: ModelFile) -> None:
    Path(path).write_text(model_to_json(model))


def read_model(path) -> ModelFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    return model_from_json(text)


def check_compatible(model: ModelFile, header: DatasetHeader) -> None:
    """Raise SchemaError naming the first dimension where model and dataset disagree."""
    ml, dl = model.layout, header.layout()
    if ml.tree.m != dl.tree.m:
        raise SchemaError(f"part count: model {ml.tree.m}, dataset {dl.tree.m}")
    if ml.tree != dl.tree:
        raise SchemaError("skeleton edges or part names differ between model and dataset")
    if ml.schema.n != dl.schema.n:
        raise SchemaError(f"attribute count: model {ml.schema.n}, dataset {dl.schema.n}")
    for a, b in zip(ml.schema.attributes, dl.schema.attributes):
        if a.values != b.values:
            raise SchemaError(f"attribute {a.name} values: model {a.values}, dataset {b.values}")
        if a != b:
            raise SchemaError(f"attribute {a.name}: parts or descriptor kind differ")
    for kind, dim in ml.dims.items():
        if dl.dims.get(kind) != dim:
            raise SchemaError(f"{kind.value} dimension: model {dim}, dataset {dl.dims.get(kind)}")
    if model.features != header.features:
        raise SchemaError("feature settings differ between model and dataset")


@dataclass
class Prediction:
    pose: PoseAssignment
    attributes: AttributeAssignment
    score: float
    iterations: int = 1
    converged: bool = True


def write_predictions(path, predictions) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": PREDICTIONS_FORMAT, "version": VERSION}) + "\n")
        for n, p in enumerate(predictions):
            rec = {
                "index": n + 1,
                "pose": p.pose.to_external(),
                "attributes": p.attributes.to_external(),
                "score": p.score,
                "iterations": p.iterations,
                "converged": p.converged,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_predictions(path) -> list[Prediction]:
    out = []
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot open predictions {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if lineno == 1:
                    if rec.get("format") != PREDICTIONS_FORMAT:
                        raise DataError("missing predictions header")
                    continue
                out.append(
                    Prediction(
                        PoseAssignment.from_external(rec["pose"]),
                        AttributeAssignment.from_external(rec["attributes"]),
                        float(rec["score"]),
                        int(rec.get("iterations", 1)),
                        bool(rec.get("converged", True)),
                    )
                )
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except (KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: malformed prediction ({exc})") from None
    return out


def write_metrics(path, rows) -> None:
    """Tab-separated (section, name, value) rows under a header line."""
    with open(path, "w") as fh:
        fh.write("section\tname\tvalue\n")
        for section, name, value in rows:
            text = value if isinstance(value, str) else f"{value:.6g}"
            fh.write(f"{section}\t{name}\t{text}\n")


def read_metrics(path) -> list[tuple[str, str, str]]:
    lines = Path(path).read_text().splitlines()[1:]
    return [tuple(line.split("\t")) for line in lines if line]
