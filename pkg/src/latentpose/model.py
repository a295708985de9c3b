"""Domain types: candidate grids, labels, skeleton, attribute schema, parameters."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class LatentPoseError(Exception):
    """Base class for all package errors."""


class ConfigError(LatentPoseError):
    pass


class DataError(LatentPoseError):
    pass


class SchemaError(LatentPoseError):
    """Label, schema or block-dimension mismatch."""


class OracleBudgetError(LatentPoseError):
    pass


@dataclass(frozen=True)
class ImageRaster:
    """RGB 8-bit image stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"image must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DataError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise DataError(f"image must be uint8, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int) -> ImageRaster:
        if len(data) != width * height * 3:
            raise DataError("raster byte length does not match width*height*3")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
        return cls(arr.copy())


@dataclass(frozen=True)
class PartCandidate:
    """Oriented box centred at (x, y); ``s`` is the long side, ``theta`` its direction."""

    x: float
    y: float
    s: float
    theta: float

    def __post_init__(self):
        if not self.s > 0:
            raise DataError(f"candidate scale must be positive, got {self.s}")
        if not -math.pi <= self.theta < math.pi:
            raise DataError(f"candidate theta must lie in [-pi, pi), got {self.theta}")


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    t = (theta + math.pi) % (2 * math.pi) - math.pi
    return -math.pi if t >= math.pi else t


@dataclass(frozen=True)
class CandidateGrid:
    parts: tuple[tuple[PartCandidate, ...], ...]
    image_ref: str | None = None
    box_aspect: float = 0.5

    def __post_init__(self):
        parts = tuple(tuple(p) for p in self.parts)
        if not parts:
            raise DataError("candidate grid has no parts")
        for i, cands in enumerate(parts):
            if not cands:
                raise DataError(f"part {i} has an empty candidate list")
        object.__setattr__(self, "parts", parts)

    @property
    def m(self) -> int:
        return len(self.parts)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.parts)

    def coords(self, part: int) -> np.ndarray:
        """(K, 4) array of x, y, s, theta for one part's candidates."""
        return np.array([(c.x, c.y, c.s, c.theta) for c in self.parts[part]], dtype=float)

    def selected(self, pose: PoseAssignment) -> list[PartCandidate]:
        return [self.parts[i][k] for i, k in enumerate(pose.p)]


@dataclass(frozen=True)
class PoseAssignment:
    """Selected candidate per part, 0-based."""

    p: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(int(v) for v in self.p))

    @classmethod
    def from_external(cls, indices: Sequence[int]) -> PoseAssignment:
        return cls(tuple(int(i) - 1 for i in indices))

    def to_external(self) -> list[int]:
        return [i + 1 for i in self.p]


@dataclass(frozen=True)
class AttributeAssignment:
    """Value index per attribute, 0-based."""

    a: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(int(v) for v in self.a))

    @classmethod
    def from_external(cls, values: Sequence[int]) -> AttributeAssignment:
        return cls(tuple(int(v) - 1 for v in values))

    def to_external(self) -> list[int]:
        return [v + 1 for v in self.a]


@dataclass(frozen=True)
class JointLabel:
    pose: PoseAssignment
    attributes: AttributeAssignment | None = None


@dataclass(frozen=True)
class SkeletonTree:
    m: int
    edges: tuple[tuple[int, int], ...]
    names: tuple[str, ...]
    root: int = 0

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "names", tuple(self.names))
        if self.m < 1:
            raise SchemaError("skeleton needs at least one part")
        if len(self.names) != self.m:
            raise SchemaError("one name per part required")
        if not 0 <= self.root < self.m:
            raise SchemaError("root out of range")
        if len(edges) != self.m - 1:
            raise SchemaError(f"a tree over {self.m} parts needs {self.m - 1} edges, got {len(edges)}")
        seen_child = set()
        for a, b in edges:
            if not (0 <= a < self.m and 0 <= b < self.m) or a == b:
                raise SchemaError(f"invalid edge ({a}, {b})")
            if b in seen_child or b == self.root:
                raise SchemaError(f"part {b} has more than one parent or is the root")
            seen_child.add(b)
        if len(self._bfs()) != self.m:
            raise SchemaError("edges do not connect every part to the root")

    def _bfs(self) -> list[int]:
        kids = self.children()
        order, queue = [], deque([self.root])
        seen = {self.root}
        while queue:
            node = queue.popleft()
            order.append(node)
            for c in kids[node]:
                if c not in seen:
                    seen.add(c)
                    queue.append(c)
        return order

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.m)]
        for a, b in self.edges:
            kids[a].append(b)
        return kids

    def parent(self) -> list[int]:
        par = [-1] * self.m
        for a, b in self.edges:
            par[b] = a
        return par

    def topological_order(self) -> list[int]:
        """Root first, every parent before its children."""
        return self._bfs()


PART_NAMES = (
    "torso",
    "head",
    "left_upper_arm",
    "right_upper_arm",
    "left_lower_arm",
    "right_lower_arm",
)


def default_skeleton() -> SkeletonTree:
    """Six-part upper body rooted at the torso."""
    return SkeletonTree(
        m=6,
        edges=((0, 1), (0, 2), (0, 3), (2, 4), (3, 5)),
        names=PART_NAMES,
        root=0,
    )


class FeatureKind(str, enum.Enum):
    COLOR_HIST = "color_hist"
    HOG = "hog"
    LBP = "lbp"


@dataclass(frozen=True)
class Attribute:
    name: str
    parts: tuple[int, ...]
    kind: FeatureKind
    values: int

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(int(p) for p in self.parts))
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        if not self.parts:
            raise SchemaError(f"attribute {self.name} has no parts")
        if len(set(self.parts)) != len(self.parts):
            raise SchemaError(f"attribute {self.name} lists a part twice")


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def n(self) -> int:
        return len(self.attributes)

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(a.values for a in self.attributes)

    def validate(self, tree: SkeletonTree, min_values: int = 2) -> None:
        for attr in self.attributes:
            if attr.values < min_values:
                raise SchemaError(f"attribute {attr.name} needs at least {min_values} values")
            for p in attr.parts:
                if not 0 <= p < tree.m:
                    raise SchemaError(f"attribute {attr.name} references unknown part {p}")

    def part_attributes(self, m: int) -> list[list[int]]:
        """For each part, the attributes that pool over it."""
        out: list[list[int]] = [[] for _ in range(m)]
        for r, attr in enumerate(self.attributes):
            for p in attr.parts:
                out[p].append(r)
        return out


def default_schema() -> AttributeSchema:
    return AttributeSchema(
        (
            Attribute("sleeve", (2, 3, 4, 5), FeatureKind.COLOR_HIST, 3),
            Attribute("neckline", (0, 1), FeatureKind.HOG, 4),
            Attribute("pattern", (0,), FeatureKind.LBP, 5),
        )
    )


def validate_joint_label(label: JointLabel, grid: CandidateGrid, schema: AttributeSchema) -> bool:
    """True iff every pose and attribute index is inside its bounds."""
    p = label.pose.p
    if len(p) != grid.m:
        return False
    for i, k in enumerate(p):
        if not 0 <= k < len(grid.parts[i]):
            return False
    if label.attributes is None:
        return True
    a = label.attributes.a
    if len(a) != schema.n:
        return False
    return all(0 <= v < t for v, t in zip(a, schema.values))


@dataclass(frozen=True)
class TrainingSample:
    grid: CandidateGrid
    pose: PoseAssignment | None
    z: int
    attributes: AttributeAssignment | None = None
    image: ImageRaster | None = None

    def __post_init__(self):
        if self.z not in (1, -1):
            raise DataError(f"polarity must be +1 or -1, got {self.z}")
        if self.z == 1 and self.pose is None:
            raise DataError("positive samples need a ground-truth pose")

    @property
    def label(self) -> JointLabel | None:
        if self.pose is None:
            return None
        return JointLabel(self.pose, self.attributes)


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    t1: int = 5
    t2: int = 3
    epochs: int = 10
    max_iters: int = 50
    margin: float = -1.0
    exclusion_cap: int = 20
    cache_capacity: int = 50_000
    mining: str = "standard"
    project: bool = True

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigError("C must be positive")
        for name in ("t1", "t2", "epochs", "max_iters", "exclusion_cap", "cache_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mining not in ("standard", "literal"):
            raise ConfigError(f"unknown mining mode {self.mining!r}")


@dataclass(frozen=True)
class FeatureLayout:
    """Block layout shared by ModelParams and joint feature vectors.

    ``dims`` maps each FeatureKind to its descriptor length.
    """

    tree: SkeletonTree
    schema: AttributeSchema
    dims: dict = field(hash=False)

    def __post_init__(self):
        dims = {FeatureKind(k): int(v) for k, v in self.dims.items()}
        object.__setattr__(self, "dims", dims)
        for attr in self.schema.attributes:
            if attr.kind not in dims:
                raise SchemaError(f"no descriptor dimension for {attr.kind.value}")
            for p in attr.parts:
                if not 0 <= p < self.tree.m:
                    raise SchemaError(f"attribute {attr.name} references unknown part {p}")
        if FeatureKind.HOG not in dims:
            raise SchemaError("unary blocks need a HOG dimension")

    @property
    def unary_dim(self) -> int:
        return self.dims[FeatureKind.HOG]

    def attr_dim(self, r: int) -> int:
        return self.dims[self.schema.attributes[r].kind]

    def offsets(self) -> dict:
        """Slices into the flat vector keyed by ('unary', i), ('pair', e), ('attr', r)."""
        out, pos = {}, 0
        for i in range(self.tree.m):
            out[("unary", i)] = slice(pos, pos + self.unary_dim)
            pos += self.unary_dim
        for e in range(len(self.tree.edges)):
            out[("pair", e)] = slice(pos, pos + 4)
            pos += 4
        for r, attr in enumerate(self.schema.attributes):
            size = self.attr_dim(r) * attr.values
            out[("attr", r)] = slice(pos, pos + size)
            pos += size
        return out

    @property
    def size(self) -> int:
        sizes = [self.unary_dim * self.tree.m, 4 * len(self.tree.edges)]
        sizes += [self.attr_dim(r) * a.values for r, a in enumerate(self.schema.attributes)]
        return sum(sizes)

    def __eq__(self, other):
        if not isinstance(other, FeatureLayout):
            return NotImplemented
        return self.tree == other.tree and self.schema == other.schema and self.dims == other.dims

    def __hash__(self):
        return hash((self.tree, self.schema, tuple(sorted((k.value, v) for k, v in self.dims.items()))))


class ModelParams:
    """Flat weight vector with block views matching a FeatureLayout."""

    def __init__(self, layout: FeatureLayout, beta: np.ndarray | None = None):
        self.layout = layout
        if beta is None:
            beta = np.zeros(layout.size)
        beta = np.asarray(beta, dtype=np.float64)
        if beta.shape != (layout.size,):
            raise SchemaError(f"parameter length {beta.shape} does not match layout size {layout.size}")
        self.beta = beta
        self._slices = layout.offsets()

    @classmethod
    def zeros(cls, layout: FeatureLayout) -> ModelParams:
        return cls(layout)

    def copy(self) -> ModelParams:
        return ModelParams(self.layout, self.beta.copy())

    def unary(self, i: int) -> np.ndarray:
        return self.beta[self._slices[("unary", i)]]

    def pair(self, e: int) -> np.ndarray:
        return self.beta[self._slices[("pair", e)]]

    def attr(self, r: int) -> np.ndarray:
        """(descriptor dim, T_r) matrix view; column t weighs value t."""
        t = self.layout.schema.attributes[r].values
        return self.beta[self._slices[("attr", r)]].reshape(self.layout.attr_dim(r), t)

    def without_attributes(self) -> ModelParams:
        out = self.copy()
        for r in range(self.layout.schema.n):
            out.beta[self._slices[("attr", r)]] = 0.0
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.beta, other.beta)

    def __repr__(self):
        return f"ModelParams(size={self.beta.size}, norm={np.linalg.norm(self.beta):.4g})"
