"""Descriptor computation and the joint feature map J(x, y)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AttributeAssignment,
    CandidateGrid,
    ConfigError,
    DataError,
    FeatureKind,
    FeatureLayout,
    ImageRaster,
    JointLabel,
    PartCandidate,
    PoseAssignment,
    SchemaError,
)

_LUMA = np.array([0.299, 0.587, 0.114])

# clockwise from top-left; bit k of the LBP code is neighbour k
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class FeatureConfig:
    patch_height: int = 64
    patch_width: int = 32
    hog_cell: int = 8
    hog_bins: int = 9
    hog_block: int = 2
    hog_clip: float = 0.2
    color_bins: int = 8
    # divides dx, dy before squaring; 1.0 keeps pixel units
    deformation_scale: float = 1.0

    def __post_init__(self):
        for name in ("patch_height", "patch_width", "hog_cell", "hog_bins", "hog_block", "color_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.deformation_scale > 0:
            raise ConfigError("deformation_scale must be positive")

    @property
    def hog_cells(self) -> tuple[int, int]:
        return self.patch_height // self.hog_cell, self.patch_width // self.hog_cell

    @property
    def hog_dim(self) -> int:
        cy, cx = self.hog_cells
        b = self.hog_block
        return self.hog_bins * b * b * (cy - b + 1) * (cx - b + 1)

    @property
    def lbp_dim(self) -> int:
        return 59

    @property
    def color_dim(self) -> int:
        return self.color_bins**3

    def dims(self) -> dict:
        return {
            FeatureKind.HOG: self.hog_dim,
            FeatureKind.LBP: self.lbp_dim,
            FeatureKind.COLOR_HIST: self.color_dim,
        }

    def check_hog(self) -> None:
        if self.patch_height % self.hog_cell or self.patch_width % self.hog_cell:
            raise ConfigError(
                f"patch {self.patch_height}x{self.patch_width} not divisible by cell {self.hog_cell}"
            )
        cy, cx = self.hog_cells
        if cy < self.hog_block or cx < self.hog_block:
            raise ConfigError("patch has fewer cells than one block")


def make_layout(tree, schema, cfg: FeatureConfig) -> FeatureLayout:
    return FeatureLayout(tree, schema, cfg.dims())


def _sample_points(c: PartCandidate, cfg: FeatureConfig, aspect: float):
    h, w = cfg.patch_height, cfg.patch_width
    a = ((np.arange(h) + 0.5) / h - 0.5) * c.s
    b = ((np.arange(w) + 0.5) / w - 0.5) * (c.s * aspect)
    ux, uy = math.cos(c.theta), math.sin(c.theta)
    xs = c.x + a[:, None] * ux - b[None, :] * uy
    ys = c.y + a[:, None] * uy + b[None, :] * ux
    return xs, ys


def bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Edge-clamped bilinear lookup; pixel centres sit on integer coordinates."""
    hgt, wid = pixels.shape[:2]
    xs = np.clip(xs, 0.0, wid - 1)
    ys = np.clip(ys, 0.0, hgt - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, wid - 1)
    y1 = np.minimum(y0 + 1, hgt - 1)
    wx = (xs - x0)[..., None]
    wy = (ys - y0)[..., None]
    top = pixels[y0, x0] * (1 - wx) + pixels[y0, x1] * wx
    bot = pixels[y1, x0] * (1 - wx) + pixels[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def extract_patch(
    image: ImageRaster, c: PartCandidate, cfg: FeatureConfig, aspect: float = 0.5
) -> np.ndarray:
    """Resample the oriented s x (aspect*s) box to a (patch_height, patch_width, 3) patch in [0, 1].

    Rows run along the box's long axis (direction theta).
    """
    if not (0 <= c.x <= image.width - 1 and 0 <= c.y <= image.height - 1):
        raise DataError(f"candidate centre ({c.x}, {c.y}) lies outside the {image.width}x{image.height} image")
    xs, ys = _sample_points(c, cfg, aspect)
    px = image.pixels.astype(np.float64) / 255.0
    return np.clip(bilinear(px, xs, ys), 0.0, 1.0)


def to_gray(patch: np.ndarray) -> np.ndarray:
    if patch.ndim == 2:
        return patch
    return patch @ _LUMA


def hog_cells(gray: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Per-cell unsigned orientation histograms, shape (cells_y, cells_x, bins)."""
    g = np.pad(gray, 1, mode="edge")
    gx = g[1:-1, 2:] - g[1:-1, :-2]
    gy = g[2:, 1:-1] - g[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = (ang // (180.0 / cfg.hog_bins)).astype(int) % cfg.hog_bins
    hgt, wid = gray.shape
    cell = cfg.hog_cell
    cy, cx = hgt // cell, wid // cell
    cell_idx = (np.arange(hgt) // cell)[:, None] * cx + (np.arange(wid) // cell)[None, :]
    flat = (cell_idx * cfg.hog_bins + bins).ravel()
    hist = np.bincount(flat, weights=mag.ravel(), minlength=cy * cx * cfg.hog_bins)
    return hist.reshape(cy, cx, cfg.hog_bins)


def _l2(v: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def hog_descriptor(patch: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Block-normalised (L2-Hys) HOG; zero-gradient blocks map to zeros."""
    gray = to_gray(np.asarray(patch, dtype=np.float64))
    if gray.shape != (cfg.patch_height, cfg.patch_width):
        raise ConfigError(f"patch shape {gray.shape} differs from configured patch size")
    cfg.check_hog()
    cells = hog_cells(gray, cfg)
    b = cfg.hog_block
    cy, cx, nb = cells.shape
    ny, nx = cy - b + 1, cx - b + 1
    blocks = np.empty((ny, nx, b * b * nb))
    for by in range(ny):
        for bx in range(nx):
            blocks[by, bx] = cells[by : by + b, bx : bx + b].ravel()
    blocks = _l2(blocks)
    blocks = np.minimum(blocks, cfg.hog_clip)
    blocks = _l2(blocks)
    return blocks.ravel()


def _uniform_lut() -> np.ndarray:
    lut = np.full(256, 58, dtype=np.int64)
    nxt = 0
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        transitions = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
        if transitions <= 2:
            lut[code] = nxt
            nxt += 1
    assert nxt == 58
    return lut


UNIFORM_LUT = _uniform_lut()
LBP_CATCH_ALL = 58


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-neighbour radius-1 codes; bit set when the neighbour is strictly brighter. Edges clamp."""
    g = np.pad(gray, 1, mode="edge")
    hgt, wid = gray.shape
    code = np.zeros((hgt, wid), dtype=np.int64)
    for k, (dy, dx) in enumerate(_LBP_OFFSETS):
        nb = g[1 + dy : 1 + dy + hgt, 1 + dx : 1 + dx + wid]
        code |= (nb > gray).astype(np.int64) << k
    return code


def lbp_descriptor(patch: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    """L1-normalised 59-bin uniform LBP histogram; bin 58 collects non-uniform codes."""
    gray = to_gray(np.asarray(patch, dtype=np.float64))
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ConfigError("LBP needs a patch of at least 3x3")
    hist = np.bincount(UNIFORM_LUT[lbp_codes(gray)].ravel(), minlength=59).astype(np.float64)
    return hist / hist.sum()


def color_histogram(patch: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Joint RGB histogram with color_bins per channel, L1-normalised."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ConfigError("color histogram needs an RGB patch")
    nb = cfg.color_bins
    q = np.minimum((patch * nb).astype(int), nb - 1)
    idx = (q[..., 0] * nb + q[..., 1]) * nb + q[..., 2]
    hist = np.bincount(idx.ravel(), minlength=nb**3).astype(np.float64)
    return hist / hist.sum()


def deformation_feature(ci: PartCandidate, cj: PartCandidate, scale: float = 1.0) -> np.ndarray:
    """[dx, dy, dx^2, dy^2] of cj relative to ci, with dx, dy divided by ``scale`` first."""
    dx = (cj.x - ci.x) / scale
    dy = (cj.y - ci.y) / scale
    return np.array([dx, dy, dx * dx, dy * dy])


def indicator(value: int, count: int) -> np.ndarray:
    """One-hot vector of length ``count`` for the 0-based ``value``."""
    if not 0 <= value < count:
        raise SchemaError(f"attribute value {value} outside 0..{count - 1}")
    out = np.zeros(count)
    out[value] = 1.0
    return out


_DESCRIPTORS = {
    FeatureKind.HOG: hog_descriptor,
    FeatureKind.LBP: lbp_descriptor,
    FeatureKind.COLOR_HIST: color_histogram,
}


def describe(patch: np.ndarray, kind: FeatureKind, cfg: FeatureConfig) -> np.ndarray:
    return _DESCRIPTORS[FeatureKind(kind)](patch, cfg)


@dataclass(frozen=True)
class FeatureBank:
    """Per-candidate descriptors for one input grid.

    ``descriptors[(kind, part)]`` is a (K_part, dim) array. Built from an image
    by :meth:`from_image`, or directly from arrays for synthetic instances.
    """

    grid: CandidateGrid
    descriptors: dict = field(hash=False)
    deformation_scale: float = 1.0

    @classmethod
    def from_image(cls, image: ImageRaster, grid: CandidateGrid, layout: FeatureLayout, cfg: FeatureConfig):
        needed = {(FeatureKind.HOG, i) for i in range(grid.m)}
        for attr in layout.schema.attributes:
            needed.update((attr.kind, p) for p in attr.parts)
        if grid.m != layout.tree.m:
            raise SchemaError(f"grid has {grid.m} parts but the skeleton has {layout.tree.m}")
        by_part: dict[int, list] = {}
        for kind, part in needed:
            by_part.setdefault(part, []).append(kind)
        desc = {}
        for part, kinds in by_part.items():
            rows = {k: [] for k in kinds}
            for c in grid.parts[part]:
                patch = extract_patch(image, c, cfg, grid.box_aspect)
                for k in kinds:
                    rows[k].append(describe(patch, k, cfg))
            for k in kinds:
                desc[(k, part)] = np.array(rows[k])
        return cls(grid, desc, cfg.deformation_scale)

    def descriptor(self, kind: FeatureKind, part: int) -> np.ndarray:
        try:
            return self.descriptors[(FeatureKind(kind), part)]
        except KeyError:
            raise SchemaError(f"no {FeatureKind(kind).value} descriptors for part {part}") from None

    def pair_features(self, parent: int, child: int) -> np.ndarray:
        """(K_parent, K_child, 4) deformation features for every candidate pair."""
        cp = self.grid.coords(parent)
        cc = self.grid.coords(child)
        dx = (cc[None, :, 0] - cp[:, None, 0]) / self.deformation_scale
        dy = (cc[None, :, 1] - cp[:, None, 1]) / self.deformation_scale
        return np.stack([dx, dy, dx * dx, dy * dy], axis=-1)

    def check(self, layout: FeatureLayout) -> None:
        if self.grid.m != layout.tree.m:
            raise SchemaError(f"grid has {self.grid.m} parts but the skeleton has {layout.tree.m}")
        sizes = self.grid.sizes()
        for (kind, part), arr in self.descriptors.items():
            if arr.shape != (sizes[part], layout.dims[kind]):
                raise SchemaError(
                    f"{kind.value} descriptors of part {part} have shape {arr.shape}, "
                    f"expected ({sizes[part]}, {layout.dims[kind]})"
                )


def attribute_part_descriptor(bank: FeatureBank, pose: PoseAssignment, r: int, layout: FeatureLayout) -> np.ndarray:
    """Mean of attribute r's base descriptor over its parts' selected candidates."""
    attr = layout.schema.attributes[r]
    rows = [bank.descriptor(attr.kind, i)[pose.p[i]] for i in attr.parts]
    return np.mean(rows, axis=0)


def pose_attribute_feature(
    bank: FeatureBank, pose: PoseAssignment, attributes: AttributeAssignment, layout: FeatureLayout
) -> list[np.ndarray]:
    """Per-attribute vectorised outer products F_r(P_r) (x) L(a_r), each of length dim * T_r."""
    blocks = []
    for r, attr in enumerate(layout.schema.attributes):
        f = attribute_part_descriptor(bank, pose, r, layout)
        blocks.append(np.outer(f, indicator(attributes.a[r], attr.values)).ravel())
    return blocks


def pose_feature(bank: FeatureBank, pose: PoseAssignment, layout: FeatureLayout) -> tuple[list, list]:
    """Unary HOG rows per part and deformation 4-vectors per edge."""
    unary = [bank.descriptor(FeatureKind.HOG, i)[pose.p[i]] for i in range(layout.tree.m)]
    sel = bank.grid.selected(pose)
    pair = [deformation_feature(sel[a], sel[b], bank.deformation_scale) for a, b in layout.tree.edges]
    return unary, pair


def joint_feature(bank: FeatureBank, label: JointLabel, layout: FeatureLayout) -> np.ndarray:
    if label.attributes is None:
        raise SchemaError("joint feature needs attribute values")
    unary, pair = pose_feature(bank, label.pose, layout)
    attr = pose_attribute_feature(bank, label.pose, label.attributes, layout)
    return np.concatenate(unary + pair + attr)
