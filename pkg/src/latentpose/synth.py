"""Deterministic synthetic people with planted clothing attributes and decoy candidate grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureConfig
from .model import (
    AttributeAssignment,
    CandidateGrid,
    ConfigError,
    ImageRaster,
    PartCandidate,
    PoseAssignment,
    TrainingSample,
    default_schema,
    default_skeleton,
    wrap_angle,
)

# nominal long-side lengths per part, in pixels
PART_LENGTHS = (44.0, 22.0, 28.0, 28.0, 26.0, 26.0)

# centred in the 8-level color histogram bins so jitter rarely crosses a bin edge
SLEEVE_COLORS = np.array([(208, 48, 48), (48, 176, 80), (48, 80, 208)], dtype=float)
SHIRT_COLORS = np.array([(225, 205, 90), (95, 200, 205), (215, 140, 190), (170, 170, 90)], dtype=float)
SKIN = np.array((225, 175, 140), dtype=float)
PATTERNS = ("stripes", "dots", "checker", "solid", "noise")
NECKLINES = ("v", "round", "square", "boat")


@dataclass(frozen=True)
class SynthConfig:
    width: int = 128
    height: int = 128
    candidates: int = 40
    positives: int = 50
    negatives: int = 25
    rho: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("width", "height", "candidates", "positives", "negatives"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")


def synth_feature_config() -> FeatureConfig:
    """Feature settings matching the generator's scale: deformations in units of 16 px."""
    return FeatureConfig(deformation_scale=16.0)


@dataclass
class SynthDataset:
    samples: list  # TrainingSample, positives first
    hidden: list  # AttributeAssignment for positives, None for negatives
    truth: list  # ground-truth PartCandidate list for positives, None for negatives
    appearance: list  # rendered appearance classes (differs from hidden with prob 1 - rho)


def _frame(shape):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    return xs, ys


def _local(xs, ys, c: PartCandidate):
    """Coordinates along (u) and across (v) the box axis."""
    ux, uy = math.cos(c.theta), math.sin(c.theta)
    dx, dy = xs - c.x, ys - c.y
    return dx * ux + dy * uy, -dx * uy + dy * ux


def _box_mask(xs, ys, c: PartCandidate, aspect=0.5):
    u, v = _local(xs, ys, c)
    return (np.abs(u) <= c.s / 2) & (np.abs(v) <= c.s * aspect / 2)


def _background(rng, shape, noise):
    base = rng.uniform(0.35, 0.65) * 255
    coarse = rng.normal(0, 1, (shape[0] // 8 + 2, shape[1] // 8 + 2))
    up = np.kron(coarse, np.ones((8, 8)))[: shape[0], : shape[1]]
    gray = base + 16 * noise * up + 6 * noise * rng.normal(0, 1, shape)
    tint = rng.uniform(-10, 10, 3)
    return np.clip(gray[..., None] + tint, 0, 255)


def _pattern_texture(kind, u, v, base, rng):
    dark = base * 0.35
    out = np.broadcast_to(base, u.shape + (3,)).copy()
    if kind == "stripes":
        on = (np.floor(u / 3.0) % 2) == 0
    elif kind == "dots":
        on = ((np.mod(u, 7.0) - 3.5) ** 2 + (np.mod(v, 7.0) - 3.5) ** 2) <= 4.0
    elif kind == "checker":
        on = ((np.floor(u / 5.0) + np.floor(v / 5.0)) % 2) == 0
    elif kind == "solid":
        on = np.zeros(u.shape, dtype=bool)
    else:
        on = rng.random(u.shape) < 0.5
        out = out * rng.uniform(0.55, 1.0, u.shape)[..., None]
    out[on] = dark
    return out


def _neck_mask(kind, u, v, length):
    """Skin wedge at the top (u near -length/2) of the torso."""
    top = u + length / 2
    if kind == "v":
        return (top >= 0) & (top <= 20) & (np.abs(v) <= (20 - top) * 0.5)
    if kind == "round":
        return (top**2 + v**2) <= 10.0**2
    if kind == "square":
        return (top >= 0) & (top <= 14) & (np.abs(v) <= 7)
    return (top >= 0) & (top <= 4) & (np.abs(v) <= 11)


def _paint(img, mask, color):
    img[mask] = color if np.ndim(color) == 1 else color[mask]


def _sample_pose(rng, cfg: SynthConfig) -> list[PartCandidate]:
    j = cfg.noise
    cx = cfg.width / 2 + rng.normal(0, 4 * j)
    cy = cfg.height / 2 + 4 + rng.normal(0, 4 * j)
    lengths = [L * math.exp(rng.normal(0, 0.06 * j)) for L in PART_LENGTHS]
    t_theta = math.pi / 2 + rng.normal(0, 0.1 * j)
    torso = PartCandidate(cx, cy, lengths[0], wrap_angle(t_theta))
    ux, uy = math.cos(t_theta), math.sin(t_theta)
    top = (cx - ux * lengths[0] / 2, cy - uy * lengths[0] / 2)
    h_theta = t_theta + rng.normal(0, 0.1 * j)
    head = PartCandidate(
        top[0] - math.cos(h_theta) * lengths[1] / 2,
        top[1] - math.sin(h_theta) * lengths[1] / 2,
        lengths[1],
        wrap_angle(h_theta),
    )
    parts = [torso, head]
    # perpendicular to the torso axis, pointing to image-left for side -1
    px, py = -uy, ux
    uppers = []
    for side in (-1, 1):
        shoulder = (top[0] + side * px * lengths[0] * 0.45 + ux * 3, top[1] + side * py * lengths[0] * 0.45 + uy * 3)
        spread = 0.9 + 0.6 * j * rng.random()
        th = t_theta + (-side) * spread
        L = lengths[2]
        uppers.append(
            PartCandidate(shoulder[0] + math.cos(th) * L / 2, shoulder[1] + math.sin(th) * L / 2, L, wrap_angle(th))
        )
    parts += uppers
    for side, up in zip((-1, 1), uppers):
        elbow = (up.x + math.cos(up.theta) * up.s / 2, up.y + math.sin(up.theta) * up.s / 2)
        bend = rng.normal(0, 0.35 * j) + (-side) * 0.3
        th = up.theta + bend
        L = lengths[4]
        parts.append(PartCandidate(elbow[0] + math.cos(th) * L / 2, elbow[1] + math.sin(th) * L / 2, L, wrap_angle(th)))
    return [_clamp(p, cfg) for p in parts]


def _clamp(c: PartCandidate, cfg: SynthConfig) -> PartCandidate:
    return PartCandidate(
        float(np.clip(c.x, 0, cfg.width - 1)), float(np.clip(c.y, 0, cfg.height - 1)), c.s, c.theta
    )


def _decoy(rng, true: PartCandidate, cfg: SynthConfig, min_shift: float) -> PartCandidate:
    if rng.random() < 0.2:
        x, y = rng.uniform(0, cfg.width - 1), rng.uniform(0, cfg.height - 1)
        th = rng.uniform(-math.pi, math.pi)
    else:
        spread = true.s * (0.25 + 0.35 * cfg.noise)
        while True:
            dx, dy = rng.normal(0, spread, 2)
            if math.hypot(dx, dy) >= min_shift:
                break
        x, y = true.x + dx, true.y + dy
        th = true.theta + rng.normal(0, 0.35 + 0.2 * cfg.noise)
    s = true.s * math.exp(rng.normal(0, 0.08))
    c = PartCandidate(float(np.clip(x, 0, cfg.width - 1)), float(np.clip(y, 0, cfg.height - 1)), s, wrap_angle(th))
    if math.hypot(c.x - true.x, c.y - true.y) < min_shift:
        # clipping pulled it back onto the truth; push across the image instead
        c = PartCandidate(float((true.x + cfg.width / 2) % (cfg.width - 1)), c.y, s, c.theta)
    return c


def _render_person(rng, cfg: SynthConfig, parts, appearance) -> np.ndarray:
    shape = (cfg.height, cfg.width)
    img = _background(rng, shape, cfg.noise)
    xs, ys = _frame(shape)
    sleeve, neck, pattern = appearance
    jitter = lambda: rng.normal(0, 5 * cfg.noise, 3)  # noqa: E731
    sleeve_rgb = np.clip(SLEEVE_COLORS[sleeve] + jitter(), 0, 255)
    shirt = np.clip(SHIRT_COLORS[rng.integers(len(SHIRT_COLORS))] + jitter(), 0, 255)
    skin = np.clip(SKIN + jitter() * 0.5, 0, 255)

    head = parts[1]
    _paint(img, _box_mask(xs, ys, head), skin)
    torso = parts[0]
    mask = _box_mask(xs, ys, torso)
    u, v = _local(xs, ys, torso)
    tex = _pattern_texture(PATTERNS[pattern], u, v, shirt, rng)
    _paint(img, mask, tex)
    _paint(img, mask & _neck_mask(NECKLINES[neck], u, v, torso.s), skin)
    # sleeves last so the arm boxes hold only sleeve color
    for i in (2, 3, 4, 5):
        _paint(img, _box_mask(xs, ys, parts[i]), sleeve_rgb)
    img += rng.normal(0, 3 * cfg.noise, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _appearance(rng, hidden, values, rho):
    out = []
    for a, t in zip(hidden, values):
        if rng.random() < rho:
            out.append(a)
        else:
            out.append(int(rng.choice([k for k in range(t) if k != a])))
    return tuple(out)


def generate(cfg: SynthConfig) -> SynthDataset:
    """Positives first, then negatives; every stream derives from ``cfg.seed``."""
    schema = default_schema()
    tree = default_skeleton()
    values = schema.values
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(cfg.positives + cfg.negatives)
    samples, hidden, truth, appearance = [], [], [], []
    for k in range(cfg.positives):
        rng = np.random.default_rng(streams[k])
        label = tuple(int(rng.integers(t)) for t in values)
        look = _appearance(rng, label, values, cfg.rho)
        parts = _sample_pose(rng, cfg)
        pixels = _render_person(rng, cfg, parts, look)
        grid_parts, pose = [], []
        for i in range(tree.m):
            slot = int(rng.integers(cfg.candidates))
            min_shift = 0.15 * parts[i].s
            cands = [_decoy(rng, parts[i], cfg, min_shift) for _ in range(cfg.candidates - 1)]
            cands.insert(slot, parts[i])
            grid_parts.append(cands)
            pose.append(slot)
        grid = CandidateGrid(grid_parts, image_ref=f"pos_{k:05d}")
        samples.append(TrainingSample(grid, PoseAssignment(pose), 1, None, ImageRaster(pixels)))
        hidden.append(AttributeAssignment(label))
        truth.append(parts)
        appearance.append(AttributeAssignment(look))
    for k in range(cfg.negatives):
        rng = np.random.default_rng(streams[cfg.positives + k])
        shape = (cfg.height, cfg.width)
        pixels = np.clip(np.round(_background(rng, shape, cfg.noise)), 0, 255).astype(np.uint8)
        grid_parts = []
        for i in range(tree.m):
            grid_parts.append(
                [
                    PartCandidate(
                        float(rng.uniform(0, cfg.width - 1)),
                        float(rng.uniform(0, cfg.height - 1)),
                        PART_LENGTHS[i] * math.exp(rng.normal(0, 0.08)),
                        float(rng.uniform(-math.pi, math.pi)),
                    )
                    for _ in range(cfg.candidates)
                ]
            )
        grid = CandidateGrid(grid_parts, image_ref=f"neg_{k:05d}")
        samples.append(TrainingSample(grid, None, -1, None, ImageRaster(pixels)))
        hidden.append(None)
        truth.append(None)
        appearance.append(None)
    return SynthDataset(samples, hidden, truth, appearance)
