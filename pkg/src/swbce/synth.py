"""Deterministic synthetic scenes with exact one-pixel edge ground truth.

Scenes are painted from filled axis-aligned rectangles and midpoint-circle
disks, each with its own flat intensity.  The ground truth is taken from the
integer label map before texture and noise are applied, so noise can never
move an edge.

Randomness comes from numpy's Philox counter-based generator keyed by a
``SeedSequence``; per-sample streams are derived from ``(seed, index)`` so a
split can be generated in any order with identical output.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .image_io import write_binary, write_json, write_soft

MIN_SIZE = 16
MAX_SHAPES = 16
EDGE_DENSITY_RANGE = (0.005, 0.15)
_MAX_REDRAWS = 64
_LEVELS = np.linspace(0.1, 0.9, MAX_SHAPES + 1)


class Texture(str, enum.Enum):
    NONE = "none"
    STRIPES = "stripes"
    CHECKER = "checker"


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 42
    size: tuple[int, int] = (64, 64)
    shape_count: int = 4
    noise_sigma: float = 0.05
    texture: Texture = Texture.STRIPES
    texture_contrast: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "texture", Texture(self.texture))
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))

    def validate(self):
        h, w = self.size
        if h < MIN_SIZE or w < MIN_SIZE:
            raise InvalidSpec(f"scene size must be at least {MIN_SIZE}x{MIN_SIZE}, got {h}x{w}")
        if not 1 <= self.shape_count <= MAX_SHAPES:
            raise InvalidSpec(f"shape_count must be in [1, {MAX_SHAPES}], got {self.shape_count}")
        if not 0 <= self.noise_sigma <= 0.5:
            raise InvalidSpec("noise_sigma must be in [0, 0.5]")
        if not 0 <= self.texture_contrast <= 0.5:
            raise InvalidSpec("texture_contrast must be in [0, 0.5]")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["texture"] = self.texture.value
        return d


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    bottom: int  # exclusive
    right: int  # exclusive

    def mask(self, shape):
        m = np.zeros(shape, dtype=bool)
        m[max(self.top, 0) : max(self.bottom, 0), max(self.left, 0) : max(self.right, 0)] = True
        return m


@dataclass(frozen=True)
class Disk:
    row: int
    col: int
    radius: int

    def mask(self, shape):
        m = np.zeros(shape, dtype=bool)
        h, w = shape
        for dy, half in midpoint_circle_spans(self.radius).items():
            r = self.row + dy
            if 0 <= r < h:
                m[r, max(self.col - half, 0) : max(min(self.col + half + 1, w), 0)] = True
        return m


@dataclass
class Sample:
    image: np.ndarray
    edges: np.ndarray
    labels: np.ndarray


def midpoint_circle_spans(radius: int) -> dict[int, int]:
    """Half-width of each row of a disk rasterised with the midpoint algorithm."""
    spans: dict[int, int] = {}

    def widen(dy, dx):
        spans[dy] = max(spans.get(dy, 0), dx)

    x, y, d = radius, 0, 1 - radius
    while x >= y:
        for a, b in ((x, y), (y, x)):
            widen(b, a)
            widen(-b, a)
        y += 1
        if d < 0:
            d += 2 * y + 1
        else:
            x -= 1
            d += 2 * (y - x) + 1
    return spans


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def boundary_map(labels: np.ndarray) -> np.ndarray:
    """Shape pixels with a 4-neighbour of a lower label.

    Neighbours outside the image do not count, so shapes clipped by the image
    border are left open there.  Using "lower label" rather than "different
    label" keeps occlusion boundaries one pixel wide: only the occluding shape
    carries the edge.
    """
    edges = np.zeros(labels.shape, dtype=bool)
    lab = labels
    edges[1:, :] |= lab[1:, :] > lab[:-1, :]
    edges[:-1, :] |= lab[:-1, :] > lab[1:, :]
    edges[:, 1:] |= lab[:, 1:] > lab[:, :-1]
    edges[:, :-1] |= lab[:, :-1] > lab[:, 1:]
    return edges & (lab > 0)


def _texture(kind, shape, rng, contrast):
    if kind is Texture.NONE or contrast == 0:
        return np.zeros(shape)
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w]
    period = int(rng.integers(3, 7))
    phase = int(rng.integers(0, period))
    if kind is Texture.STRIPES:
        direction = int(rng.integers(0, 4))
        coord = [cols, rows, rows + cols, rows - cols][direction] + phase
        pattern = (coord // period) % 2
    else:
        pattern = ((rows + phase) // period + (cols + phase) // period) % 2
    return contrast * (pattern - 0.5)


def _draw_shapes(rng, spec: SceneSpec):
    h, w = spec.size
    shapes = []
    for _ in range(spec.shape_count):
        if rng.random() < 0.5:
            sh = int(rng.integers(h // 4, h // 2 + 1))
            sw = int(rng.integers(w // 4, w // 2 + 1))
            top = int(rng.integers(-(sh // 4), h - 3 * sh // 4 + 1))
            left = int(rng.integers(-(sw // 4), w - 3 * sw // 4 + 1))
            shapes.append(Rect(top, left, top + sh, left + sw))
        else:
            m = min(h, w)
            radius = int(rng.integers(max(m // 8, 2), m // 4 + 1))
            shapes.append(Disk(int(rng.integers(0, h)), int(rng.integers(0, w)), radius))
    return shapes


def rasterize(shapes, size) -> np.ndarray:
    """Label map: 0 for background, ``k`` for the k-th shape (later ones on top)."""
    labels = np.zeros(size, dtype=np.int64)
    for k, shape in enumerate(shapes, start=1):
        labels[shape.mask(size)] = k
    return labels


def render(labels, intensities, rng, spec: SceneSpec) -> np.ndarray:
    image = np.asarray(intensities, dtype=np.float64)[labels]
    for k in range(len(intensities)):
        region = labels == k
        if region.any():
            image[region] += _texture(spec.texture, labels.shape, rng, spec.texture_contrast)[region]
    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=labels.shape)
    return np.clip(image, 0.0, 1.0)


def generate(spec: SceneSpec, index: int | None = None) -> Sample:
    """One scene; ``index`` selects the per-sample stream of a split."""
    spec.validate()
    rng = make_rng(spec.seed) if index is None else make_rng(spec.seed, index)
    lo, hi = EDGE_DENSITY_RANGE
    for _ in range(_MAX_REDRAWS):
        labels = rasterize(_draw_shapes(rng, spec), spec.size)
        edges = boundary_map(labels)
        if lo <= edges.mean() <= hi:
            break
    else:
        raise InvalidSpec(
            f"could not place {spec.shape_count} shapes in {spec.size} within edge density {lo}..{hi}"
        )
    intensities = rng.permutation(_LEVELS)[: spec.shape_count + 1]
    image = render(labels, intensities, rng, spec)
    return Sample(image, edges, labels)


def generate_split(spec_base: SceneSpec, n_train: int, n_test: int, out_dir, threads: int = 1) -> dict:
    """Write ``train/`` and ``test/`` image/edge PGM pairs plus ``manifest.json``."""
    if n_train < 1 or n_test < 1:
        raise InvalidSpec("n_train and n_test must both be >= 1")
    spec_base.validate()
    out = Path(out_dir)
    jobs = [("train", i, i) for i in range(n_train)] + [("test", i, n_train + i) for i in range(n_test)]

    def one(job):
        split, local, index = job
        sample = generate(spec_base, index)
        stem = f"{split}_{local:04d}"
        image_rel = f"{split}/images/{stem}.pgm"
        edge_rel = f"{split}/edges/{stem}.pgm"
        write_soft(sample.image, out / image_rel, maxval=255)
        write_binary(sample.edges, out / edge_rel)
        return split, {
            "id": stem,
            "image": image_rel,
            "edges": edge_rel,
            "index": index,
            "edge_pixels": int(sample.edges.sum()),
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    manifest = {
        "format": "swbce-synthetic",
        "version": 1,
        "spec": spec_base.to_json(),
        "seed_derivation": "Philox(SeedSequence(entropy=seed, spawn_key=(index,)))",
        "train": [r for s, r in results if s == "train"],
        "test": [r for s, r in results if s == "test"],
    }
    write_json(manifest, out / "manifest.json")
    return manifest


def spec_from_json(d: dict) -> SceneSpec:
    return replace(SceneSpec(), **{**d, "size": tuple(d["size"])})
