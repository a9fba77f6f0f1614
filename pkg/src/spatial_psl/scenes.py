"""Synthetic Sort-of-Clevr scenes and CLEVR-lite scene graphs."""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "BACKGROUND",
    "CLEVR_SHAPES",
    "COLORS",
    "MATERIALS",
    "PALETTE",
    "SCENE_SCHEMA",
    "SIZES",
    "SORT_SHAPES",
    "RelationTable",
    "Scene",
    "SceneConfig",
    "SceneGenerationError",
    "SceneObject",
    "generate_scene",
    "read_scenes",
    "render",
    "spatial_relations",
    "write_scenes",
]

SCENE_SCHEMA = "spatial-psl/scene/1"

PALETTE = {
    "red": (220, 30, 30),
    "green": (30, 170, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 210, 40),
    "orange": (245, 140, 20),
    "gray": (110, 110, 110),
}
COLORS = tuple(PALETTE)
BACKGROUND = (200, 200, 200)

SORT_SHAPES = ("circle", "rectangle")
CLEVR_SHAPES = ("cube", "sphere", "cylinder")
SIZES = ("small", "large")
MATERIALS = ("metal", "matte")

SORT_OF_CLEVR = "sort-of-clevr"
CLEVR_LITE = "clevr-lite"
MODES = (SORT_OF_CLEVR, CLEVR_LITE)


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    id: str
    shape: str
    color: str
    center: tuple[int, int]
    radius: int
    size: str | None = None
    material: str | None = None

    def attributes(self) -> dict[str, str]:
        attrs = {"shape": self.shape, "color": self.color}
        if self.size is not None:
            attrs["size"] = self.size
        if self.material is not None:
            attrs["material"] = self.material
        return attrs


@dataclass(frozen=True)
class Scene:
    scene_id: str
    mode: str
    objects: tuple[SceneObject, ...]
    image_size: int = 64

    def object(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def by_color(self, color: str) -> SceneObject:
        matches = [o for o in self.objects if o.color == color]
        if len(matches) != 1:
            raise KeyError(f"color {color!r} does not identify a unique object")
        return matches[0]

    def to_dict(self) -> dict:
        objs = []
        for o in self.objects:
            d = asdict(o)
            d["center"] = list(o.center)
            objs.append({k: v for k, v in d.items() if v is not None})
        return {
            "schema": SCENE_SCHEMA,
            "scene_id": self.scene_id,
            "mode": self.mode,
            "image_size": self.image_size,
            "objects": objs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scene:
        if d.get("schema") != SCENE_SCHEMA:
            raise ValueError(f"unsupported scene schema {d.get('schema')!r}, expected {SCENE_SCHEMA!r}")
        objs = tuple(
            SceneObject(
                id=o["id"],
                shape=o["shape"],
                color=o["color"],
                center=(int(o["center"][0]), int(o["center"][1])),
                radius=int(o["radius"]),
                size=o.get("size"),
                material=o.get("material"),
            )
            for o in d["objects"]
        )
        return cls(d["scene_id"], d["mode"], objs, int(d["image_size"]))


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    radius: int = 5
    min_gap: int = 2
    max_retries: int = 1000
    clevr_min_objects: int = 4
    clevr_max_objects: int = 10
    clevr_radius: dict = field(default_factory=lambda: {"small": 3, "large": 5})

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


def _place(rng: random.Random, radii, config: SceneConfig, seed) -> list[tuple[int, int]]:
    size = config.image_size
    centers: list[tuple[int, int]] = []
    for r in radii:
        for _ in range(config.max_retries):
            c = (rng.randint(r, size - 1 - r), rng.randint(r, size - 1 - r))
            if all(
                math.hypot(c[0] - p[0], c[1] - p[1]) >= r + pr + config.min_gap for p, pr in zip(centers, radii)
            ):
                centers.append(c)
                break
        else:
            raise SceneGenerationError(f"could not place object {len(centers)} (seed {seed})")
    return centers


def generate_scene(seed: int, mode: str = SORT_OF_CLEVR, config: SceneConfig | None = None, scene_id=None) -> Scene:
    """Deterministically generate one scene from ``seed``.

    Sort-of-Clevr scenes hold six objects, one per palette color, each a circle
    or a rectangle. CLEVR-lite scenes hold 4-10 objects with independently
    sampled shape, color, size and material.
    """
    config = config or SceneConfig()
    rng = random.Random(seed)
    scene_id = str(seed) if scene_id is None else str(scene_id)
    if mode == SORT_OF_CLEVR:
        radii = [config.radius] * len(COLORS)
        centers = _place(rng, radii, config, seed)
        objs = tuple(
            SceneObject(f"o{i + 1}", rng.choice(SORT_SHAPES), color, centers[i], config.radius)
            for i, color in enumerate(COLORS)
        )
    elif mode == CLEVR_LITE:
        n = rng.randint(config.clevr_min_objects, config.clevr_max_objects)
        attrs = [
            (rng.choice(CLEVR_SHAPES), rng.choice(COLORS), rng.choice(SIZES), rng.choice(MATERIALS)) for _ in range(n)
        ]
        radii = [config.clevr_radius[a[2]] for a in attrs]
        centers = _place(rng, radii, config, seed)
        objs = tuple(
            SceneObject(f"o{i + 1}", shape, color, centers[i], radii[i], size=size, material=material)
            for i, (shape, color, size, material) in enumerate(attrs)
        )
    else:
        raise ValueError(f"unknown scene mode {mode!r}")
    return Scene(scene_id, mode, objs, config.image_size)


def render(scene: Scene) -> np.ndarray:
    """Rasterise a Sort-of-Clevr scene to an (S, S, 3) uint8 image.

    Circles cover pixels within ``radius`` of the centre; rectangles are
    axis-aligned squares with half-side ``radius``.
    """
    if scene.mode != SORT_OF_CLEVR:
        raise ValueError(f"{scene.mode} scenes are graph-only and cannot be rendered")
    s = scene.image_size
    img = np.empty((s, s, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    yy, xx = np.mgrid[0:s, 0:s]
    for o in scene.objects:
        dx, dy = xx - o.center[0], yy - o.center[1]
        if o.shape == "circle":
            mask = dx * dx + dy * dy <= o.radius * o.radius
        else:
            mask = (np.abs(dx) <= o.radius) & (np.abs(dy) <= o.radius)
        img[mask] = PALETTE[o.color]
    return img


@dataclass(frozen=True)
class RelationTable:
    """Pairwise directional relations and distance rankings.

    ``left[i, j]`` holds when object i is strictly left of object j (smaller x);
    ``above[i, j]`` when strictly above (smaller y, image rows grow downward).
    """

    ids: tuple[str, ...]
    left: np.ndarray
    above: np.ndarray
    distance: np.ndarray
    neighbors: dict

    def _ij(self, a: str, b: str):
        return self.ids.index(a), self.ids.index(b)

    def left_of(self, a: str, b: str) -> bool:
        return bool(self.left[self._ij(a, b)])

    def right_of(self, a: str, b: str) -> bool:
        i, j = self._ij(a, b)
        return bool(self.left[j, i])

    def above_of(self, a: str, b: str) -> bool:
        return bool(self.above[self._ij(a, b)])

    def below_of(self, a: str, b: str) -> bool:
        i, j = self._ij(a, b)
        return bool(self.above[j, i])

    def closest(self, a: str) -> str:
        return self.neighbors[a][0]

    def furthest(self, a: str) -> str:
        return self.neighbors[a][-1]

    def holds(self, relation: str, a: str, b: str) -> bool:
        """Named relation between objects ``a`` and ``b``."""
        if relation == "left":
            return self.left_of(a, b)
        if relation == "right":
            return self.right_of(a, b)
        if relation in ("above", "behind"):
            return self.above_of(a, b)
        if relation in ("below", "front"):
            return self.below_of(a, b)
        if relation == "closest":
            return a != b and self.closest(b) == a
        if relation == "furthest":
            return a != b and self.furthest(b) == a
        raise KeyError(f"unknown relation {relation!r}")


def spatial_relations(scene: Scene) -> RelationTable:
    """Directional relations and Euclidean neighbour rankings for a scene.

    Ranking ties are broken by object order in the scene.
    """
    ids = tuple(o.id for o in scene.objects)
    xy = np.array([o.center for o in scene.objects], dtype=float).reshape(-1, 2)
    left = xy[:, None, 0] < xy[None, :, 0]
    above = xy[:, None, 1] < xy[None, :, 1]
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    neighbors = {}
    for i, oid in enumerate(ids):
        order = sorted((j for j in range(len(ids)) if j != i), key=lambda j: (dist[i, j], j))
        neighbors[oid] = [ids[j] for j in order]
    return RelationTable(ids, left, above, dist, neighbors)


def write_scenes(path, scenes) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for scene in scenes:
            f.write(json.dumps(scene.to_dict(), sort_keys=True) + "\n")


def read_scenes(path) -> list[Scene]:
    with open(path, encoding="utf-8") as f:
        return [Scene.from_dict(json.loads(line)) for line in f if line.strip()]


def scene_index(scenes) -> dict[str, Scene]:
    return {s.scene_id: s for s in scenes}


def save_image(path, scene: Scene) -> Path:
    from .netpbm import write_ppm

    path = Path(path)
    write_ppm(path, render(scene))
    return path
