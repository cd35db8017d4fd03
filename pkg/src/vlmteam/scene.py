"""World-state types: scenes, objects, boxes, raster images and calibration.

Coordinates follow the image convention: ``x`` is the column (rightward),
``y`` the row (downward), origin at the top-left pixel.  A pixel ``(x, y)``
is treated as the point at integer coordinates, so a ``BoundingBox`` is a
closed rectangle ``[x0, x1] x [y0, y1]`` and its area is ``(x1-x0)*(y1-y0)``.
"""
from __future__ import annotations

import copy
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ParseError, UnknownObject, ValidationError

DEFAULT_WIDTH = 640
DEFAULT_HEIGHT = 480
DEFAULT_HEIGHT_MM = 20.0
CAMERA_HEIGHT_MM = 800.0

OBJECT_KINDS = ("circle", "rectangle", "star", "polygon", "region", "container")
GOAL_KINDS = (
    "place_in_region",
    "place_in_container",
    "push_into_region",
    "ordering",
    "trajectory_trace",
)

# Fixed 16-entry palette; goal checking and rendering both key off these names.
PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (40, 80, 220),
    "orange": (245, 140, 20),
    "purple": (130, 50, 170),
    "yellow": (240, 220, 40),
    "grey": (110, 110, 110),
    "black": (20, 20, 20),
    "white": (250, 250, 250),
    "brown": (130, 80, 40),
    "pink": (245, 150, 190),
    "cyan": (40, 210, 220),
    "magenta": (220, 40, 200),
    "lime": (160, 230, 60),
    "navy": (20, 30, 110),
    "teal": (20, 130, 130),
}
MAT_COLOR = (168, 168, 168)

STAR_INNER_RATIO = 0.45
POLYGON_SIDES = 6


class PixelCoord(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(f"degenerate box {self.as_list()}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        x0 = int(round(cx - w / 2))
        y0 = int(round(cy - h / 2))
        return cls(x0, y0, x0 + max(1, int(round(w))), y0 + max(1, int(round(h))))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise ValidationError(f"box needs 4 numbers, got {values!r}")
        return cls(*(int(round(float(v))) for v in values))

    @property
    def min(self) -> PixelCoord:
        return PixelCoord(self.x0, self.y0)

    @property
    def max(self) -> PixelCoord:
        return PixelCoord(self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def contains(self, p, strict: bool = False) -> bool:
        x, y = p
        if strict:
            return self.x0 < x < self.x1 and self.y0 < y < self.y1
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def intersection(self, other: "BoundingBox") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return float(max(w, 0) * max(h, 0))

    def intersects(self, other: "BoundingBox") -> bool:
        return (
            self.x0 <= other.x1 and other.x0 <= self.x1
            and self.y0 <= other.y1 and other.y0 <= self.y1
        )

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection(other)
        if inter == 0:
            return 0.0
        return inter / (self.area + other.area - inter)

    def shifted(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Clamp to ``[0, width-1] x [0, height-1]``; raises if nothing is left."""
        return BoundingBox(
            max(self.x0, 0), max(self.y0, 0), min(self.x1, width - 1), min(self.y1, height - 1)
        )


@dataclass
class SceneObject:
    id: str
    kind: str
    color: str
    center: PixelCoord
    size: float | tuple[float, float]
    rotation: float = 0.0
    height: float = DEFAULT_HEIGHT_MM
    has_lid: bool = False
    lid_of: str | None = None

    @property
    def half_extents(self) -> tuple[float, float]:
        if isinstance(self.size, (tuple, list)):
            return float(self.size[0]), float(self.size[1])
        return float(self.size), float(self.size)

    @property
    def is_boxlike(self) -> bool:
        return self.kind in ("rectangle", "region", "container")

    @property
    def descriptor(self) -> str:
        return f"{self.color} {self.kind}"


@dataclass
class GoalSpec:
    kind: str
    bindings: dict[str, str] = field(default_factory=dict)
    tolerance: float = 10.0


@dataclass
class Scene:
    width: int
    height: int
    objects: list[SceneObject]
    goal: GoalSpec
    seed: int = 0

    def get(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise UnknownObject(object_id)

    def ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def copy(self) -> "Scene":
        return copy.deepcopy(self)

    def lids_of(self, container_id: str) -> list[SceneObject]:
        return [o for o in self.objects if o.lid_of == container_id]


@dataclass(frozen=True)
class RasterImage:
    """Row-major RGB8 image backed by an ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValidationError("RasterImage expects a (H, W, 3) uint8 array")

    @classmethod
    def blank(cls, width: int, height: int, color=MAT_COLOR) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color
        return cls(px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def sha256(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}".encode())
        h.update(np.ascontiguousarray(self.pixels).tobytes())
        return h.hexdigest()

    def to_png_bytes(self) -> bytes:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(self.pixels, "RGB").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_png_bytes())

    @classmethod
    def load_png(cls, path) -> "RasterImage":
        from PIL import Image

        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (height, width) millimeters

    def __post_init__(self):
        if self.depth.ndim != 2:
            raise ValidationError("DepthMap expects a 2-D array")
        if np.any(self.depth < 0):
            raise ValidationError("depth must be non-negative")

    @classmethod
    def flat(cls, width: int, height: int, value: float = CAMERA_HEIGHT_MM) -> "DepthMap":
        return cls(np.full((height, width), float(value)))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class Calibration:
    """Affine pixel -> workspace-millimeter map ``world = A @ [x, y, 1]``."""

    matrix: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
    )
    z_offset: float = 0.0

    def __post_init__(self):
        lin = np.asarray(self.matrix, dtype=float)[:, :2]
        if abs(np.linalg.det(lin)) < 1e-12:
            raise ValidationError("calibration linear part is singular")

    @classmethod
    def scaled(cls, mm_per_px: float, origin_mm=(0.0, 0.0), z_offset: float = 0.0) -> "Calibration":
        return cls(
            ((mm_per_px, 0.0, origin_mm[0]), (0.0, mm_per_px, origin_mm[1])), z_offset
        )

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def apply(self, x: float, y: float) -> tuple[float, float]:
        a = self.array
        wx, wy = a @ np.array([x, y, 1.0])
        return float(wx), float(wy)

    def inverse(self, wx: float, wy: float) -> tuple[float, float]:
        a = self.array
        px, py = np.linalg.solve(a[:, :2], np.array([wx, wy]) - a[:, 2])
        return float(px), float(py)


# --------------------------------------------------------------------------
# footprints


def _polygon_vertices(obj: SceneObject) -> np.ndarray:
    cx, cy = obj.center
    r = obj.half_extents[0]
    rot = math.radians(obj.rotation)
    if obj.kind == "star":
        angles = [-math.pi / 2 + k * math.pi / 5 + rot for k in range(10)]
        radii = [r if k % 2 == 0 else r * STAR_INNER_RATIO for k in range(10)]
    else:
        angles = [-math.pi / 2 + k * 2 * math.pi / POLYGON_SIDES + rot for k in range(POLYGON_SIDES)]
        radii = [r] * POLYGON_SIDES
    return np.array([(cx + rr * math.cos(a), cy + rr * math.sin(a)) for a, rr in zip(angles, radii)])


def _points_in_polygon(xs: np.ndarray, ys: np.ndarray, verts: np.ndarray) -> np.ndarray:
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        xa, ya = verts[i]
        xb, yb = verts[(i + 1) % n]
        crosses = (ya > ys) != (yb > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = xa + (ys - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (xs < x_int)
    return inside


def _rect_corners(obj: SceneObject) -> np.ndarray:
    cx, cy = obj.center
    hx, hy = obj.half_extents
    t = math.radians(obj.rotation)
    c, s = math.cos(t), math.sin(t)
    local = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
    return np.array([(cx + u * c - v * s, cy + u * s + v * c) for u, v in local])


def _analytic_extent(obj: SceneObject) -> tuple[float, float, float, float]:
    if obj.kind == "circle":
        r = obj.half_extents[0]
        return obj.center.x - r, obj.center.y - r, obj.center.x + r, obj.center.y + r
    pts = _rect_corners(obj) if obj.is_boxlike else _polygon_vertices(obj)
    return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


def footprint(obj: SceneObject) -> tuple[int, int, np.ndarray]:
    """Rasterized footprint in a local window: ``(x_origin, y_origin, mask)``."""
    ex0, ey0, ex1, ey1 = _analytic_extent(obj)
    x0, y0 = int(math.floor(ex0)), int(math.floor(ey0))
    x1, y1 = int(math.ceil(ex1)), int(math.ceil(ey1))
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(float)
    cx, cy = obj.center
    if obj.kind == "circle":
        r = obj.half_extents[0]
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    elif obj.is_boxlike:
        hx, hy = obj.half_extents
        t = math.radians(obj.rotation)
        c, s = math.cos(t), math.sin(t)
        u = (xs - cx) * c + (ys - cy) * s
        v = -(xs - cx) * s + (ys - cy) * c
        eps = 1e-9
        mask = (np.abs(u) <= hx + eps) & (np.abs(v) <= hy + eps)
    else:
        mask = _points_in_polygon(xs, ys, _polygon_vertices(obj))
    return x0, y0, mask


def footprint_mask(obj: SceneObject, width: int, height: int) -> np.ndarray:
    """Full-canvas boolean footprint (clipped at the canvas edge)."""
    out = np.zeros((height, width), dtype=bool)
    x0, y0, mask = footprint(obj)
    h, w = mask.shape
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + w, width), min(y0 + h, height)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0:sy1, sx0:sx1] = mask[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0]
    return out


def object_bbox(scene: Scene, object_id: str) -> BoundingBox:
    """Tight axis-aligned box around the object's rendered footprint."""
    obj = scene.get(object_id)
    return _footprint_bbox(obj)


def _footprint_bbox(obj: SceneObject) -> BoundingBox:
    x0, y0, mask = footprint(obj)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        raise ValidationError(f"object {obj.id!r} has an empty footprint")
    bx0, bx1 = x0 + int(cols[0]), x0 + int(cols[-1])
    by0, by1 = y0 + int(rows[0]), y0 + int(rows[-1])
    # single-pixel footprints still need a non-degenerate box
    return BoundingBox(bx0, by0, max(bx1, bx0 + 1), max(by1, by0 + 1))


# --------------------------------------------------------------------------
# validation and IO


def validate(scene: Scene) -> Scene:
    seen: set[str] = set()
    for obj in scene.objects:
        if obj.id in seen:
            raise ValidationError(f"duplicate object id {obj.id!r}")
        seen.add(obj.id)
        if obj.kind not in OBJECT_KINDS:
            raise ValidationError(f"unknown kind {obj.kind!r} for {obj.id!r}")
        if obj.color not in PALETTE:
            raise ValidationError(f"unknown color {obj.color!r} for {obj.id!r}")
        if min(obj.half_extents) <= 0:
            raise ValidationError(f"object {obj.id!r} has non-positive size")
        box = _footprint_bbox(obj)
        if box.x0 < 0 or box.y0 < 0 or box.x1 >= scene.width or box.y1 >= scene.height:
            raise ValidationError(f"object {obj.id!r} does not fit the {scene.width}x{scene.height} canvas")
    by_id = {o.id: o for o in scene.objects}
    for obj in scene.objects:
        if obj.lid_of is not None:
            target = by_id.get(obj.lid_of)
            if target is None:
                raise ValidationError(f"{obj.id!r}.lid_of references unknown object {obj.lid_of!r}")
            if target.kind != "container":
                raise ValidationError(f"{obj.id!r}.lid_of must reference a container")
    if scene.goal.kind not in GOAL_KINDS:
        raise ValidationError(f"unknown goal kind {scene.goal.kind!r}")
    for src, dst in scene.goal.bindings.items():
        if src not in by_id:
            raise ValidationError(f"goal binding references unknown object {src!r}")
        if scene.goal.kind != "trajectory_trace" and dst not in by_id:
            raise ValidationError(f"goal binding references unknown target {dst!r}")
    return scene


def scene_from_dict(data: dict) -> Scene:
    try:
        objects = []
        for raw in data["objects"]:
            size = raw["size"]
            size = tuple(float(v) for v in size) if isinstance(size, list) else float(size)
            objects.append(
                SceneObject(
                    id=str(raw["id"]),
                    kind=raw["kind"],
                    color=raw["color"],
                    center=PixelCoord(int(raw["center"][0]), int(raw["center"][1])),
                    size=size,
                    rotation=float(raw.get("rotation", 0.0)),
                    height=float(raw.get("height_mm", DEFAULT_HEIGHT_MM)),
                    has_lid=bool(raw.get("has_lid", False)),
                    lid_of=raw.get("lid_of"),
                )
            )
        goal_raw = data["goal"]
        goal = GoalSpec(
            kind=goal_raw["kind"],
            bindings={str(k): str(v) for k, v in goal_raw.get("bindings", {}).items()},
            tolerance=float(goal_raw.get("tolerance", 10.0)),
        )
        scene = Scene(
            width=int(data.get("width", DEFAULT_WIDTH)),
            height=int(data.get("height", DEFAULT_HEIGHT)),
            objects=objects,
            goal=goal,
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ParseError(f"malformed scene: {exc!r}") from exc
    return validate(scene)


def scene_to_dict(scene: Scene) -> dict:
    objects = []
    for o in scene.objects:
        size = list(o.size) if isinstance(o.size, (tuple, list)) else o.size
        entry = {
            "id": o.id,
            "kind": o.kind,
            "color": o.color,
            "center": [o.center.x, o.center.y],
            "size": size,
            "rotation": o.rotation,
            "height_mm": o.height,
            "has_lid": o.has_lid,
        }
        if o.lid_of is not None:
            entry["lid_of"] = o.lid_of
        objects.append(entry)
    return {
        "width": scene.width,
        "height": scene.height,
        "seed": scene.seed,
        "objects": objects,
        "goal": {
            "kind": scene.goal.kind,
            "bindings": dict(scene.goal.bindings),
            "tolerance": scene.goal.tolerance,
        },
    }


def load_scene(path) -> Scene:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scene_from_dict(data)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def with_object(scene: Scene, object_id: str, **changes) -> Scene:
    """Copy of ``scene`` with one object's fields replaced."""
    out = scene.copy()
    out.objects = [replace(o, **changes) if o.id == object_id else o for o in out.objects]
    return out


def free_spot(scene: Scene, radius: float, step: int = 8, exclude: Sequence[str] = ()) -> PixelCoord:
    """First grid point (row-major) whose disk of ``radius`` clears every object box."""
    boxes = [
        _footprint_bbox(o) for o in scene.objects if o.id not in exclude and o.kind != "region"
    ]
    r = int(math.ceil(radius))
    for y in range(r + 1, scene.height - r - 1, step):
        for x in range(r + 1, scene.width - r - 1, step):
            probe = BoundingBox(x - r, y - r, x + r, y + r)
            if not any(probe.intersects(b) for b in boxes):
                return PixelCoord(x, y)
    raise ValidationError(f"no free spot of radius {radius} in scene")
