"""Workspace, rigid scenes, and the top-down heightmap renderer.

The workspace is a 1 m square discretized into a 224x224 grid. Scenes are
immutable value objects; rendering projects them orthographically along
gravity into the color/depth/target-mask observation the agent consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import geometry as geo

TABLE_COLOR = (0.4, 0.4, 0.4)
DEFAULT_ARM_BASES = ((-0.15, 0.5), (1.15, 0.5))  # left, right


@dataclass(frozen=True)
class Workspace:
    extent: float = 1.0
    grid_size: int = 224
    table_height: float = 0.0

    def __post_init__(self):
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.grid_size < 56 or self.grid_size % 4 != 0:
            raise ValueError("grid_size must be >= 56 and divisible by 4")

    @property
    def pixel_pitch(self) -> float:
        return self.extent / self.grid_size


@dataclass(frozen=True)
class RigidObject:
    id: int
    footprint: geo.Disk | geo.ConvexPolygon
    pose: tuple  # (x, y, yaw)
    height: float
    color: tuple = (0.6, 0.6, 0.6)
    is_target: bool = False

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("object height must be positive")

    def shape(self) -> geo.WorldDisk | geo.WorldPoly:
        return geo.place(self.footprint, self.pose)


@dataclass(frozen=True)
class Scene:
    workspace: Workspace
    objects: tuple  # (RigidObject, ...)
    target_id: int
    arm_bases: tuple = DEFAULT_ARM_BASES
    rng_seed: int = 0

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        targets = [o for o in self.objects if o.is_target]
        if len(targets) > 1:
            raise ValueError("at most one object may be the target")
        if targets and targets[0].id != self.target_id:
            raise ValueError("target_id must refer to the flagged target object")

    def object_by_id(self, oid: int) -> RigidObject | None:
        for o in self.objects:
            if o.id == oid:
                return o
        return None

    @property
    def target(self) -> RigidObject | None:
        return self.object_by_id(self.target_id)

    def with_objects(self, objects) -> "Scene":
        return replace(self, objects=tuple(objects))


@dataclass(frozen=True)
class Observation:
    color: np.ndarray        # (3, G, G) float32 in [0, 1]
    depth: np.ndarray        # (G, G) float32, meters above the table
    target_mask: np.ndarray  # (G, G) bool


def world_to_pixel(p, ws: Workspace):
    """Map a workspace point to (row, col); None when out of bounds."""
    x, y = float(p[0]), float(p[1])
    pitch = ws.pixel_pitch
    col = int(np.floor(x / pitch))
    row = int(np.floor(y / pitch))
    if not (0 <= row < ws.grid_size and 0 <= col < ws.grid_size):
        return None
    return row, col


def pixel_to_world(row: int, col: int, ws: Workspace):
    if not (0 <= row < ws.grid_size and 0 <= col < ws.grid_size):
        raise IndexError(f"pixel ({row}, {col}) outside {ws.grid_size}^2 grid")
    pitch = ws.pixel_pitch
    return (col + 0.5) * pitch, (row + 0.5) * pitch


def cell_centers(ws: Workspace) -> np.ndarray:
    """Coordinates of cell centers along one axis, shape (grid_size,)."""
    return (np.arange(ws.grid_size) + 0.5) * ws.pixel_pitch


def rasterize_shape(shape, ws: Workspace) -> np.ndarray:
    """Bool grid of cells whose centers lie inside the world-frame shape."""
    g = ws.grid_size
    xs = cell_centers(ws)
    mask = np.zeros((g, g), dtype=bool)
    # bounding box in cells keeps the per-object work small
    if isinstance(shape, geo.WorldDisk):
        lo = shape.center - shape.radius
        hi = shape.center + shape.radius
    else:
        lo = shape.verts.min(axis=0)
        hi = shape.verts.max(axis=0)
    pitch = ws.pixel_pitch
    c0 = max(0, int(np.floor(lo[0] / pitch)) - 1)
    c1 = min(g, int(np.ceil(hi[0] / pitch)) + 1)
    r0 = max(0, int(np.floor(lo[1] / pitch)) - 1)
    r1 = min(g, int(np.ceil(hi[1] / pitch)) + 1)
    if c0 >= c1 or r0 >= r1:
        return mask
    gx, gy = np.meshgrid(xs[c0:c1], xs[r0:r1])
    if isinstance(shape, geo.WorldDisk):
        inside = (gx - shape.center[0]) ** 2 + (gy - shape.center[1]) ** 2 <= shape.radius ** 2
    else:
        v = shape.verts
        e = np.roll(v, -1, axis=0) - v
        inside = np.ones_like(gx, dtype=bool)
        for i in range(len(v)):
            inside &= e[i, 0] * (gy - v[i, 1]) - e[i, 1] * (gx - v[i, 0]) >= -1e-12
    mask[r0:r1, c0:c1] = inside
    return mask


def render_observation(scene: Scene) -> Observation:
    """Topmost-object-wins orthographic heightmap projection."""
    ws = scene.workspace
    g = ws.grid_size
    depth = np.zeros((g, g), dtype=np.float32)
    color = np.empty((3, g, g), dtype=np.float32)
    for ch in range(3):
        color[ch].fill(TABLE_COLOR[ch])
    target_mask = np.zeros((g, g), dtype=bool)
    # ascending height so the tallest object covering a cell wins;
    # equal heights resolve to the higher object id
    for obj in sorted(scene.objects, key=lambda o: (o.height, o.id)):
        cover = rasterize_shape(obj.shape(), ws)
        if not cover.any():
            continue
        depth[cover] = obj.height
        for ch in range(3):
            color[ch][cover] = obj.color[ch]
        target_mask[cover] = obj.is_target
    return Observation(color=color, depth=depth, target_mask=target_mask)


def target_footprint_mask(scene: Scene) -> np.ndarray:
    """Ground-truth raster of the target footprint (occlusion-independent)."""
    tgt = scene.target
    if tgt is None:
        return np.zeros((scene.workspace.grid_size,) * 2, dtype=bool)
    return rasterize_shape(tgt.shape(), scene.workspace)


# ---------------------------------------------------------------------------
# Scene snapshot file (one object per line, used by replay and caching)

def save_scene(path, scene: Scene) -> None:
    lines = [f"workspace {scene.workspace.extent:g} {scene.workspace.grid_size}"]
    (lx, ly), (rx, ry) = scene.arm_bases
    lines.append(f"arms {lx:.9g} {ly:.9g} {rx:.9g} {ry:.9g}")
    lines.append(f"seed {scene.rng_seed}")
    for o in scene.objects:
        x, y, yaw = o.pose
        if isinstance(o.footprint, geo.Disk):
            params = f"disk {o.footprint.radius:.9g}"
        else:
            v = o.footprint.vertices
            params = f"poly {len(v)} " + " ".join(f"{c:.9g}" for xy in v for c in xy)
        lines.append(
            f"obj {o.id} {params} {x:.9g} {y:.9g} {yaw:.9g} {o.height:.9g} "
            f"{o.color[0]:.9g} {o.color[1]:.9g} {o.color[2]:.9g} {1 if o.is_target else 0}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> Scene:
    ws = None
    arm_bases = DEFAULT_ARM_BASES
    seed = 0
    objects = []
    target_id = None
    with open(path) as fh:
        for raw in fh:
            tok = raw.split()
            if not tok or raw.lstrip().startswith("#"):
                continue
            if tok[0] == "workspace":
                ws = Workspace(extent=float(tok[1]), grid_size=int(tok[2]))
            elif tok[0] == "arms":
                arm_bases = ((float(tok[1]), float(tok[2])), (float(tok[3]), float(tok[4])))
            elif tok[0] == "seed":
                seed = int(tok[1])
            elif tok[0] == "obj":
                oid = int(tok[1])
                if tok[2] == "disk":
                    fp = geo.Disk(float(tok[3]))
                    rest = tok[4:]
                elif tok[2] == "poly":
                    n = int(tok[3])
                    coords = [float(t) for t in tok[4:4 + 2 * n]]
                    fp = geo.ConvexPolygon(tuple((coords[2 * i], coords[2 * i + 1]) for i in range(n)))
                    rest = tok[4 + 2 * n:]
                else:
                    raise ValueError(f"unknown footprint kind {tok[2]!r}")
                x, y, yaw, h, r, gc, b = (float(t) for t in rest[:7])
                is_target = rest[7] == "1"
                objects.append(RigidObject(oid, fp, (x, y, yaw), h, (r, gc, b), is_target))
                if is_target:
                    target_id = oid
            else:
                raise ValueError(f"unknown snapshot line {tok[0]!r}")
    if ws is None:
        raise ValueError("snapshot missing workspace header")
    if target_id is None:
        raise ValueError("snapshot has no target object")
    return Scene(workspace=ws, objects=tuple(objects), target_id=target_id,
                 arm_bases=arm_bases, rng_seed=seed)
