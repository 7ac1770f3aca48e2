"""Procedural urban scenes with exact ray casting.

The scene lives in the unit cube.  Buildings, cars and the ground are
axis-aligned; trees are spheres.  Everything here is ground truth: the
rest of the package only sees it through rendered buffers, simulated
depth priors and the label synthesiser.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import GenerationError, InputError, RigError
from .geometry import Camera, Intrinsics, Pose, generate_rays


class ClassId(enum.IntEnum):
    GROUND = 0
    BUILDING = 1
    ROAD = 2
    CAR = 3
    TREE = 4


NUM_CLASSES = len(ClassId)
# semantic code for rays that leave the scene; folded into GROUND by metrics
SKY = 255

SUN = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
SKY_COLOR = np.array([0.62, 0.75, 0.92])
GROUND_ALBEDO = np.array([0.55, 0.55, 0.35])
ROAD_ALBEDO = np.array([0.32, 0.32, 0.36])
TREE_ALBEDO = np.array([0.12, 0.42, 0.12])

_EPS = 1e-9


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def overlaps(self, other: "Rect", gap: float = 0.0) -> bool:
        return not (self.x1 + gap <= other.x0 or other.x1 + gap <= self.x0
                    or self.y1 + gap <= other.y0 or other.y1 + gap <= self.y0)

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class Building:
    footprint: Rect
    height: float
    instance_id: int
    tint: tuple


@dataclass(frozen=True)
class Tree:
    center: tuple
    radius: float


@dataclass(frozen=True)
class Car:
    lo: tuple
    hi: tuple
    color: tuple


@dataclass(frozen=True)
class SceneParams:
    n_buildings: tuple = (8, 24)
    footprint: tuple = (0.07, 0.14)
    height_m: tuple = (10.0, 60.0)
    n_roads: tuple = (2, 3)
    road_width: float = 0.06
    n_trees: tuple = (6, 14)
    tree_radius: tuple = (0.018, 0.03)
    n_cars: tuple = (4, 10)
    car_size: tuple = (0.045, 0.024, 0.018)
    ground_height: float = 0.05
    meters_per_unit: float = 400.0
    margin: float = 0.03
    building_gap: float = 0.025
    max_retries: int = 50

    def __post_init__(self):
        for name in ("n_buildings", "footprint", "height_m", "n_roads", "n_trees",
                     "tree_radius", "n_cars"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise InputError(f"degenerate range {name}={lo, hi}")


@dataclass(frozen=True)
class SceneSpec:
    extent: tuple
    ground_height: float
    roads: tuple
    buildings: tuple
    trees: tuple
    cars: tuple
    meters_per_unit: float

    @property
    def top(self) -> float:
        """Highest z reached by any primitive."""
        zs = [self.ground_height]
        zs += [self.ground_height + b.height for b in self.buildings]
        zs += [t.center[2] + t.radius for t in self.trees]
        zs += [c.hi[2] for c in self.cars]
        return max(zs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            extent=tuple(tuple(v) for v in d["extent"]),
            ground_height=d["ground_height"],
            roads=tuple(Rect(**r) for r in d["roads"]),
            buildings=tuple(Building(Rect(**b["footprint"]), b["height"], b["instance_id"],
                                     tuple(b["tint"])) for b in d["buildings"]),
            trees=tuple(Tree(tuple(t["center"]), t["radius"]) for t in d["trees"]),
            cars=tuple(Car(tuple(c["lo"]), tuple(c["hi"]), tuple(c["color"])) for c in d["cars"]),
            meters_per_unit=d["meters_per_unit"],
        )


def _r(x: float) -> float:
    # keep JSON round trips byte-stable
    return float(round(x, 12))


def _try_generate(rng: np.random.Generator, p: SceneParams) -> SceneSpec | None:
    g = p.ground_height
    roads = []
    n_roads = int(rng.integers(p.n_roads[0], p.n_roads[1] + 1))
    for i in range(n_roads):
        c = rng.uniform(0.2, 0.8)
        w = p.road_width / 2
        if i % 2 == 0:
            cand = Rect(0.0, _r(c - w), 1.0, _r(c + w))
        else:
            cand = Rect(_r(c - w), 0.0, _r(c + w), 1.0)
        if any(cand.overlaps(r, 0.15) and ((i - j) % 2 == 0) for j, r in enumerate(roads)):
            continue
        roads.append(cand)
    if not roads:
        return None

    n_b = int(rng.integers(p.n_buildings[0], p.n_buildings[1] + 1))
    rects = []
    tries = 0
    while len(rects) < n_b:
        tries += 1
        if tries > 400 * max(n_b, 1):
            return None
        w, h = rng.uniform(*p.footprint, size=2)
        x0 = rng.uniform(p.margin, 1 - p.margin - w)
        y0 = rng.uniform(p.margin, 1 - p.margin - h)
        cand = Rect(_r(x0), _r(y0), _r(x0 + w), _r(y0 + h))
        if any(cand.overlaps(r, p.building_gap) for r in rects):
            continue
        if any(cand.overlaps(r, 0.01) for r in roads):
            continue
        rects.append(cand)
    # deterministic instance numbering: sort footprints by position
    rects.sort(key=lambda r: (r.y0, r.x0))
    buildings = []
    for i, rect in enumerate(rects):
        hm = rng.uniform(*p.height_m)
        tint = 0.55 + 0.3 * rng.random(3)
        buildings.append(Building(rect, _r(hm / p.meters_per_unit), i + 1,
                                  tuple(_r(v) for v in tint)))

    trees = []
    n_t = int(rng.integers(p.n_trees[0], p.n_trees[1] + 1))
    tries = 0
    while len(trees) < n_t and tries < 200 * max(n_t, 1):
        tries += 1
        rad = rng.uniform(*p.tree_radius)
        x, y = rng.uniform(p.margin + rad, 1 - p.margin - rad, size=2)
        box = Rect(x - rad, y - rad, x + rad, y + rad)
        if any(box.overlaps(b.footprint, 0.005) for b in buildings):
            continue
        if any(box.overlaps(r, 0.005) for r in roads):
            continue
        if any(math.hypot(x - t.center[0], y - t.center[1]) < rad + t.radius for t in trees):
            continue
        trees.append(Tree((_r(x), _r(y), _r(g + rad)), _r(rad)))

    cars = []
    n_c = int(rng.integers(p.n_cars[0], p.n_cars[1] + 1))
    L, W, H = p.car_size
    tries = 0
    while len(cars) < n_c and tries < 200 * max(n_c, 1):
        tries += 1
        road = roads[int(rng.integers(len(roads)))]
        along_x = (road.x1 - road.x0) > (road.y1 - road.y0)
        if along_x:
            cx = rng.uniform(0.05, 0.95)
            cy = (road.y0 + road.y1) / 2 + rng.choice([-1, 1]) * (road.y1 - road.y0) / 4
            lo = (cx - L / 2, cy - W / 2, g)
            hi = (cx + L / 2, cy + W / 2, g + H)
        else:
            cy = rng.uniform(0.05, 0.95)
            cx = (road.x0 + road.x1) / 2 + rng.choice([-1, 1]) * (road.x1 - road.x0) / 4
            lo = (cx - W / 2, cy - L / 2, g)
            hi = (cx + W / 2, cy + L / 2, g + H)
        box = Rect(lo[0], lo[1], hi[0], hi[1])
        if any(box.overlaps(Rect(c.lo[0], c.lo[1], c.hi[0], c.hi[1]), 0.01) for c in cars):
            continue
        if any(box.overlaps(b.footprint, 0.005) for b in buildings):
            continue
        color = rng.uniform(0.1, 0.9, size=3)
        cars.append(Car(tuple(_r(v) for v in lo), tuple(_r(v) for v in hi),
                        tuple(_r(v) for v in color)))

    return SceneSpec(((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), g, tuple(roads), tuple(buildings),
                     tuple(trees), tuple(cars), p.meters_per_unit)


def generate_scene(seed: int, params: SceneParams | None = None) -> SceneSpec:
    p = params or SceneParams()
    rng = np.random.default_rng(seed)
    for _ in range(p.max_retries):
        scene = _try_generate(rng, p)
        if scene is not None:
            nb = len(scene.buildings)
            if not p.n_buildings[0] <= nb <= p.n_buildings[1]:
                raise GenerationError(f"generated {nb} buildings outside {p.n_buildings}")
            return scene
    raise GenerationError(f"could not pack scene after {p.max_retries} retries")


# ---------------------------------------------------------------- ray casting

def _boxes_intersect(origins, dirs, lo, hi):
    """Slab test of N rays against M boxes. Returns (t, face) of shape (N, M).

    ``face`` encodes the entry face as axis * 2 + (1 if the max side).
    Misses get t = inf.  Rays starting inside a box are treated as misses.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :, :] - origins[:, None, :]) * inv[:, None, :]
        t1 = (hi[None, :, :] - origins[:, None, :]) * inv[:, None, :]
    # rays parallel to a slab: inside -> (-inf, inf), outside -> nan -> miss
    tmin_ax = np.fmin(t0, t1)
    tmax_ax = np.fmax(t0, t1)
    par = dirs[:, None, :] == 0
    inside = (origins[:, None, :] >= lo[None]) & (origins[:, None, :] <= hi[None])
    tmin_ax = np.where(par, np.where(inside, -np.inf, np.inf), tmin_ax)
    tmax_ax = np.where(par, np.where(inside, np.inf, -np.inf), tmax_ax)
    axis = np.argmax(tmin_ax, axis=2)
    tnear = np.take_along_axis(tmin_ax, axis[..., None], 2)[..., 0]
    tfar = tmax_ax.min(axis=2)
    hit = (tnear <= tfar) & (tnear > _EPS)
    t = np.where(hit, tnear, np.inf)
    sign = np.take_along_axis(dirs[:, None, :].repeat(lo.shape[0], 1), axis[..., None], 2)[..., 0]
    face = axis * 2 + (sign < 0)
    return t, face


def _spheres_intersect(origins, dirs, centers, radii):
    oc = origins[:, None, :] - centers[None]
    b = np.einsum("nmk,nk->nm", oc, dirs)
    c = np.einsum("nmk,nmk->nm", oc, oc) - radii[None] ** 2
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0))
    t = -b - sq
    ok = (disc >= 0) & (t > _EPS)
    return np.where(ok, t, np.inf)


_FACE_NORMALS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
                         dtype=np.float64)


def _scene_arrays(scene: SceneSpec):
    b_lo = np.array([[b.footprint.x0, b.footprint.y0, scene.ground_height]
                     for b in scene.buildings]).reshape(-1, 3)
    b_hi = np.array([[b.footprint.x1, b.footprint.y1, scene.ground_height + b.height]
                     for b in scene.buildings]).reshape(-1, 3)
    c_lo = np.array([c.lo for c in scene.cars], dtype=np.float64).reshape(-1, 3)
    c_hi = np.array([c.hi for c in scene.cars], dtype=np.float64).reshape(-1, 3)
    t_c = np.array([t.center for t in scene.trees], dtype=np.float64).reshape(-1, 3)
    t_r = np.array([t.radius for t in scene.trees], dtype=np.float64)
    return b_lo, b_hi, c_lo, c_hi, t_c, t_r


def raycast_batch(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> dict:
    """Nearest hit for (N, 3) rays.

    Returns arrays ``t`` (inf on miss), ``cls`` (SKY on miss), ``instance``,
    ``normal`` and ``albedo``.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    b_lo, b_hi, c_lo, c_hi, t_c, t_r = _scene_arrays(scene)
    g = scene.ground_height

    t = np.full(n, np.inf)
    cls = np.full(n, SKY, dtype=np.int32)
    inst = np.zeros(n, dtype=np.int32)
    normal = np.zeros((n, 3))
    albedo = np.tile(SKY_COLOR, (n, 1))

    # ground plane, bounded to the scene footprint
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (g - origins[:, 2]) / dirs[:, 2]
    tg = np.where((tg > _EPS) & np.isfinite(tg), tg, np.inf)
    px = origins[:, 0] + tg * dirs[:, 0]
    py = origins[:, 1] + tg * dirs[:, 1]
    (x0, y0, _), (x1, y1, _) = scene.extent
    inside = (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)
    tg = np.where(inside, tg, np.inf)
    hit = np.isfinite(tg)
    t[hit] = tg[hit]
    on_road = np.zeros(n, dtype=bool)
    for r in scene.roads:
        on_road |= r.contains(px, py)
    cls[hit] = np.where(on_road[hit], ClassId.ROAD, ClassId.GROUND)
    normal[hit] = (0.0, 0.0, 1.0)
    albedo[hit] = np.where(on_road[hit, None], ROAD_ALBEDO, GROUND_ALBEDO)

    if len(b_lo):
        tb, fb = _boxes_intersect(origins, dirs, b_lo, b_hi)
        j = np.argmin(tb, axis=1)
        tj = tb[np.arange(n), j]
        win = tj < t
        t[win] = tj[win]
        cls[win] = ClassId.BUILDING
        inst[win] = j[win] + 1
        normal[win] = _FACE_NORMALS[fb[np.arange(n), j][win]]
        tints = np.array([b.tint for b in scene.buildings])
        albedo[win] = tints[j[win]]
    if len(c_lo):
        tc, fc = _boxes_intersect(origins, dirs, c_lo, c_hi)
        j = np.argmin(tc, axis=1)
        tj = tc[np.arange(n), j]
        win = tj < t
        t[win] = tj[win]
        cls[win] = ClassId.CAR
        inst[win] = 0
        normal[win] = _FACE_NORMALS[fc[np.arange(n), j][win]]
        colors = np.array([c.color for c in scene.cars])
        albedo[win] = colors[j[win]]
    if len(t_c):
        ts = _spheres_intersect(origins, dirs, t_c, t_r)
        j = np.argmin(ts, axis=1)
        tj = ts[np.arange(n), j]
        win = tj < t
        t[win] = tj[win]
        cls[win] = ClassId.TREE
        inst[win] = 0
        p = origins[win] + tj[win, None] * dirs[win]
        nrm = p - t_c[j[win]]
        normal[win] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        albedo[win] = TREE_ALBEDO
    return {"t": t, "cls": cls, "instance": inst, "normal": normal, "albedo": albedo}


def shade(albedo: np.ndarray, normal: np.ndarray, cls: np.ndarray) -> np.ndarray:
    lam = np.clip(normal @ SUN, 0.1, 1.0)
    color = albedo * lam[..., None]
    return np.where((cls == SKY)[..., None], SKY_COLOR, color)


@dataclass(frozen=True)
class Hit:
    t: float
    cls: int
    instance_id: int
    albedo: tuple


def raycast(scene: SceneSpec, ray) -> Hit | None:
    out = raycast_batch(scene, ray.origin[None], ray.direction[None])
    if not np.isfinite(out["t"][0]):
        return None
    return Hit(float(out["t"][0]), int(out["cls"][0]), int(out["instance"][0]),
               tuple(out["albedo"][0]))


@dataclass(eq=False)
class GtBuffers:
    color: np.ndarray      # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W) planar depth, inf for sky
    semantic: np.ndarray   # (H, W) ClassId or SKY
    instance: np.ndarray   # (H, W) building id, 0 elsewhere
    normal: np.ndarray     # (H, W, 3)
    points: np.ndarray     # (H, W, 3) world hit points, nan for sky

    @property
    def shape(self):
        return self.depth.shape


def render_gt(scene: SceneSpec, camera: Camera) -> GtBuffers:
    H, W = camera.height, camera.width
    o, d, zf = generate_rays(camera, camera.pixel_centers())
    hit = raycast_batch(scene, o, d)
    t = hit["t"]
    depth = (t * zf).reshape(H, W)
    points = np.where(np.isfinite(t)[:, None], o + np.where(np.isfinite(t), t, 0)[:, None] * d,
                      np.nan)
    color = shade(hit["albedo"], hit["normal"], hit["cls"])
    return GtBuffers(
        color=color.reshape(H, W, 3),
        depth=depth,
        semantic=hit["cls"].reshape(H, W).astype(np.uint8),
        instance=hit["instance"].reshape(H, W),
        normal=hit["normal"].reshape(H, W, 3),
        points=points.reshape(H, W, 3),
    )


# ---------------------------------------------------------------- camera rigs

@dataclass(frozen=True)
class RigParams:
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    pitch_deg: tuple = (38.0, 52.0)
    max_tries: int = 40


def _pitch_ok(pose: Pose, lo=30.0, hi=60.0) -> bool:
    pitch = math.degrees(math.asin(-pose.forward[2]))
    return lo - 1e-9 <= pitch <= hi + 1e-9


def _lattice(n: int):
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    return rows, cols


def _rig_once(scene: SceneSpec, n_views: int, pattern: str, altitude: float,
              rng: np.random.Generator, rp: RigParams) -> list:
    intr = Intrinsics.from_fov(rp.width, rp.height, rp.fov_deg)
    z = scene.ground_height + altitude
    cams = []
    if pattern == "orbit":
        base = rng.uniform(0, 2 * np.pi)
        pitch = np.radians(rng.uniform(*rp.pitch_deg))
        reach = altitude / math.tan(pitch)
        radius = 0.5 + 0.35 * reach
        for i in range(n_views):
            az = base + 2 * np.pi * i / n_views
            eye = np.array([0.5 + radius * math.cos(az), 0.5 + radius * math.sin(az), z])
            # aim inward, landing `reach` away horizontally
            dirn = -np.array([math.cos(az), math.sin(az)])
            target = np.array([eye[0] + reach * dirn[0], eye[1] + reach * dirn[1],
                               scene.ground_height])
            cams.append(Pose.look_at(eye, target))
    elif pattern == "grid":
        rows, cols = _lattice(n_views)
        xs = np.linspace(0.2, 0.8, cols) if cols > 1 else np.array([0.5])
        ys = np.linspace(0.2, 0.8, rows) if rows > 1 else np.array([0.5])
        heading0 = rng.integers(4)
        for i in range(n_views):
            r, c = divmod(i, cols)
            eye = np.array([xs[c], ys[r], z])
            pitch = np.radians(rng.uniform(*rp.pitch_deg))
            reach = altitude / math.tan(pitch)
            for k in range(4):
                h = (heading0 + i + k) % 4 * (np.pi / 2) + rng.uniform(-0.3, 0.3)
                target = eye[:2] + reach * np.array([math.cos(h), math.sin(h)])
                if np.all((target > 0.1) & (target < 0.9)):
                    break
            cams.append(Pose.look_at(eye, np.array([target[0], target[1],
                                                    scene.ground_height])))
    else:
        raise InputError(f"unknown rig pattern {pattern!r}")
    far = 4.0
    return [Camera(intr, pose, 1e-3, far) for pose in cams]


def visible_instances(scene: SceneSpec, camera: Camera) -> set:
    ids = np.unique(render_gt(scene, camera).instance)
    return set(int(i) for i in ids if i > 0)


def make_camera_rig(scene: SceneSpec, n_views: int, pattern: str = "grid",
                    altitude: float = 0.3, seed: int = 0,
                    params: RigParams | None = None, min_views: int = 2) -> list:
    """Downward-looking oblique cameras; every building seen by ``min_views``."""
    if n_views < 2:
        raise InputError("need at least two views")
    rp = params or RigParams()
    rng = np.random.default_rng(seed)
    needed = {b.instance_id for b in scene.buildings}
    for _ in range(rp.max_tries):
        cams = _rig_once(scene, n_views, pattern, altitude, rng, rp)
        if not all(_pitch_ok(c.pose) for c in cams):
            continue
        counts = dict.fromkeys(needed, 0)
        for c in cams:
            for i in visible_instances(scene, c):
                counts[i] += 1
        if all(v >= min_views for v in counts.values()):
            return cams
    raise RigError(f"no rig with every building in >= {min_views} views after "
                   f"{rp.max_tries} tries")


# ---------------------------------------------------------------- depth prior

def simulate_mvs_depth(gt_depth: np.ndarray, seed, noise_sigma: float = 0.0,
                       hole_rate: float = 0.0) -> np.ndarray:
    """Noisy planar depth with holes; invalid pixels are NaN."""
    if noise_sigma < 0 or hole_rate < 0:
        raise InputError("noise_sigma and hole_rate must be non-negative")
    hole_rate = min(hole_rate, 0.99)
    rng = np.random.default_rng(seed)
    d = np.array(gt_depth, dtype=np.float64)
    valid = np.isfinite(d)
    if noise_sigma > 0:
        d = d + noise_sigma * rng.standard_normal(d.shape)
    n_holes = int(math.ceil(hole_rate * d.size))
    if n_holes:
        holes = rng.permutation(d.size)[:n_holes]
        valid.ravel()[holes] = False
    return np.where(valid, d, np.nan)


# ---------------------------------------------------------------- surface samples

def _surface_areas(scene: SceneSpec):
    """Area table: list of (kind, index, area)."""
    rows = []
    covered = sum(b.footprint.area for b in scene.buildings)
    covered += sum((c.hi[0] - c.lo[0]) * (c.hi[1] - c.lo[1]) for c in scene.cars)
    (x0, y0, _), (x1, y1, _) = scene.extent
    rows.append(("ground", 0, (x1 - x0) * (y1 - y0) - covered))
    for i, b in enumerate(scene.buildings):
        f = b.footprint
        w, h = f.x1 - f.x0, f.y1 - f.y0
        rows.append(("box_b", i, w * h + 2 * (w + h) * b.height))
    for i, c in enumerate(scene.cars):
        w, h, z = (c.hi[k] - c.lo[k] for k in range(3))
        rows.append(("box_c", i, w * h + 2 * (w + h) * z))
    for i, t in enumerate(scene.trees):
        rows.append(("tree", i, 4 * np.pi * t.radius ** 2))
    return rows


def _sample_box_surface(rng, lo, hi, n):
    """Uniform samples on the top and four side faces of a box."""
    w, h, z = hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]
    areas = np.array([w * h, w * z, w * z, h * z, h * z])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    p = np.empty((n, 3))
    p[:, 0] = lo[0] + u * w
    p[:, 1] = lo[1] + v * h
    p[:, 2] = hi[2]
    side = face > 0
    p[side, 2] = lo[2] + v[side] * z
    m = face == 1
    p[m, 1] = lo[1]
    m = face == 2
    p[m, 1] = hi[1]
    m = face == 3
    p[m, 0], p[m, 1] = lo[0], lo[1] + u[m] * h
    m = face == 4
    p[m, 0], p[m, 1] = hi[0], lo[1] + u[m] * h
    return p


def sample_gt_points(scene: SceneSpec, n: int, seed) -> dict:
    """Area-weighted surface samples with class and instance labels."""
    if n <= 0:
        raise InputError("n must be positive")
    rng = np.random.default_rng(seed)
    rows = _surface_areas(scene)
    areas = np.array([r[2] for r in rows])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, cls, inst = [], [], []
    g = scene.ground_height
    for (kind, i, _), k in zip(rows, counts):
        if k == 0:
            continue
        if kind == "ground":
            (x0, y0, _), (x1, y1, _) = scene.extent
            got = np.empty((0, 2))
            while len(got) < k:
                xy = rng.uniform((x0, y0), (x1, y1), size=(2 * k + 16, 2))
                keep = np.ones(len(xy), dtype=bool)
                for b in scene.buildings:
                    keep &= ~b.footprint.contains(xy[:, 0], xy[:, 1])
                for c in scene.cars:
                    keep &= ~Rect(c.lo[0], c.lo[1], c.hi[0], c.hi[1]).contains(xy[:, 0], xy[:, 1])
                got = np.concatenate([got, xy[keep]])
            xy = got[:k]
            road = np.zeros(k, dtype=bool)
            for r in scene.roads:
                road |= r.contains(xy[:, 0], xy[:, 1])
            pts.append(np.column_stack([xy, np.full(k, g)]))
            cls.append(np.where(road, ClassId.ROAD, ClassId.GROUND))
            inst.append(np.zeros(k, dtype=np.int64))
        elif kind == "box_b":
            b = scene.buildings[i]
            f = b.footprint
            pts.append(_sample_box_surface(rng, (f.x0, f.y0, g), (f.x1, f.y1, g + b.height), k))
            cls.append(np.full(k, ClassId.BUILDING))
            inst.append(np.full(k, b.instance_id, dtype=np.int64))
        elif kind == "box_c":
            c = scene.cars[i]
            pts.append(_sample_box_surface(rng, c.lo, c.hi, k))
            cls.append(np.full(k, ClassId.CAR))
            inst.append(np.zeros(k, dtype=np.int64))
        else:
            t = scene.trees[i]
            v = rng.standard_normal((k, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            pts.append(np.asarray(t.center) + t.radius * v)
            cls.append(np.full(k, ClassId.TREE))
            inst.append(np.zeros(k, dtype=np.int64))
    return {
        "points": np.concatenate(pts),
        "cls": np.concatenate(cls).astype(np.int64),
        "instance": np.concatenate(inst),
    }


def pixel_footprint(cameras, depths) -> float:
    """Mean size of one pixel on the surface, in scene units."""
    vals = []
    for cam, d in zip(cameras, depths):
        d = np.asarray(d)
        ok = np.isfinite(d)
        if ok.any():
            vals.append(d[ok].mean() / cam.intrinsics.fx)
    if not vals:
        raise InputError("no finite depth to measure pixel footprint")
    return float(np.mean(vals))
