"""Pinhole cameras, ray generation and depth-based reprojection.

Conventions used throughout the package:

* poses are camera-from-world: ``x_cam = R @ x_world + t``
* camera axes are +x right, +y down, +z forward
* depth buffers hold *planar* depth (camera-frame z), never ray length
* continuous pixel coordinates: pixel (col, row) has its center at
  ``(col + 0.5, row + 0.5)``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InputError, PixelOutOfBoundsError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "Intrinsics":
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "Intrinsics":
        """Same field of view at ``factor`` times the resolution."""
        w, h = int(round(self.width * factor)), int(round(self.height * factor))
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor,
                          self.cy * factor, w, h)


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHO_TOL, rtol=0):
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InputError("rotation must have determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_center(cls, rotation, center) -> "Pose":
        R = np.asarray(rotation, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        n = np.linalg.norm(right)
        if n < 1e-12:
            raise InputError("view direction parallel to the up vector")
        right /= n
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        # re-orthonormalise so the 1e-9 invariant survives accumulated rounding
        u, _, vt = np.linalg.svd(R)
        return cls.from_center(u @ vt, eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.rotation[2].copy()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: Intrinsics
    pose: Pose
    near: float = 1e-3
    far: float = 10.0

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise InputError(f"need 0 < near < far, got {self.near}, {self.far}")

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
            "rotation": [float(v) for v in self.pose.rotation.ravel()],
            "translation": [float(v) for v in self.pose.translation],
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        k = Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        pose = Pose(np.reshape(d["rotation"], (3, 3)), d["translation"])
        return cls(k, pose, float(d["near"]), float(d["far"]))

    def with_intrinsics(self, intrinsics: Intrinsics) -> "Camera":
        return Camera(intrinsics, self.pose, self.near, self.far)

    def pixel_centers(self) -> np.ndarray:
        """(H*W, 2) array of (u, v) pixel centers in row-major order."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u.ravel() + 0.5, v.ravel() + 0.5], axis=1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray = field(repr=False)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def camera_directions(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    """Unnormalised camera-frame directions with unit z for (N, 2) pixels."""
    k = camera.intrinsics
    pixels = np.asarray(pixels, dtype=np.float64)
    d = np.empty(pixels.shape[:-1] + (3,))
    d[..., 0] = (pixels[..., 0] - k.cx) / k.fx
    d[..., 1] = (pixels[..., 1] - k.cy) / k.fy
    d[..., 2] = 1.0
    return d


def generate_rays(camera: Camera, pixels: np.ndarray):
    """Vectorised ray generation.

    Returns ``(origins, directions, z_factor)`` where ``z_factor`` is the
    camera-frame z component of each unit direction, i.e. the factor that
    turns a distance along the ray into planar depth.
    """
    d_cam = camera_directions(camera, pixels)
    norm = np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_cam = d_cam / norm
    directions = d_cam @ camera.pose.rotation
    origins = np.broadcast_to(camera.center, directions.shape).copy()
    return origins, directions, d_cam[..., 2].copy()


def generate_ray(camera: Camera, pixel) -> Ray:
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise PixelOutOfBoundsError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height}")
    o, d, _ = generate_rays(camera, np.array([[u, v]]))
    return Ray(o[0], d[0])


def project_points(camera: Camera, points: np.ndarray):
    """Project (N, 3) world points. Returns ``(uv, depth)``.

    No visibility check: rows with ``depth <= 0`` carry meaningless pixels
    and must be masked by the caller.
    """
    pc = camera.pose.world_to_camera(points)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.intrinsics.fx * pc[..., 0] / z + camera.intrinsics.cx
        v = camera.intrinsics.fy * pc[..., 1] / z + camera.intrinsics.cy
    return np.stack([u, v], axis=-1), z


def project_point(camera: Camera, point):
    uv, z = project_points(camera, np.asarray(point, dtype=np.float64)[None])
    if not z[0] > 0:
        raise BehindCameraError(f"point {point} has camera depth {z[0]}")
    return uv[0], float(z[0])


def unproject(camera: Camera, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Lift pixels with planar depth to world points."""
    pc = camera_directions(camera, pixels) * np.asarray(depth, dtype=np.float64)[..., None]
    return camera.pose.camera_to_world(pc)


def reproject_pixels(pixels: np.ndarray, depth: np.ndarray, cam_f: Camera, cam_o: Camera):
    """Vectorised warp of pixels with depth from ``cam_f`` into ``cam_o``.

    Returns ``(uv_o, depth_o)``; ``depth_o <= 0`` marks points behind ``cam_o``.
    """
    if cam_f is cam_o:
        return np.array(pixels, dtype=np.float64), np.array(depth, dtype=np.float64)
    return project_points(cam_o, unproject(cam_f, pixels, depth))


def reproject(pixel_f, depth_f: float, cam_f: Camera, cam_o: Camera):
    if not depth_f > 0:
        raise InputError("depth must be positive")
    uv, z = reproject_pixels(np.asarray(pixel_f, dtype=np.float64)[None],
                             np.array([depth_f], dtype=np.float64), cam_f, cam_o)
    if not z[0] > 0:
        raise BehindCameraError("reprojected point is behind the target camera")
    return uv[0], float(z[0])


def elevate_camera(camera: Camera, offset: float) -> Camera:
    """Pull the camera back along its optical axis by ``offset`` scene units."""
    if offset < 0:
        raise InputError("offset must be non-negative")
    if offset == 0:
        return camera
    center = camera.center - offset * camera.pose.forward
    pose = Pose.from_center(camera.pose.rotation, center)
    return Camera(camera.intrinsics, pose, camera.near, camera.far + offset)
