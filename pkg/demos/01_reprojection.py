"""Warp a pixel between two cameras through its depth and back again."""
import numpy as np

from ulft.geometry import Camera, Intrinsics, Pose, elevate_camera, reproject, unproject

intr = Intrinsics.from_fov(64, 64, 60.0)
a = Camera(intr, Pose.look_at((0.2, 0.3, 0.6), (0.5, 0.5, 0.05), (0, 0, 1)))
b = Camera(intr, Pose.look_at((0.8, 0.4, 0.5), (0.5, 0.5, 0.05), (0, 0, 1)))

px, d = (20.5, 41.5), 0.55
uv, z = reproject(px, d, a, b)
back, d_back = reproject(uv, z, b, a)
print("pixel in A      ", px, "depth", d)
print("world point     ", np.round(unproject(a, np.array([px]), np.array([d]))[0], 4))
print("pixel in B      ", np.round(uv, 4), "depth", round(z, 4))
print("back in A       ", np.round(back, 6), "depth", round(d_back, 6))

far = elevate_camera(a, 0.3)
uv_f, z_f = reproject(px, d, a, far)
print("pulled back 0.3 ", np.round(uv_f, 4), "depth", round(z_f, 4))
