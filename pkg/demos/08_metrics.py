"""Scene-level panoptic quality and mIoU on tiny hand-made maps."""
import numpy as np

from ulft.evaluation import miou, pq_scene
from ulft.scene import ClassId

gt = np.zeros((1, 10), dtype=np.int64)
gt[0, :5] = 1
gt[0, 8] = 2
pred = np.zeros_like(gt)
pred[0, :3] = 1     # IoU 0.6 with instance 1
pred[0, 9] = 3      # false positive; instance 2 is missed
r = pq_scene([pred], [gt])
print(f"PQ {r.pq:.1f}  (tp {r.tp}, fp {r.fp}, fn {r.fn}, mean IoU {r.mean_iou:.2f})")

sem_gt = np.array([[1, 1, 2, 2], [3, 3, 4, 0]])
sem_pred = np.array([[1, 2, 2, 2], [3, 4, 4, 1]])
iou, m = miou([sem_pred], [sem_gt])
print("per-class IoU", {ClassId(k).name.lower(): round(v, 3) for k, v in iou.items()}, "mIoU", round(m, 3))
