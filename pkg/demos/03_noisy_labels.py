"""Simulated 2D segmenter output: noisy semantics and over-segmented instance masks."""
import numpy as np

from ulft.evaluation import miou
from ulft.labels import OversegModel, SemanticNoiseModel, corrupt_semantic, oversegment_instances
from ulft.scene import ClassId, generate_scene, make_camera_rig, render_gt

scene = generate_scene(1)
cams = make_camera_rig(scene, 20, seed=1)
gts = [render_gt(scene, c) for c in cams]

noise = SemanticNoiseModel(seed=1)
noisy = [corrupt_semantic(g, c, noise, i) for i, (g, c) in enumerate(zip(gts, cams))]
iou, m = miou(noisy, [g.semantic for g in gts])
print("noisy label IoU per class", {ClassId(k).name.lower(): round(v, 3) for k, v in iou.items()}, "mIoU", round(m, 3))

om = OversegModel(seed=1)
for i in range(3):
    ms = oversegment_instances(gts[i], om, i, scene.meters_per_unit)
    n_gt = len(np.unique(gts[i].instance)) - 1
    kinds = [ms.kind[k] for k in ms.ids]
    print(f"view {i}: {n_gt} buildings -> {len(ms)} masks "
          f"({kinds.count('block')} pieces, {kinds.count('window')} nested)")
