import numpy as np
from PIL import Image


def build_tree(root, categories=("widget",), train=5, good=2, defect=2,
               with_masks=True, size=(70, 70)):
    """Lay out a small MVTec-style dataset of random RGB noise images."""
    rng = np.random.default_rng(99)
    for category in categories:
        for sub, count in [("train/good", train), ("test/good", good),
                           ("test/scratch", defect)]:
            directory = root / category / sub
            directory.mkdir(parents=True)
            for i in range(count):
                pixels = (rng.random((*size, 3)) * 255).astype(np.uint8)
                Image.fromarray(pixels).save(directory / f"{i:03d}.png")
        if with_masks:
            gt = root / category / "ground_truth" / "scratch"
            gt.mkdir(parents=True)
            for i in range(defect):
                mask = np.zeros(size, dtype=np.uint8)
                mask[10:30, 10:30] = 255
                Image.fromarray(mask).save(gt / f"{i:03d}_mask.png")
    return root
