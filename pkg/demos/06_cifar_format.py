"""The CIFAR binary loader and the image augmentations, demonstrated on a
synthesized file in the standard distribution format (no download needed).

Record layout: 1 label byte (CIFAR-10) or coarse+fine label bytes
(CIFAR-100), then 3072 pixel bytes as full R, G, B planes. Features come
out flattened in (32, 32, 3) order, scaled to [0, 1].

Run:  python demos/06_cifar_format.py
"""

import io
import tempfile
from pathlib import Path

import numpy as np

from bisoncl.stream import (AugmentPolicy, CIFAR10_CLASS_NAMES,
                            CIFAR10_CONFUSION_SCHEDULE, augment, hflip_image,
                            load_cifar_binary)

rng = np.random.default_rng(1)

# --- synthesize a small batch file -------------------------------------------
buf = io.BytesIO()
for i in range(20):
    label = i % 10
    # a vertical gradient in the red plane, constant green/blue per sample
    red = np.tile(np.linspace(0, 255, 32, dtype=np.uint8)[:, None], (1, 32))
    green = np.full((32, 32), (i * 12) % 256, dtype=np.uint8)
    blue = np.full((32, 32), 255 - (i * 12) % 256, dtype=np.uint8)
    buf.write(bytes([label]))
    buf.write(red.tobytes() + green.tobytes() + blue.tobytes())

path = Path(tempfile.mkdtemp()) / "batch.bin"
path.write_bytes(buf.getvalue())
print(f"wrote {path.stat().st_size} bytes "
      f"({path.stat().st_size // 3073} records of 3073)")

# --- parse ---------------------------------------------------------------------
feats, labels = load_cifar_binary(path)
print("features:", feats.shape, "labels:", labels[:10].tolist())
print("class names:", [CIFAR10_CLASS_NAMES[l] for l in labels[:5]])
img = feats[0].reshape(32, 32, 3)
print(f"pixel range [{feats.min():.3f}, {feats.max():.3f}]; "
      f"red channel rises down the image: top {img[0, 0, 0]:.2f} "
      f"bottom {img[31, 0, 0]:.2f}")

# --- the confusion-protocol schedule ---------------------------------------------
print("\nfixed class order for the confusion protocol:")
for t, classes in enumerate(CIFAR10_CONFUSION_SCHEDULE):
    print(f"  task {t}: {[CIFAR10_CLASS_NAMES[c] for c in classes]}")

# --- image augmentation -----------------------------------------------------------
policy = AugmentPolicy(kind="image-basic", image_hw=(32, 32), pad=4)
aug = augment(feats[:4], policy, rng)
print("\naugmented batch shape:", aug.shape)
print("mean abs change from pad-crop-flip:",
      float(np.mean(np.abs(aug - feats[:4]))))
flipped_twice = hflip_image(hflip_image(feats[0], (32, 32)), (32, 32))
print("double horizontal flip restores the image:",
      bool(np.array_equal(flipped_twice, feats[0])))
