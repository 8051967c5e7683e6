#!/usr/bin/env python3
"""Convert the digit sample bundled with the npm `mnist` package into IDX files.

The package ships `src/digits/<d>.json`, each holding a flat array of
28x28 images with pixel intensities scaled to [0, 1] and rounded to three
decimals. This script restores 8-bit intensities, interleaves the classes
with a fixed permutation, and writes a standard big-endian IDX pair:

    images.idx3-ubyte  (magic 0x00000803, n, 28, 28, pixels)
    labels.idx1-ubyte  (magic 0x00000801, n, labels)

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/npm_mnist_to_idx.py package data/mnist
"""

import json
import random
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    pkg = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        flat = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(flat) // 784
        for k in range(n):
            img = bytes(
                min(255, max(0, round(v * 255))) for v in flat[k * 784 : (k + 1) * 784]
            )
            samples.append((img, digit))

    random.Random(0).shuffle(samples)

    with open(out / "images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for img, _ in samples:
            f.write(img)
    with open(out / "labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))

    print(f"wrote {len(samples)} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
