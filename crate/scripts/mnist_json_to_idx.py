#!/usr/bin/env python3
"""Convert the per-digit JSON dumps shipped in the npm `mnist` package
(10,000 MNIST digits, pixels pre-scaled to [0,1] with 3 decimals) into
gzip-compressed IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist-subset

Pixels are mapped back to bytes with round(v * 255). Samples are
interleaved with a fixed-seed shuffle so class order is not blocked.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_gz(path, payload):
    with open(path, "wb") as raw:
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            gz.write(payload)


def main(src, dst):
    samples = []
    for digit in range(10):
        with open(Path(src) / f"{digit}.json") as fh:
            flat = json.load(fh)["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784])
            samples.append((pixels, digit))
    random.Random(20191006).shuffle(samples)

    n = len(samples)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(s[0] for s in samples)
    labels = struct.pack(">II", 0x00000801, n) + bytes(s[1] for s in samples)
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    write_gz(out / "images-idx3-ubyte.gz", images)
    write_gz(out / "labels-idx1-ubyte.gz", labels)
    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
