#!/usr/bin/env python3
"""Convert the 5000-sample MNIST subset bundled with mlxtend into IDX files.

The first 300 images of every digit go to the training split and the
remaining 200 to the test split. Records are interleaved round-robin by
digit so both files hold balanced prefixes.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist-5k
"""
import gzip
import os
import struct
import sys
import zipfile


def write_idx(path, images, labels):
    with gzip.GzipFile(path + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(path + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    by_digit = {d: [] for d in range(10)}
    for line in gzip.decompress(raw).decode().splitlines():
        fields = [int(v) for v in line.split(",")]
        by_digit[fields[-1]].append(fields[:-1])

    os.makedirs(out, exist_ok=True)
    for split, lo, hi in (("train", 0, 300), ("t10k", 300, 500)):
        images, labels = [], []
        for i in range(lo, hi):
            for d in range(10):
                images.append(by_digit[d][i])
                labels.append(d)
        write_idx(os.path.join(out, split), images, labels)


if __name__ == "__main__":
    main()
