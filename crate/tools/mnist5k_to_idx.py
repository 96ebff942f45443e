#!/usr/bin/env python3
"""Convert the 5000-sample MNIST subset shipped in the mlxtend wheel to IDX files.

Usage: mnist5k_to_idx.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>

Stratified split: per digit the first 400 rows go to train, the last 100 to
test. Rows are interleaved round-robin across digits so files are not sorted
by class.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def read_rows(src):
    if src.endswith(".whl"):
        raw = zipfile.ZipFile(src).read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = Path(src).read_bytes()
    rows = []
    for line in gzip.decompress(raw).decode().strip().split("\n"):
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((vals[:-1], vals[-1]))
    return rows


def interleave(groups):
    out = []
    for i in range(max(len(g) for g in groups)):
        for g in groups:
            if i < len(g):
                out.append(g[i])
    return out


def write_idx(out, prefix, rows):
    n = len(rows)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + bytes(
        p for pix, _ in rows for p in pix
    )
    labels = struct.pack(">II", 0x00000801, n) + bytes(lab for _, lab in rows)
    # mtime=0 keeps the archives byte-identical across runs
    for name, payload in ((f"{prefix}-images-idx3-ubyte.gz", images),
                          (f"{prefix}-labels-idx1-ubyte.gz", labels)):
        with open(out / name, "wb") as fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                gz.write(payload)


def main():
    src, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    by_class = {}
    for pix, lab in read_rows(src):
        by_class.setdefault(lab, []).append((pix, lab))
    digits = sorted(by_class)
    train = interleave([by_class[d][:400] for d in digits])
    test = interleave([by_class[d][400:] for d in digits])
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
