#!/usr/bin/env python3
"""Build the desk-scale MNIST subset as gzipped IDX files.

The source is the `mnist` npm package, which ships the first 10,000 digits of the
MNIST training set as JSON (pixel / 255 rounded to 3 decimals, exactly invertible).
A seeded permutation splits them 8,000 / 2,000 into train / test.

    python3 scripts/fetch_mnist.py [--package DIR] [--out data]
"""
import argparse
import gzip
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def load_package(root):
    pixels, labels = [], []
    for d in range(10):
        flat = json.loads((root / "src" / "digits" / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            img = bytes(round(v * 255) for v in flat[i : i + 784])
            pixels.append(img)
            labels.append(d)
    return pixels, labels


def fetch_package(tmp):
    subprocess.run(["npm", "pack", "mnist", "--silent"], cwd=tmp, check=True)
    tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
    with tarfile.open(tgz) as t:
        t.extractall(tmp)
    return pathlib.Path(tmp) / "package"


def write_idx(path, images, labels):
    n = len(labels)
    with gzip.GzipFile(path.with_suffix(".images.idx.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(path.with_suffix(".labels.idx.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--package", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data"))
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=20170101)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        root = args.package or fetch_package(tmp)
        pixels, labels = load_package(root)

    order = list(range(len(labels)))
    random.Random(args.seed).shuffle(order)
    train, test = order[: args.train], order[args.train :]
    args.out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", train), ("test", test)):
        write_idx(args.out / f"mnist-{name}", [pixels[i] for i in idx], [labels[i] for i in idx])
        print(f"{name}: {len(idx)} examples")


if __name__ == "__main__":
    main()
