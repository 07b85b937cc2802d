#!/usr/bin/env python3
"""Convert the per-digit JSON files of the npm `mnist` package into gzipped IDX files.

The package ships 10000 MNIST digits as flattened 28x28 arrays with pixel
values stored as byte/255 rounded to three decimals. The original bytes are
recovered with round(v * 255). For each class the last `--test-per-class`
digits go to the test split, the rest to the train pool.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_desk_mnist.py package/src/digits data/mnist-desk
"""
import argparse
import gzip
import json
import pathlib
import struct


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archive bytes reproducible.
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-per-class", type=int, default=500)
    args = ap.parse_args()

    splits = {"train": ([], []), "test": ([], [])}
    for digit in range(10):
        values = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        assert len(values) % 784 == 0
        count = len(values) // 784
        for k in range(count):
            img = bytes(round(v * 255) for v in values[k * 784:(k + 1) * 784])
            split = "test" if k >= count - args.test_per_class else "train"
            splits[split][0].append(img)
            splits[split][1].append(digit)

    # Interleave classes so file order carries no label structure.
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, prefix in (("train", "train"), ("test", "t10k")):
        images, labels = splits[name]
        order = sorted(range(len(labels)), key=lambda i: (i * 7919) % len(labels))
        write_idx(args.out_dir / f"{prefix}-images-idx3-ubyte.gz", 0x803,
                  (len(order), 28, 28), b"".join(images[i] for i in order))
        write_idx(args.out_dir / f"{prefix}-labels-idx1-ubyte.gz", 0x801,
                  (len(order),), bytes(labels[i] for i in order))
        print(name, len(order))


if __name__ == "__main__":
    main()
