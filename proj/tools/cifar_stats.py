#!/usr/bin/env python3
"""Per-channel mean and std of a CIFAR binary training set.

Prints a JSON fragment that can be pasted into the "data" section of a run
config ("mean" / "std"). Statistics are over all training pixels in [0, 1].
"""

import argparse
import json
import pathlib
import sys

import numpy as np

PIXELS = 3 * 32 * 32


def load(directory: pathlib.Path) -> np.ndarray:
    cifar100 = directory / "train.bin"
    if cifar100.exists():
        files, label_bytes = [cifar100], 2
    else:
        files = [directory / f"data_batch_{i}.bin" for i in range(1, 6)]
        label_bytes = 1
    record = label_bytes + PIXELS
    chunks = []
    for path in files:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % record:
            sys.exit(f"{path}: {raw.size} bytes is not a multiple of {record}")
        chunks.append(raw.reshape(-1, record)[:, label_bytes:])
    return np.concatenate(chunks).reshape(-1, 3, 32 * 32).astype(np.float64) / 255.0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("directory", type=pathlib.Path)
    args = parser.parse_args()
    pixels = load(args.directory)
    stats = {
        "mean": pixels.mean(axis=(0, 2)).round(4).tolist(),
        "std": pixels.std(axis=(0, 2)).round(4).tolist(),
    }
    print(json.dumps(stats))


if __name__ == "__main__":
    main()
