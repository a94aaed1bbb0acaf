#!/usr/bin/env python3
"""Build gzipped IDX files from the 10k MNIST digits bundled in the npm
`mnist` package (MIT licensed).

    python3 scripts/fetch_digits.py [--out data] [--package-dir DIR]

Without --package-dir the package is fetched with `npm pack`.
"""

import argparse
import gzip
import json
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

PACKAGE = "mnist@1.1.0"


def fetch(tmp: Path) -> Path:
    name = subprocess.run(
        ["npm", "pack", PACKAGE, "--silent"], cwd=tmp, check=True, capture_output=True, text=True
    ).stdout.strip().splitlines()[-1]
    with tarfile.open(tmp / name) as tar:
        tar.extractall(tmp, filter="data")
    return tmp / "package"


def write_idx(path: Path, arr: np.ndarray) -> None:
    header = struct.pack(">BBBB", 0, 0, 0x08, arr.ndim) + b"".join(struct.pack(">I", d) for d in arr.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + arr.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--package-dir")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        pkg = Path(args.package_dir) if args.package_dir else fetch(Path(tmp))
        images, labels = [], []
        for digit in range(10):
            data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
            arr = np.asarray(data, dtype=np.float64).reshape(-1, 28, 28)
            images.append(np.rint(np.clip(arr, 0, 1) * 255))
            labels.append(np.full(len(arr), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    # interleave classes deterministically so prefixes are balanced
    order = np.random.default_rng(0).permutation(len(labels))
    write_idx(out / "digits-images-idx3-ubyte.gz", images[order])
    write_idx(out / "digits-labels-idx1-ubyte.gz", labels[order])
    print(f"wrote {len(labels)} images to {out}")


if __name__ == "__main__":
    main()
