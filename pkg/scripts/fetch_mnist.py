#!/usr/bin/env python3
"""Fetch a genuine MNIST subset and write it as standard IDX files.

Preferred source is the official four-file IDX distribution: if you already
have it, pass the directory containing the ubyte files via --source and this
script concatenates train+test into one pool. Otherwise the script falls back
to the `mnist` npm package, which bundles 10,000 real MNIST images (the
first 10k of the training set) as per-digit JSON; pixel bytes are recovered
exactly from the stored x/255 values.

Output: <out>/images-idx3-ubyte and <out>/labels-idx1-ubyte, a single pool
that experiment configs split into train/val/test.
"""

import argparse
import gzip
import json
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

def _read_official(path: Path):
    raw = path.read_bytes() if path.suffix != ".gz" else gzip.decompress(path.read_bytes())
    (magic,) = struct.unpack(">I", raw[:4])
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    return dims, body


def _find(source: Path, stem: str) -> Path:
    for candidate in (source / stem, source / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise SystemExit(f"missing {stem}[.gz] under {source}")


def from_official(source: Path, out: Path) -> int:
    images, labels = [], []
    for split in ("train", "t10k"):
        (n, rows, cols), pix = _read_official(_find(source, f"{split}-images-idx3-ubyte"))
        (_,), lab = _read_official(_find(source, f"{split}-labels-idx1-ubyte"))
        images.append(pix.reshape(n, rows * cols))
        labels.append(lab)
    return write_pool(np.concatenate(images), np.concatenate(labels), out)


def from_npm(out: Path) -> int:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist", "--silent"], cwd=tmp, check=True,
                       capture_output=True)
        tarball = next(Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tarball) as tf:
            tf.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            blob = json.loads(
                (Path(tmp) / "package" / "src" / "digits" / f"{digit}.json").read_text())
            flat = np.asarray(blob["data"], dtype=np.float64)
            n = len(flat) // 784
            pixels = np.rint(flat.reshape(n, 784) * 255.0).astype(np.uint8)
            images.append(pixels)
            labels.append(np.full(n, digit, dtype=np.uint8))
    return write_pool(np.concatenate(images), np.concatenate(labels), out)


def write_pool(pixels: np.ndarray, labels: np.ndarray, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(pixels.astype(np.uint8).tobytes())
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.astype(np.uint8).tobytes())
    return n


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--source", default=None,
                        help="directory with the official IDX files (optionally .gz)")
    args = parser.parse_args()
    out = Path(args.out)

    if args.source is not None:
        n = from_official(Path(args.source), out)
    else:
        if shutil.which("npm") is None:
            print("npm not found and no --source given", file=sys.stderr)
            return 1
        n = from_npm(out)
    print(f"wrote {n} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
