#!/usr/bin/env python3
"""Convert a torchvision dataset into the on-disk layout read by load_dataset().

    tools/prepare_dataset.py mnist --root data [--download-dir ~/.cache/gencond]

Writes <root>/<name>/{train,test}.json plus raw little-endian arrays:
<split>.images.f32 ([N, C, H, W], pixel values in [0, 1]) and <split>.labels.i64.
Both manifests carry the per-channel mean/std of the train split.
"""

import argparse
import json
from pathlib import Path

import numpy as np

SOURCES = {
    "mnist": ("MNIST", 10),
    "fashion-mnist": ("FashionMNIST", 10),
    "cifar10": ("CIFAR10", 10),
    "cifar100": ("CIFAR100", 100),
    "svhn": ("SVHN", 10),
}


def fetch(name, split, download_dir):
    import torchvision

    cls_name, _ = SOURCES[name]
    cls = getattr(torchvision.datasets, cls_name)
    if name == "svhn":
        ds = cls(download_dir, split=split, download=True)
        images, labels = ds.data, ds.labels
    else:
        ds = cls(download_dir, train=(split == "train"), download=True)
        images, labels = np.asarray(ds.data), np.asarray(ds.targets)
        if images.ndim == 3:
            images = images[:, None]
        else:
            images = images.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(images, dtype="<f4") / np.float32(255.0), np.asarray(labels, dtype="<i8")


def write_split(out, name, split, images, labels, num_classes, mean, std):
    images.astype("<f4").tofile(out / f"{split}.images.f32")
    labels.astype("<i8").tofile(out / f"{split}.labels.i64")
    manifest = {
        "name": name,
        "split": split,
        "n": int(len(labels)),
        "channels": int(images.shape[1]),
        "height": int(images.shape[2]),
        "width": int(images.shape[3]),
        "num_classes": num_classes,
        "mean": mean,
        "std": std,
        "images": f"{split}.images.f32",
        "labels": f"{split}.labels.i64",
    }
    (out / f"{split}.json").write_text(json.dumps(manifest, indent=2) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("name", choices=sorted(SOURCES))
    parser.add_argument("--root", type=Path, default=Path("data"))
    parser.add_argument("--download-dir", type=Path, default=Path.home() / ".cache" / "gencond")
    args = parser.parse_args()

    out = args.root / args.name
    out.mkdir(parents=True, exist_ok=True)
    num_classes = SOURCES[args.name][1]
    train_x, train_y = fetch(args.name, "train", args.download_dir)
    mean = train_x.astype(np.float64).mean(axis=(0, 2, 3)).tolist()
    std = train_x.astype(np.float64).std(axis=(0, 2, 3)).tolist()
    write_split(out, args.name, "train", train_x, train_y, num_classes, mean, std)
    test_x, test_y = fetch(args.name, "test", args.download_dir)
    write_split(out, args.name, "test", test_x, test_y, num_classes, mean, std)
    print(f"wrote {len(train_y)} train / {len(test_y)} test samples to {out}")


if __name__ == "__main__":
    main()
