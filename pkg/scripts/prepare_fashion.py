"""Convert the per-class JSON dumps of the npm ``fashion-mnist`` package to IDX files.

The package ships ``src/clothes/{0..9}.json``, each ``{"data": [[784 ints], ...]}``
with about 7000 images per class.  The original train/test split is not
recorded there, so this script builds one deterministically: the first 6000
non-empty images of each class go to the training set and the remainder to
the test set.  Both sets are then shuffled with a fixed seed so that any
prefix ``[:n]`` is class balanced.

Usage::

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 scripts/prepare_fashion.py package/src/clothes /root/data/fashion
"""

import argparse
import json
import os

import numpy as np

from spikeae.data_io import ImageSet, save_idx

PER_CLASS_TRAIN = 6000


def load_class(path):
    with open(path) as f:
        rows = [r for r in json.load(f)["data"] if len(r) == 784]
    return np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("clothes_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    splits = {"train": ([], []), "test": ([], [])}
    for c in range(10):
        imgs = load_class(os.path.join(args.clothes_dir, f"{c}.json"))
        for name, part in (("train", imgs[:PER_CLASS_TRAIN]), ("test", imgs[PER_CLASS_TRAIN:])):
            splits[name][0].append(part)
            splits[name][1].append(np.full(len(part), c, dtype=np.uint8))

    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    names = {"train": "train", "test": "t10k"}
    for split, (imgs, labels) in splits.items():
        imgs, labels = np.concatenate(imgs), np.concatenate(labels)
        order = rng.permutation(len(imgs))
        prefix = os.path.join(args.out_dir, names[split])
        save_idx(f"{prefix}-images-idx3-ubyte", f"{prefix}-labels-idx1-ubyte", ImageSet(imgs[order], labels[order]))
        print(f"{split}: {len(imgs)} images -> {prefix}-*")


if __name__ == "__main__":
    main()
