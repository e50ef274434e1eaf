"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

The sample is stored sorted by digit, so it is shuffled once with a fixed
seed before writing. Usage: python scripts/make_mnist_subset_idx.py OUT_DIR
"""
import argparse
from pathlib import Path

import numpy as np

from crossprop.mnist import ImageSet, LabelSet, images_to_idx, labels_to_idx


def write_subset(out_dir, seed=0):
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    order = np.random.default_rng(seed).permutation(len(y))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = out / "mnist-subset-images.idx", out / "mnist-subset-labels.idx"
    images.write_bytes(images_to_idx(ImageSet(X[order].astype(np.uint8))))
    labels.write_bytes(labels_to_idx(LabelSet(y[order])))
    return images, labels


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("out_dir", nargs="?", default="data")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    for path in write_subset(a.out_dir, a.seed):
        print(path)
