"""Run the desk-scale MNIST label-shift protocol (784-128-10, 3 x 2000 examples).

Without ``--images``/``--labels`` the 5000-image sample from mlxtend is
converted to IDX under ``data/`` first. Extra arguments go to
``crossprop run-mnist``.
"""
import sys
from pathlib import Path

from crossprop.cli import main

from make_mnist_subset_idx import write_subset

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--images" not in args:
        images, labels = Path("data/mnist-subset-images.idx"), Path("data/mnist-subset-labels.idx")
        if not (images.exists() and labels.exists()):
            images, labels = write_subset("data")
        args += ["--images", str(images), "--labels", str(labels)]
    if "--out" not in args:
        args += ["--out", "results/mnist"]
    sys.exit(main(["run-mnist", "--config", "scaled-mnist"] + args))
