"""Convert an SVHN ``*_32x32.mat`` archive to the raw-tensor format.

Writes ``<out>`` (uint8 ``[N, 3, 32, 32]``) and ``<out stem>.labels.sslt``
(int64 ``[N]``, digit 0 stored as SVHN's label 10 is mapped back to 0).
Needs scipy, which the package itself does not depend on.

    python3 scripts/convert_svhn.py train_32x32.mat data/svhn/train.sslt
"""

import argparse
from pathlib import Path

import numpy as np
from scipy.io import loadmat

from sslosr.data.formats import write_raw_tensor


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("mat")
    p.add_argument("out")
    args = p.parse_args()
    mat = loadmat(args.mat)
    pixels = np.ascontiguousarray(mat["X"].transpose(3, 2, 0, 1))  # [H,W,C,N] -> [N,C,H,W]
    labels = mat["y"].reshape(-1).astype(np.int64) % 10
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.name[: -len(".sslt")] if out.name.endswith(".sslt") else out.name
    print(write_raw_tensor(out, pixels), out)
    print(write_raw_tensor(out.with_name(stem + ".labels.sslt"), labels), out.with_name(stem + ".labels.sslt"))


if __name__ == "__main__":
    main()
