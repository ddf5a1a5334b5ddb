from pathlib import Path

import numpy as np

from src.errors import DimensionError
from src.masking.block_mask import Mask

PBM_MAX_LINE = 70


def write_mask_csv(mask: Mask, path: str | Path) -> None:
    """One row of 0/1 per query position, preceded by a k1..kN header."""
    header = ",".join(f"k{j}" for j in range(1, mask.n_cols + 1))
    np.savetxt(path, mask.bits.astype(np.uint8), fmt="%d", delimiter=",",
               header=header, comments="")


def read_mask_csv(path: str | Path) -> Mask:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    skip = 0 if first[:1].isdigit() else 1
    bits = np.loadtxt(path, dtype=np.uint8, delimiter=",", skiprows=skip, ndmin=2)
    if bits.shape[0] != bits.shape[1]:
        raise DimensionError(f"mask file {path} is not square: {bits.shape}")
    return Mask(bits.astype(bool))


def write_mask_pbm(mask: Mask, path: str | Path, comment: str | None = None) -> None:
    """
    Plain PBM (P1). Kept entries are written as 1 (black), masked entries
    as 0 (white).
    """
    with open(path, "w", encoding="ascii") as f:
        f.write("P1\n")
        if comment:
            f.write(f"# {comment}\n")
        f.write(f"{mask.n_cols} {mask.n_rows}\n")
        per_line = PBM_MAX_LINE // 2
        for row in mask.bits.astype(np.uint8):
            for start in range(0, row.size, per_line):
                f.write(" ".join(str(v) for v in row[start:start + per_line]) + "\n")
