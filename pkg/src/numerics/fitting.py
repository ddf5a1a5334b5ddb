from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.errors import DimensionError, SingularDesignError


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    residual_sum_squares: float = 0.0
    r_squared: float = 1.0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=np.float64) + self.intercept


def ols_line_fit(xs: Sequence[float], ys: Sequence[float]) -> LineFit:
    """
    Ordinary least squares fit of ys = slope * xs + intercept.

    Raises:
        DimensionError: mismatched lengths or fewer than 2 points
        SingularDesignError: every x is the same, so the slope is undefined
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise DimensionError(f"need two equal-length 1-d samples, got {x.shape} and {y.shape}")
    if np.ptp(x) == 0.0:
        raise SingularDesignError(f"all xs equal ({x[0]}); design matrix is singular")

    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)

    resid = y - (slope * x + intercept)
    rss = float(resid @ resid)
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 1.0 - rss / tss if tss > 0.0 else 1.0
    return LineFit(float(slope), float(intercept), rss, r2)
