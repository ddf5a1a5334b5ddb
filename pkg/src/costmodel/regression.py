"""
Activation-memory regression under a fixed token budget.

With b·N = T held constant, a2·b·N² + a1·b·N + a0 collapses to the line
(T·a2)·N + (T·a1 + a0), so a single OLS line fit in N separates the
quadratic (attention-score) part from the linear part.
"""
from dataclasses import dataclass
from typing import Sequence

from src.costmodel.profiler import MeasuredPoint
from src.errors import ArgumentError, PoorFitError
from src.numerics.fitting import LineFit, ols_line_fit

# Fitted activation line for BERT-Base at b·N = 4096, in GB.
BERT_BASE_ACTIVATION_LINE = LineFit(slope=0.00715, intercept=4.83)
BERT_BASE_TOKENS_PER_BATCH = 4096


@dataclass(frozen=True)
class RegressionFit:
    tokens_per_batch: int
    slope: float            # T·a2
    linear_term: float      # T·a1 + a0; a1 and a0 are not separately identifiable
    r_squared: float = 1.0
    n_points: int = 0

    @property
    def a2(self) -> float:
        return self.slope / self.tokens_per_batch

    def quadratic_part(self, N: float, n: int = 1) -> float:
        return self.slope * N / n

    def predict(self, N: float, n: int = 1) -> float:
        return self.quadratic_part(N, n) + self.linear_term

    @classmethod
    def from_line(cls, line: LineFit, tokens_per_batch: int) -> "RegressionFit":
        return cls(tokens_per_batch, line.slope, line.intercept, line.r_squared, 0)


def regress_activation(points: Sequence[MeasuredPoint], require_r2: float | None = None) -> RegressionFit:
    if not points:
        raise ArgumentError("no measurements to regress")
    budgets = {p.seq_len * p.batch_size for p in points}
    if len(budgets) != 1:
        raise ArgumentError(f"points do not share b·N: {sorted(budgets)}")
    if len({p.seq_len for p in points}) < 3:
        raise ArgumentError("need at least 3 distinct sequence lengths")

    line = ols_line_fit([p.seq_len for p in points], [p.activation_bytes for p in points])
    fit = RegressionFit(budgets.pop(), line.slope, line.intercept, line.r_squared, len(points))
    if require_r2 is not None and fit.r_squared < require_r2:
        raise PoorFitError(f"R^2 = {fit.r_squared:.6f} below required {require_r2}")
    return fit


@dataclass(frozen=True)
class ReductionRow:
    seq_len: int
    batch_size: int
    num_blocks: int
    linear_est: float
    quadratic_est: float
    static: float = 0.0

    @property
    def model(self) -> str:
        return "BERT" if self.num_blocks == 1 else f"BlockBERT n={self.num_blocks}"

    @property
    def activation_est(self) -> float:
        return self.linear_est + self.quadratic_est

    @property
    def total_est(self) -> float:
        return self.activation_est + self.static


def reduction_table(fit: RegressionFit, seq_lens: Sequence[int], blocks: Sequence[int] = (1, 2, 3),
                    static: float = 0.0) -> list[ReductionRow]:
    """O(N) and O(N²)/n estimates for every (N, n); the n=1 row is the dense model."""
    rows = []
    for N in seq_lens:
        for n in blocks:
            if n < 1:
                raise ArgumentError(f"block count must be positive, got {n}")
            rows.append(ReductionRow(N, fit.tokens_per_batch // N, n, fit.linear_term,
                                     fit.quadratic_part(N, n), static))
    return rows


def memory_saving(row: ReductionRow, dense: ReductionRow) -> float:
    """Fraction of total training memory saved relative to the dense row."""
    if dense.total_est <= 0:
        raise ArgumentError("dense row has no memory to save")
    return 1.0 - row.total_est / dense.total_est
