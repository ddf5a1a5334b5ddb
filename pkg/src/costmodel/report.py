from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd
from tabulate import tabulate

from src.costmodel.analytic import FLOPS_CONVENTION, CostReport
from src.costmodel.regression import ReductionRow, memory_saving

REPORT_COLUMNS = ["config", "N", "n", "metric", "value"]


def cost_report_rows(label: str, report: CostReport) -> list[dict]:
    metrics = {
        "attention_score_floats": report.attention_score_floats,
        "attention_flops": report.attention_flops,
        "projection_flops": report.projection_flops,
        "ffn_flops": report.ffn_flops,
        "total_flops": report.total_flops,
        "reduction_factor": report.reduction_factor,
    }
    return [{"config": label, "N": report.seq_len, "n": report.num_blocks, "metric": k, "value": v}
            for k, v in metrics.items()]


def reduction_rows(label: str, rows: Sequence[ReductionRow]) -> list[dict]:
    out = []
    for row in rows:
        for metric, value in (("linear_est", row.linear_est), ("quadratic_est", row.quadratic_est),
                              ("activation_est", row.activation_est)):
            out.append({"config": label, "N": row.seq_len, "n": row.num_blocks, "metric": metric, "value": value})
    return out


def to_frame(rows: Iterable[dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=REPORT_COLUMNS)


def write_report_csv(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False)


def format_cost_table(frame: pd.DataFrame) -> str:
    wide = frame.pivot_table(index=["config", "N", "n"], columns="metric", values="value",
                             aggfunc="first", sort=False).reset_index()
    wide.columns.name = None
    return f"FLOPs: {FLOPS_CONVENTION}\n" + tabulate(wide, headers="keys", tablefmt="simple",
                                                     showindex=False, floatfmt=".4g")


def format_reduction_table(rows: Sequence[ReductionRow], unit: str = "GB", digits: int = 2) -> str:
    """Rows shaped like the O(N)/O(N^2) estimate table, plus the saving vs the dense row."""
    dense = {r.seq_len: r for r in rows if r.num_blocks == 1}
    table = []
    for r in rows:
        saving = memory_saving(r, dense[r.seq_len]) if r.seq_len in dense else float("nan")
        table.append([r.seq_len, r.batch_size, r.model, round(r.linear_est, digits),
                      round(r.quadratic_est, digits), f"{100 * saving:.1f}%"])
    headers = ["N", "b", "Model", f"O(N) {unit}", f"O(N^2) {unit}", "saving"]
    return tabulate(table, headers=headers, tablefmt="simple")
