# app/services/export_service.py
"""CSV and Excel output of experiment logs, plans and comparisons."""
import logging
from io import BytesIO
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill

from app.models.simulation import ExperimentLog
from app.schemas.planner import Plan, PlannerKind

logger = logging.getLogger(__name__)

DEVICE_COLUMNS = [
    "round", "device_id", "depth", "rank_sum", "t_i", "t_round", "avg_wait", "wait_violation",
    "up_bytes", "down_bytes", "cum_time", "cum_bytes", "eval_loss", "eval_acc",
]
FLOAT_FORMAT = "%.10g"
DEVICES_CSV = "devices.csv"
SUMMARY_CSV = "summary.csv"


def device_frame(log: ExperimentLog) -> pd.DataFrame:
    """One row per device per round."""
    rows = []
    for report in log.reports:
        for record in report.devices:
            rows.append({
                "round": report.round,
                "device_id": str(record.device_id),
                "depth": record.depth,
                "rank_sum": record.rank_sum,
                "t_i": record.completion_time,
                "t_round": report.round_time,
                "avg_wait": report.avg_wait,
                "wait_violation": int(report.wait_violation),
                "up_bytes": record.up_bytes,
                "down_bytes": record.down_bytes,
                "cum_time": report.cum_time,
                "cum_bytes": report.cum_bytes,
                "eval_loss": report.eval_loss,
                "eval_acc": report.eval_acc,
            })
    return pd.DataFrame(rows, columns=DEVICE_COLUMNS)


def summary_frame(log: ExperimentLog) -> pd.DataFrame:
    """One row per round: deepest depth, total ranks, mean t_i and summed traffic."""
    rows = []
    for report in log.reports:
        devices = report.devices
        rows.append({
            "round": report.round,
            "device_id": "-",
            "depth": max(record.depth for record in devices),
            "rank_sum": sum(record.rank_sum for record in devices),
            "t_i": sum(record.completion_time for record in devices) / len(devices),
            "t_round": report.round_time,
            "avg_wait": report.avg_wait,
            "wait_violation": int(report.wait_violation),
            "up_bytes": report.up_bytes,
            "down_bytes": report.down_bytes,
            "cum_time": report.cum_time,
            "cum_bytes": report.cum_bytes,
            "eval_loss": report.eval_loss,
            "eval_acc": report.eval_acc,
        })
    return pd.DataFrame(rows, columns=DEVICE_COLUMNS)


def to_csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csvs(log: ExperimentLog, output_dir: Path) -> Dict[str, Path]:
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {DEVICES_CSV: output_dir / DEVICES_CSV, SUMMARY_CSV: output_dir / SUMMARY_CSV}
    paths[DEVICES_CSV].write_text(to_csv_text(device_frame(log)), encoding="utf-8")
    paths[SUMMARY_CSV].write_text(to_csv_text(summary_frame(log)), encoding="utf-8")
    logger.info(f"wrote {len(log.reports)} rounds to {output_dir}")
    return paths


def plan_frame(plan: Plan) -> pd.DataFrame:
    rows = []
    for device_id, config in sorted(plan.configs.items()):
        rows.append({
            "device_id": device_id,
            "depth": config.depth,
            "ranks": " ".join(str(rank) for rank in config.ranks),
            "rank_sum": config.rank_sum,
            "predicted_t_i": plan.predicted_times.get(device_id),
            "budget_feasible": int(device_id not in plan.infeasible_devices),
        })
    return pd.DataFrame(rows, columns=["device_id", "depth", "ranks", "rank_sum", "predicted_t_i", "budget_feasible"])


def plan_text(plan: Plan) -> str:
    """Plan table as CSV followed by comment lines with the round-level predictions."""
    lines = [to_csv_text(plan_frame(plan)).rstrip("\n")]
    lines.append(f"# rank_distribution: {' '.join(str(r) for r in plan.rank_distribution)}")
    lines.append(f"# depth_gap: {plan.depth_gap}")
    lines.append(f"# predicted_round_time: {plan.predicted_round_time:.10g}")
    lines.append(f"# predicted_avg_wait: {plan.predicted_avg_wait:.10g}")
    lines.append(f"# wait_violation: {int(plan.wait_violation)}")
    return "\n".join(lines) + "\n"


def comparison_frame(logs: Mapping[PlannerKind, ExperimentLog]) -> pd.DataFrame:
    """
    Per planner: accuracy, totals, mean waiting, and the time and traffic to
    reach the lowest best accuracy among all compared planners, with speedup
    and traffic saving relative to LEGEND when it was run.
    """
    target = min(log.best_accuracy for log in logs.values())
    reference = logs.get(PlannerKind.LEGEND)
    ref_time = reference.time_to_accuracy(target) if reference else None
    ref_bytes = reference.traffic_to_accuracy(target) if reference else None
    rows = []
    for kind, log in logs.items():
        time_to = log.time_to_accuracy(target)
        bytes_to = log.traffic_to_accuracy(target)
        rows.append({
            "planner": kind.label,
            "final_eval_acc": log.final_accuracy,
            "best_eval_acc": log.best_accuracy,
            "final_train_acc": log.final_train_acc,
            "cum_time": log.cumulative_time,
            "cum_bytes": log.cumulative_bytes,
            "mean_wait": log.mean_wait,
            "target_acc": target,
            "time_to_target": time_to,
            "bytes_to_target": bytes_to,
            "legend_speedup": _ratio(time_to, ref_time),
            "legend_traffic_saving": None if bytes_to in (None, 0) or ref_bytes is None else 1 - ref_bytes / bytes_to,
        })
    return pd.DataFrame(rows)


def _ratio(numerator: Optional[float], denominator: Optional[float]) -> Optional[float]:
    if numerator is None or not denominator:
        return None
    return numerator / denominator


def _cell_value(value):
    if pd.isna(value):
        return None
    return value.item() if hasattr(value, "item") else value


def _write_sheet(ws, frame: pd.DataFrame) -> None:
    header_font = Font(bold=True)
    header_fill = PatternFill(start_color="CCCCCC", end_color="CCCCCC", fill_type="solid")
    for col, header in enumerate(frame.columns, 1):
        cell = ws.cell(row=1, column=col, value=header)
        cell.font = header_font
        cell.fill = header_fill
    for row, values in enumerate(frame.itertuples(index=False), 2):
        for col, value in enumerate(values, 1):
            ws.cell(row=row, column=col, value=_cell_value(value))

    for column in ws.columns:
        cells = list(column)
        width = max(len(str(cell.value)) for cell in cells if cell.value is not None)
        ws.column_dimensions[cells[0].column_letter].width = width + 2


def plans_frame(plans: List[Plan]) -> pd.DataFrame:
    rows = []
    for round_index, plan in enumerate(plans):
        for device_id, config in sorted(plan.configs.items()):
            rows.append({
                "round": round_index,
                "device_id": device_id,
                "depth": config.depth,
                "ranks": " ".join(str(rank) for rank in config.ranks),
                "predicted_t_i": plan.predicted_times.get(device_id),
                "depth_gap": plan.depth_gap,
                "cold_start": int(plan.cold_start),
            })
    return pd.DataFrame(rows, columns=["round", "device_id", "depth", "ranks", "predicted_t_i", "depth_gap", "cold_start"])


def create_excel_report(log: ExperimentLog) -> BytesIO:
    """Workbook with sheets Rounds, Devices and Plans."""
    output = BytesIO()
    wb = Workbook()
    ws_rounds = wb.active
    ws_rounds.title = "Rounds"
    _write_sheet(ws_rounds, summary_frame(log))
    _write_sheet(wb.create_sheet("Devices"), device_frame(log))
    _write_sheet(wb.create_sheet("Plans"), plans_frame(log.plans))
    wb.save(output)
    output.seek(0)
    return output
