"""CSV and JSON result writers plus console summaries for CLI runs."""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from .asymptotics import MetricReport
from .montecarlo import EmpiricalReport

CSV_COLUMNS = [
    "sweep_value",
    "lambda1",
    "rho",
    "t_x",
    "predicted_pb",
    "predicted_kappa",
    "predicted_sinad_lb",
    "predicted_sinad_lb_db",
    "predicted_ber",
    "predicted_scale",
    "empirical_pb",
    "empirical_kappa",
    "empirical_sinad_lb",
    "empirical_sinad_lb_db",
    "empirical_ber",
    "empirical_sinad_mean",
    "std_pb",
    "std_kappa",
    "std_sinad_lb",
    "std_ber",
    "w2_x",
    "w2_e_minus",
    "w2_e_plus",
    "nonconverged",
    "seed",
]

SEED_DERIVATION = (
    "numpy Philox generator keyed by SeedSequence(seed, spawn_key=(channel, draw, purpose)); "
    "purpose 0 = channel and symbols, 1 = receiver noise, 2 = limiting-law reference sample"
)


def to_db(value: float) -> float:
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def result_row(
    sweep_value: Optional[float],
    lambda1: float,
    rho: float,
    t_x: Optional[float],
    prediction: Optional[MetricReport],
    empirical: Optional[EmpiricalReport] = None,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    row: Dict[str, Any] = {column: math.nan for column in CSV_COLUMNS}
    row.update(sweep_value=sweep_value, lambda1=lambda1, rho=rho, t_x=t_x, seed=seed, nonconverged=None)
    if prediction is not None:
        row.update(
            predicted_pb=prediction.p_b,
            predicted_kappa=prediction.kappa,
            predicted_sinad_lb=prediction.sinad_lb,
            predicted_sinad_lb_db=to_db(prediction.sinad_lb),
            predicted_ber=prediction.ber,
            predicted_scale=prediction.scale,
        )
    if empirical is not None:
        metrics = empirical.metrics
        row.update(
            empirical_pb=metrics.p_b,
            empirical_kappa=metrics.kappa,
            empirical_sinad_lb=metrics.sinad_lb,
            empirical_sinad_lb_db=to_db(metrics.sinad_lb),
            empirical_ber=metrics.ber,
            empirical_sinad_mean=empirical.sinad_mean,
            std_pb=empirical.std_errors.get("p_b"),
            std_kappa=empirical.std_errors.get("kappa"),
            std_sinad_lb=empirical.std_errors.get("sinad_lb"),
            std_ber=empirical.std_errors.get("ber"),
            w2_x=empirical.w2_x,
            w2_e_minus=empirical.w2_e_cond[0],
            w2_e_plus=empirical.w2_e_cond[1],
            nonconverged=empirical.num_nonconverged,
        )
    return row


def sidecar_path(output_path: Path) -> Path:
    return Path(output_path).with_suffix(".json")


def write_results(
    rows: List[Dict[str, Any]],
    sidecar: Dict[str, Any],
    output_path: Path,
    float_format: str = "%.12g",
) -> Path:
    """Write the CSV (fixed column order, '.' decimal, empty cells for missing values) and its JSON sidecar."""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    frame["nonconverged"] = pd.array([row["nonconverged"] for row in rows], dtype="Int64")
    frame["seed"] = pd.array([row["seed"] for row in rows], dtype="UInt64")
    frame.to_csv(output_path, index=False, float_format=float_format, na_rep="", encoding="utf-8")

    with open(sidecar_path(output_path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")
    return output_path


def render_summary(console: Console, title: str, rows: List[Dict[str, Any]]) -> None:
    table = Table(title=title)
    table.add_column("value", justify="right", style="cyan")
    table.add_column("P_b", justify="right")
    table.add_column("kappa", justify="right")
    table.add_column("SINAD_lb [dB]", justify="right", style="green")
    table.add_column("BER", justify="right", style="magenta")
    table.add_column("emp. SINAD_lb [dB]", justify="right", style="green")
    table.add_column("emp. BER", justify="right", style="magenta")

    def fmt(value: Any, spec: str = ".4g") -> str:
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return "-"
        return format(value, spec)

    for row in rows:
        table.add_row(
            fmt(row["sweep_value"]),
            fmt(row["predicted_pb"]),
            fmt(row["predicted_kappa"]),
            fmt(row["predicted_sinad_lb_db"], ".2f"),
            fmt(row["predicted_ber"], ".3e"),
            fmt(row["empirical_sinad_lb_db"], ".2f"),
            fmt(row["empirical_ber"], ".3e"),
        )
    console.print(table)
