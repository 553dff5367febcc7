"""Ablation sweeps over grid cells and preset recipes.

Every row distills fresh students per seed and reports held-out recall
mean/std across the seeds.  Cell rows follow the usual ablation reading:
baseline supervision plus that one cell (the baseline cell itself is not
double-counted).
"""

from __future__ import annotations

import numpy as np

from . import grid
from .data import SyntheticDataset
from .encoders import DualEncoderBundle
from .estimators import ConaDistiller
from .training import evaluate_recall

_BASELINE_CELL = (grid.LearningType.INTRA_TCH_STU, grid.Strategy.INFONCE)


def _config_for_cell(cell: tuple[grid.LearningType, grid.Strategy], tau: float) -> grid.ConaConfig:
    base = grid.recipe("motis", tau=tau)
    if cell == _BASELINE_CELL:
        return base
    return grid.ConaConfig(terms=base.terms + (grid.build_term(*cell),), tau=tau)


def _one_run(
    dataset: SyntheticDataset,
    teachers: DualEncoderBundle,
    config: grid.ConaConfig,
    seed: int,
    ks: tuple[int, ...],
    distiller_kwargs: dict,
) -> dict[str, dict[int, float]]:
    model = ConaDistiller(teachers=teachers, config=config, seed=seed, **distiller_kwargs)
    model.fit(dataset)
    return evaluate_recall(
        model.bundle_, dataset, role="student", ks=ks,
        split="val", holdout_frac=model.holdout_frac,
    )


def _aggregate(label: str, kind: str, runs: list[dict], ks: tuple[int, ...]) -> dict:
    row: dict = {"label": label, "kind": kind, "seeds": len(runs), "mean": {}, "std": {}}
    for direction, tag in (("text_to_image", "t2i"), ("image_to_text", "i2t")):
        for k in ks:
            values = np.array([run[direction][k] for run in runs])
            row["mean"][f"{tag}_r{k}"] = float(values.mean())
            row["std"][f"{tag}_r{k}"] = float(values.std())
    return row


def run_ablation(
    dataset: SyntheticDataset,
    teachers: DualEncoderBundle,
    cells: list[tuple[grid.LearningType, grid.Strategy]] | str | None = "all",
    recipes: tuple[str, ...] = (),
    seeds: tuple[int, ...] = (0, 1, 2),
    tau: float = 0.07,
    ks: tuple[int, ...] = (1, 5, 10),
    **distiller_kwargs,
) -> list[dict]:
    """Sweep: a baseline row, one row per cell, one row per recipe.

    Args:
        cells: "all" for every valid grid cell, an explicit list, or None.
        recipes: preset names to evaluate as whole configurations.
        seeds: distillation seeds aggregated into each row.
        distiller_kwargs: forwarded to :class:`ConaDistiller` (epochs,
            batch_size, student_layers, ...).

    Returns:
        Result rows with per-direction recall means and stds.
    """
    if cells == "all":
        cell_list = grid.valid_cells()
    elif cells is None:
        cell_list = []
    else:
        cell_list = [
            (grid.LearningType(lt), grid.Strategy(s)) for lt, s in cells
        ]
    rows = []
    jobs: list[tuple[str, str, grid.ConaConfig]] = [
        ("baseline", "baseline", grid.recipe("motis", tau=tau))
    ]
    for cell in cell_list:
        jobs.append((f"{cell[0].value}/{cell[1].value}", "cell", _config_for_cell(cell, tau)))
    for name in recipes:
        jobs.append((f"recipe:{name}", "recipe", grid.recipe(name, tau=tau)))
    for label, kind, config in jobs:
        runs = [_one_run(dataset, teachers, config, seed, ks, distiller_kwargs) for seed in seeds]
        rows.append(_aggregate(label, kind, runs, ks))
    return rows


def format_table(rows: list[dict]) -> str:
    """Human-readable table with mean +/- std per direction and cutoff."""
    if not rows:
        return "(no rows)"
    metrics = sorted(rows[0]["mean"], key=lambda m: (m.split("_")[0], int(m.split("_r")[1])))
    width = max(len(r["label"]) for r in rows) + 2
    header = "label".ljust(width) + "  ".join(m.rjust(16) for m in metrics)
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = [
            f"{row['mean'][m]:.4f} +/- {row['std'][m]:.4f}".rjust(16)
            for m in metrics
        ]
        lines.append(row["label"].ljust(width) + "  ".join(cells))
    return "\n".join(lines)
