"""Grid execution: (method x capacity x seed) cells over one dataset.

Upper bounds are computed once per seed and shared by every cell with that
seed. Failures inside a cell are recorded on the cell and do not abort the
rest of the grid. With ``jobs > 1`` seeds run in separate processes; the
assembled report is identical either way.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

from .config import ExperimentConfig, build_dataset, build_model_config, parse_config
from .harness import compute_upper_bounds, run_single
from .metrics import average_accuracy, average_forgetting, average_intransigence
from .report import CellResult, RunReport, aggregate_cells


def _final_metrics(matrix) -> dict:
    k = matrix.num_tasks
    return {
        "aa": average_accuracy(matrix, k),
        "af": average_forgetting(matrix, k) if k >= 2 else None,
        "ai": average_intransigence(matrix, k),
    }


def _all_cells_failed(cfg: ExperimentConfig, seed: int, message: str) -> list:
    return [CellResult(method=method_id, capacity=capacity, seed=seed, error=message)
            for method_id, _ in cfg.method_cfgs
            for capacity in cfg.buffer_capacities]


def _run_seed(raw_config: dict, seed: int) -> list:
    """All cells for one seed, upper bounds included. Module-level so the
    process pool can pickle it."""
    cfg = parse_config(raw_config)
    try:
        dataset = build_dataset(cfg)
        model_cfg = build_model_config(cfg, dataset)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        return _all_cells_failed(cfg, seed, f"dataset failed: {exc!r}")
    common = dict(
        num_tasks=cfg.num_tasks, classes_per_task=cfg.classes_per_task,
        stream_batch_size=cfg.stream_batch_size,
        fixed_class_order=cfg.fixed_class_order)
    try:
        bounds = compute_upper_bounds(
            dataset, model_cfg=model_cfg, seed=seed, mode=cfg.upper_bound_mode, **common)
    except Exception as exc:  # noqa: BLE001 - recorded per cell below
        bounds = None
        bounds_error = f"upper bounds failed: {exc!r}"

    buffer_k = None if cfg.buffer_batch_size == cfg.stream_batch_size else cfg.buffer_batch_size
    cells = []
    for method_id, method_cfg in cfg.method_cfgs:
        for capacity in cfg.buffer_capacities:
            cell = CellResult(method=method_id, capacity=capacity, seed=seed)
            if bounds is None:
                cell.error = bounds_error
                cells.append(cell)
                continue
            try:
                result = run_single(
                    dataset, method_cfg=method_cfg, model_cfg=model_cfg,
                    capacity=capacity, seed=seed, buffer_batch_size=buffer_k, **common)
                result.matrix.upper_bounds = list(bounds)
                cell.matrix = result.matrix
                cell.final = _final_metrics(result.matrix)
                cell.confusion = result.confusion
                cell.duration_s = result.duration_s
            except Exception as exc:  # noqa: BLE001
                cell.error = repr(exc)
            cells.append(cell)
    return cells


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, seed_offset: int = 0) -> RunReport:
    """Execute the whole grid and assemble the report (cells ordered by
    method, then capacity, then seed)."""
    seeds = [s + seed_offset for s in cfg.seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            per_seed = list(pool.map(_run_seed, [cfg.raw] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(cfg.raw, s) for s in seeds]

    by_key = {}
    for cells in per_seed:
        for cell in cells:
            by_key[(cell.method, cell.capacity, cell.seed)] = cell
    ordered = []
    for method_id, _ in cfg.method_cfgs:
        for capacity in cfg.buffer_capacities:
            for seed in seeds:
                ordered.append(by_key[(method_id, capacity, seed)])
    return RunReport(config=cfg.raw, cells=ordered, aggregates=aggregate_cells(ordered))
