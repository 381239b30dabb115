"""Monte Carlo over Wiener paths and (h, k) refinement studies."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np

from .config import SimConfig, check_theta_stability
from .errors import SimulationError
from .noise import sample_wiener_path
from .stepper import EnergyTrace, Simulation, run_path

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "exchange_sq", "exchange", "field_sq", "field", "total", "curl_sq")


def trace_table(trace: EnergyTrace) -> np.ndarray:
    """Per-time rows in :data:`TRACE_COLUMNS` order (squared norms and norms)."""
    ex = np.asarray(trace.exchange)
    fd = np.asarray(trace.field)
    return np.column_stack([trace.t, ex, np.sqrt(ex), fd, np.sqrt(fd), ex + fd, trace.curl])


@dataclass
class EnsembleResult:
    L: int
    mean_trace: np.ndarray                 # (J+1, len(TRACE_COLUMNS))
    mean_sphere_error_sq: float
    sample_paths: List[np.ndarray] = field(default_factory=list)
    sphere_error_sq: List[float] = field(default_factory=list)    # per path, index order
    seeds: List[tuple] = field(default_factory=list)              # (base_seed, path index)


@lru_cache(maxsize=4)
def simulation_for(config: SimConfig) -> Simulation:
    return Simulation(config)


def _run_one(config: SimConfig, index: int, sim: Optional[Simulation] = None):
    sim = simulation_for(config) if sim is None else sim
    path = sample_wiener_path(config.J, config.k, config.base_seed, index)
    try:
        res = run_path(sim, path)
    except SimulationError as exc:
        new = type(exc)(f"path {index} (seed {config.base_seed}, index {index}): {exc}")
        new.__dict__.update(exc.__dict__)
        new.seed = (config.base_seed, index)
        raise new from exc
    return index, trace_table(res.trace), res.sphere_error_sq


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def run_ensemble(config: SimConfig, workers: int = 1, retain: Optional[int] = None,
                 simulation: Optional[Simulation] = None) -> EnsembleResult:
    """Run ``config.L`` paths; path ``i`` is driven by the stream keyed ``(base_seed, i)``.

    Aggregation happens after all paths finish, in path-index order, so the
    result does not depend on ``workers``. ``simulation`` overrides the default
    setup built from ``config`` (e.g. custom initial data); it must have been
    built from the same ``config``.
    """
    check_theta_stability(config)
    if simulation is not None and simulation.config != config:
        raise ValueError("simulation was built from a different config")
    retain = config.retain if retain is None else retain
    L = config.L
    if workers <= 1 or L == 1:
        outputs = [_run_one(config, i, simulation) for i in range(L)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_one, [config] * L, range(L), [simulation] * L))
    outputs.sort(key=lambda o: o[0])
    tables = np.stack([o[1] for o in outputs])                     # (L, J+1, C)
    errs = [o[2] for o in outputs]
    mean = np.empty(tables.shape[1:])
    for r in range(mean.shape[0]):
        for c in range(mean.shape[1]):
            mean[r, c] = _mean(tables[:, r, c])
    return EnsembleResult(
        L=L,
        mean_trace=mean,
        mean_sphere_error_sq=_mean(errs),
        sample_paths=[tables[i] for i in range(min(retain, L))],
        sphere_error_sq=errs,
        seeds=[(config.base_seed, i) for i in range(L)],
    )


def steps_for(T: float, n: int, ratio: float) -> int:
    """Number of steps giving ``k = ratio * h`` (rounded) with ``h = 1/n``."""
    return max(1, int(round(T * n / ratio)))


@dataclass(frozen=True)
class StudyRow:
    n: int
    k: float
    mean_sphere_error_sq: float
    L: int
    wallclock: float
    J: int
    ratio: float


def convergence_study(base: SimConfig, n_list: Sequence[int] = None,
                      k_ratio_list: Sequence[float] = None, workers: int = 1) -> List[StudyRow]:
    """One ensemble per ``(n, ratio)`` pair, ``n`` in the outer loop."""
    n_list = base.n_list if n_list is None else tuple(n_list)
    k_ratio_list = base.k_ratios if k_ratio_list is None else tuple(k_ratio_list)
    if not n_list or not k_ratio_list:
        raise ValueError("n_list and k_ratio_list must be nonempty")
    rows = []
    for n in n_list:
        for ratio in k_ratio_list:
            cfg = base.replace(n=int(n), J=steps_for(base.T, n, ratio))
            t0 = time.perf_counter()
            res = run_ensemble(cfg, workers=workers, retain=0)
            wall = time.perf_counter() - t0
            log.info("n=%d k=%.4g  E[E^2]=%.6e  (%.1fs)", n, cfg.k, res.mean_sphere_error_sq, wall)
            rows.append(StudyRow(int(n), cfg.k, res.mean_sphere_error_sq, cfg.L, wall, cfg.J,
                                 float(ratio)))
    return rows


def fitted_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
