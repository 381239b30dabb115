import csv
import math

import numpy as np
import pytest

from smllg import ensemble
from smllg.config import SimConfig
from smllg.ensemble import (TRACE_COLUMNS, convergence_study, fitted_slope, run_ensemble,
                            steps_for, trace_table)
from smllg.errors import InvariantViolation
from smllg.noise import sample_wiener_path
from smllg.output import write_paths_csv
from smllg.stepper import Simulation, run_path


def const(v):
    v = np.asarray(v, dtype=float)
    return lambda x: np.broadcast_to(v, x.shape).copy()


def test_single_path_matches_run_path():
    cfg = SimConfig(n=2, J=3, L=1)
    res = run_ensemble(cfg)
    ref = run_path(Simulation(cfg), sample_wiener_path(3, cfg.k, cfg.base_seed, 0))
    assert res.mean_sphere_error_sq == ref.sphere_error_sq
    assert np.array_equal(res.mean_trace, trace_table(ref.trace))
    assert res.mean_trace.shape == (4, len(TRACE_COLUMNS))


def test_noise_free_limit_has_zero_error():
    cfg = SimConfig(n=2, J=3, L=4)
    sim = Simulation(cfg, m0=const((0, 0, 1)), P0=const((0, 0, 0)))
    res = run_ensemble(cfg, simulation=sim)
    assert res.mean_sphere_error_sq == pytest.approx(0.0, abs=1e-28)


def test_simulation_config_must_match():
    cfg = SimConfig(n=2, J=3, L=2)
    with pytest.raises(ValueError):
        run_ensemble(cfg, simulation=Simulation(cfg.replace(J=4)))


def test_worker_count_does_not_change_result():
    cfg = SimConfig(n=2, J=4, L=4, g_mode="analytic")
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=3)
    assert np.array_equal(a.mean_trace, b.mean_trace)
    assert a.mean_sphere_error_sq == b.mean_sphere_error_sq
    assert a.sphere_error_sq == b.sphere_error_sq
    assert all(np.array_equal(x, y) for x, y in zip(a.sample_paths, b.sample_paths))


def test_mean_recomputed_from_paths_csv(tmp_path):
    cfg = SimConfig(n=2, J=3, L=6, retain=2)
    res = run_ensemble(cfg)
    write_paths_csv(tmp_path / "paths.csv", res)
    with open(tmp_path / "paths.csv") as fh:
        vals = [float(r["sphere_error_sq"]) for r in csv.DictReader(fh)]
    assert len(vals) == 6
    assert abs(sum(vals) / len(vals) - res.mean_sphere_error_sq) <= 1e-14
    assert len(res.sample_paths) == 2
    assert res.mean_sphere_error_sq >= 0


def test_seeds_distinct():
    cfg = SimConfig(n=1, J=2, L=5)
    res = run_ensemble(cfg)
    assert len(set(res.seeds)) == 5
    paths = [sample_wiener_path(cfg.J, cfg.k, *s).values for s in res.seeds]
    assert len({p.tobytes() for p in paths}) == 5


def test_failure_records_seed(monkeypatch):
    real = ensemble.run_path

    def flaky(sim, path, probes=None):
        if path.index == 2:
            raise InvariantViolation("boom", step=1)
        return real(sim, path, probes)

    monkeypatch.setattr(ensemble, "run_path", flaky)
    cfg = SimConfig(n=1, J=2, L=4)
    with pytest.raises(InvariantViolation, match="index 2") as info:
        run_ensemble(cfg)
    assert info.value.seed == (cfg.base_seed, 2)
    assert info.value.step == 1


def test_steps_for():
    assert steps_for(1.0, 4, 1.0) == 4
    assert steps_for(1.0, 4, 0.5) == 8
    assert steps_for(1.0, 3, 0.25) == 12


def test_convergence_rows_and_order():
    base = SimConfig(T=0.25, L=2)
    rows = convergence_study(base, [2, 3, 4], [1.0, 0.5])
    assert len(rows) == 6
    assert [(r.n, r.ratio) for r in rows] == [(2, 1.0), (2, 0.5), (3, 1.0), (3, 0.5),
                                              (4, 1.0), (4, 0.5)]
    assert all(r.L == 2 and r.wallclock >= 0 for r in rows)


def test_convergence_rejects_empty_lists():
    with pytest.raises(ValueError):
        convergence_study(SimConfig(), [], [1.0])


def test_fitted_slope_exact_power():
    x = np.array([1.0, 0.5, 0.25])
    assert fitted_slope(x, 3 * x ** 1.5) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.slow
def test_error_decreases_in_n_at_k_equal_h():
    rows = convergence_study(SimConfig(L=20), k_ratio_list=[1.0])
    errs = [r.mean_sphere_error_sq for r in rows]
    assert [r.n for r in rows] == [2, 3, 4, 5, 6, 7]
    assert all(a > b for a, b in zip(errs, errs[1:])), errs


@pytest.mark.slow
def test_refinement_slope_at_L20():
    vals = []
    for n in (2, 4, 8):
        res = run_ensemble(SimConfig(n=n, J=n, L=20), retain=0)
        vals.append(math.sqrt(res.mean_sphere_error_sq))
    slope = fitted_slope([1 / 4, 1 / 16, 1 / 64], vals)
    assert 0.7 <= slope <= 1.3, slope
