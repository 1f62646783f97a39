import math
import warnings

import numpy as np
import pytest

from chnl import grid as tg
from chnl.grid import TorusGrid
from chnl.kernels import MollifierProfile, build_adhesion_kernel, build_kernel, moments
from chnl.nonlocal_ops import LocalLimit
from chnl.physics import MobilitySpec, PotentialSpec
from chnl.snapshots import read_snapshot
from chnl.solvers import (
    Model,
    SolverAbort,
    SolverConfig,
    SolverError,
    SolverState,
    StabilityWarning,
    run,
    stability_bound,
    step,
)

BUMP = MollifierProfile()
FH = PotentialSpec("flory_huggins", 2.0)
SW = PotentialSpec("smooth_double_well")
G = TorusGrid(1, 128)
MOM = moments(BUMP, 0.0, 1)


def models(grid=G):
    return {
        "ch_nonlocal": Model("ch_nonlocal", grid, build_kernel(BUMP, 0.2, 0.0, grid), FH, MobilitySpec()),
        "ch_local": Model("ch_local", grid, LocalLimit(MOM.W / 2, grid), SW, MobilitySpec("constant")),
        "adhesion_nonlocal": Model("adhesion_nonlocal", grid, None, None, MobilitySpec(),
                                   build_adhesion_kernel(BUMP, 0.2, grid), None, 0.5),
        "adhesion_local": Model("adhesion_local", grid, None, None, MobilitySpec(), None, -MOM.C_omega, 0.5),
    }


def test_config_validation():
    with pytest.raises(SolverError):
        SolverConfig("heat", 1e-3, 1.0)
    with pytest.raises(SolverError):
        SolverConfig("ch_local", 0.0, 1.0)
    with pytest.raises(SolverError):
        SolverConfig("ch_local", 1e-3, 1.0, face_average="geometric")
    assert SolverConfig("ch_local", 1e-3, 0.25).n_steps == 250


@pytest.mark.parametrize("system", ["ch_nonlocal", "ch_local", "adhesion_nonlocal", "adhesion_local"])
def test_zero_final_time_returns_initial(system):
    u0 = 0.5 + 0.1 * tg.cos_mode(G, 1)
    traj, rec, st = run(models()[system], SolverConfig(system, 1e-3, 0.0), u0)
    assert np.array_equal(st.u, u0) and len(traj.snapshots) == 1


@pytest.mark.parametrize("system", ["ch_nonlocal", "ch_local", "adhesion_nonlocal", "adhesion_local"])
def test_mass_conserved_per_step(system, rng):
    m = models()[system]
    state = SolverState(rng.uniform(0.4, 0.6, G.shape))
    cfg = SolverConfig(system, 1e-3, 1.0)
    m0 = tg.integrate(state.u, G)
    for _ in range(20):
        state = step(state, cfg, m)
        assert abs(tg.integrate(state.u, G) - m0) <= 1e-12 * m0


def test_adhesion_constant_is_stationary():
    m = models()["adhesion_nonlocal"]
    m.a = 0.0
    u0 = np.full(G.shape, 0.3)
    _, _, st = run(m, SolverConfig("adhesion_nonlocal", 1e-3, 0.1), u0, diagnostics=False)
    assert np.max(np.abs(st.u - 0.3)) < 1e-15


@pytest.mark.parametrize("system", ["ch_nonlocal", "ch_local", "adhesion_nonlocal", "adhesion_local"])
def test_mirror_symmetry(system):
    u0 = 0.5 + 0.1 * tg.cos_mode(G, 1) + 0.05 * tg.cos_mode(G, 3)
    _, _, st = run(models()[system], SolverConfig(system, 1e-3, 0.05), u0, diagnostics=False)
    mirrored = np.roll(st.u[::-1], 1)
    assert np.max(np.abs(st.u - mirrored)) < 1e-10


def test_energy_decay_nonlocal_ch(rng):
    m = models()["ch_nonlocal"]
    u0 = rng.uniform(0.4, 0.6, G.shape)
    _, rec, _ = run(m, SolverConfig("ch_nonlocal", 1e-3, 0.2), u0)
    assert rec.energy_violations(1e-10) == 0
    assert rec.mass_drift() < 1e-13


def test_deterministic_digest(rng):
    u0 = rng.uniform(0.4, 0.6, G.shape)
    cfg = SolverConfig("ch_nonlocal", 1e-3, 0.05, snapshot_every=10)
    a, _, _ = run(models()["ch_nonlocal"], cfg, u0)
    b, _, _ = run(models()["ch_nonlocal"], cfg, u0)
    assert a.digest() == b.digest() and len(a.snapshots) == 6


def test_snapshots_written(tmp_path):
    u0 = 0.5 + 0.1 * tg.cos_mode(G, 1)
    cfg = SolverConfig("ch_local", 1e-3, 0.01, snapshot_every=5)
    traj, _, _ = run(models()["ch_local"], cfg, u0, out_dir=tmp_path, save_times=(0.003,))
    names = sorted(p.name for p in (tmp_path / "snapshots").iterdir())
    assert names == ["snap_00000000.chnl", "snap_00000003.chnl", "snap_00000005.chnl", "snap_00000010.chnl"]
    u, g, t = read_snapshot(tmp_path / "snapshots" / "snap_00000010.chnl")
    assert g == G and t == pytest.approx(0.01) and np.array_equal(u, traj.final)
    assert np.array_equal(traj.at_time(0.003), traj.snapshots[1][2])


def test_stability_bound_enforced():
    m = models()["adhesion_local"]
    m.a = 0.95
    m.c_K = -40.0
    u0 = np.full(G.shape, 0.5)
    bound = stability_bound(u0, m)
    assert math.isfinite(bound)
    with pytest.raises(SolverError, match="stability bound"):
        run(m, SolverConfig("adhesion_local", 2 * bound, 1.0), u0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        run(m, SolverConfig("adhesion_local", 2 * bound, 4 * bound, allow_unstable=True), u0, diagnostics=False)
    assert any(issubclass(x.category, StabilityWarning) for x in w)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_aborts_with_dump(tmp_path):
    m = models()["ch_local"]
    u0 = 0.5 + 0.1 * tg.cos_mode(G, 1)
    u0[3] = 1e200
    with pytest.raises(SolverAbort) as exc:
        run(m, SolverConfig("ch_local", 1e-3, 0.01, allow_unstable=True), u0, out_dir=tmp_path, diagnostics=False)
    assert exc.value.dump_path is not None and exc.value.dump_path.exists()


def test_bound_violation_recorded():
    m = models()["ch_nonlocal"]
    u0 = np.full(G.shape, 0.5)
    u0[:4] = 1.2
    u0[4:8] = -0.2
    _, rec, st = run(m, SolverConfig("ch_nonlocal", 1e-4, 1e-4, bound_tol=1e-6), u0)
    assert st.events and st.events[0]["event"] == "bound_violation"


def test_missing_operator_rejected():
    bad = Model("ch_local", G, build_kernel(BUMP, 0.2, 0.0, G), SW, MobilitySpec("constant"))
    with pytest.raises(SolverError):
        run(bad, SolverConfig("ch_local", 1e-3, 0.01), np.full(G.shape, 0.5))


def test_2d_run_conserves_mass(rng):
    g = TorusGrid(2, 32, 1.0)
    m = Model("ch_nonlocal", g, build_kernel(BUMP, 0.15, 0.5, g), FH, MobilitySpec())
    u0 = rng.uniform(0.4, 0.6, g.shape)
    _, rec, _ = run(m, SolverConfig("ch_nonlocal", 1e-5, 2e-4), u0)
    assert rec.mass_drift() < 1e-13
    assert rec.energy_violations() == 0
