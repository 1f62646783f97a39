import math

import numpy as np
import pytest

from chnl import grid as tg
from chnl.diagnostics import (
    DiagnosticsRecord,
    SweepResult,
    energy_eps,
    entropy_dissipation_ledger,
    entropy_total,
    fit_orders,
    h1_distance,
    l2_distance,
    h1_control_constant,
    poincare_checks,
)
from chnl.grid import TorusGrid
from chnl.kernels import MollifierProfile, build_kernel
from chnl.nonlocal_ops import bbm_direct
from chnl.physics import F_value, MobilitySpec, PotentialSpec

FH = PotentialSpec("flory_huggins", 2.0)
BUMP = MollifierProfile()


def test_energy_of_half_is_half_L(grid1):
    k = build_kernel(BUMP, 0.3, 0.0, grid1)
    assert energy_eps(np.full(grid1.shape, 0.5), k, FH) == pytest.approx(grid1.L * 0.5, rel=1e-14)


@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_energy_operator_form_matches_double_sum(grid1, alpha):
    k = build_kernel(BUMP, 0.5, alpha, grid1)
    u = 0.5 + 0.1 * tg.sin_mode(grid1, 1)
    direct = tg.integrate(F_value(u, FH), grid1) + 0.25 * bbm_direct(u, k)
    assert energy_eps(u, k, FH) == pytest.approx(direct, rel=1e-12)


def test_energy_nonnegative(grid1, rng):
    k = build_kernel(BUMP, 0.3, 0.0, grid1)
    assert energy_eps(rng.uniform(0.01, 0.99, grid1.shape), k, FH) >= 0


def test_entropy_zero_at_half(grid1):
    assert entropy_total(np.full(grid1.shape, 0.5), grid1, MobilitySpec()) == pytest.approx(0.0, abs=1e-14)


def test_distances(grid1):
    u = tg.sin_mode(grid1, 1)
    assert l2_distance(u, u, grid1) == 0.0
    assert h1_distance(u, 0 * u, grid1) == pytest.approx(math.sqrt(grid1.L / 2 * (1 + 1)), rel=1e-12)


def test_record_requires_increasing_time():
    rec = DiagnosticsRecord()
    vals = dict(mass=1, energy=2, entropy=0, min_u=0, max_u=1, bbm_seminorm=0, dissipation=0)
    rec.append(0, 0.0, **vals)
    with pytest.raises(ValueError):
        rec.append(1, 0.0, **vals)


def test_record_increments_and_csv(tmp_path):
    rec = DiagnosticsRecord(header={"note": "x"})
    energies = [3.0, 2.5, 2.6, 2.0]
    for i, e in enumerate(energies):
        rec.append(i, 0.1 * i, mass=1.0, energy=e, entropy=0, min_u=0, max_u=1, bbm_seminorm=0, dissipation=0)
    assert float(np.sum(rec.energy_increments)) == pytest.approx(energies[-1] - energies[0], abs=1e-15)
    assert rec.energy_violations() == 1
    assert rec.mass_drift() == 0.0
    rec.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "# note: x"
    assert lines[1] == "step,t,mass,energy,entropy,min_u,max_u,dissipation"
    assert len(lines) == 2 + len(energies)


def test_sweep_result_csv(tmp_path):
    res = SweepResult(eps=[0.2, 0.1], times=[1.0], err_l2={(0.2, 1.0): 1e-3, (0.1, 1.0): 2.5e-4},
                      err_h1={(0.2, 1.0): 2e-3, (0.1, 1.0): 5e-4}, runtime_s={0.2: 1.0, 0.1: 2.0}, u0_hash="abc")
    res.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# u0_sha256: abc"
    assert lines[1] == "eps,t,err_l2,err_h1,runtime_s"
    assert res.errors_at(1.0, "h1") == [2e-3, 5e-4]
    assert math.isnan(fit_orders([0.2, 0.1], [1.0, 0.5]))


def test_ledger_constant_trajectory(grid1):
    k = build_kernel(BUMP, 0.3, 0.0, grid1)
    u = np.full(grid1.shape, 0.4)
    rep = entropy_dissipation_ledger([(0.0, u), (0.1, u)], k, FH, MobilitySpec())
    assert rep["total_increment"] == 0.0
    for row in rep["rows"]:
        assert row["grad_bbm_term"] == pytest.approx(0.0, abs=1e-14)
        assert row["fpp_term"] == pytest.approx(0.0, abs=1e-14)
        assert row["control_lhs"] == pytest.approx(0.0, abs=1e-14)
    assert "1/2" in rep["note"]


def test_ledger_negative_part_control_holds():
    g = TorusGrid(1, 256)
    k = build_kernel(BUMP, 0.1, 0.0, g)
    states = [(0.0, 0.5 + 0.2 * tg.sin_mode(g, 1)), (0.1, 0.5 + 0.1 * tg.sin_mode(g, 2))]
    battery = tg.field_battery(g, max_mode=8)
    rep = entropy_dissipation_ledger(states, k, FH, MobilitySpec(), battery)
    assert rep["gamma"] == pytest.approx(1 / 16)
    assert rep["C_theta"] == pytest.approx(4 * rep["C_gamma"])
    assert rep["violations"] == 0


def test_h1_control_constant_definition():
    g = TorusGrid(1, 128)
    k = build_kernel(BUMP, 0.2, 0.0, g)
    fields = list(tg.field_battery(g, max_mode=6).values())
    c = h1_control_constant(fields, k, 0.25)
    for f in fields:
        from chnl.diagnostics import gradient_bbm, grad_sq

        lhs = tg.inner(f, f, g) + grad_sq(f, g)
        assert lhs <= 0.25 * gradient_bbm(f, k) + c * tg.inner(f, f, g) + 1e-10


def test_poincare_checks_stable_across_eps():
    g = TorusGrid(1, 1024)
    fields = {"sin1": tg.sin_mode(g, 1), "const": np.ones(g.shape)}
    rep = poincare_checks(fields, BUMP, [0.2, 0.1, 0.05], 0.0, g)
    c1 = rep["c1_ratio"]
    assert max(c1) / min(c1) < 2.0
    assert all(c2 > 0 for c2 in rep["c2_ratio"])
