import json
import warnings

import numpy as np
import pytest

from hjlab.errors import InvalidArgument
from hjlab.hamiltonian import HamiltonianModel, build_modified, pendulum
from hjlab.lax_oleinik import (
    COST_QUANTUM,
    calibration_check,
    default_v_max,
    evolve,
    one_step,
    orbit_action,
    orbit_energy_check,
    reconstruct_orbit,
    window_offsets,
    write_orbit_csv,
    write_trace_csv,
)
from hjlab.legendre import LagrangianEvaluator
from hjlab.torus import TorusGrid, ValueFunction

from oracles import dp_step_bruteforce, hopf_lax_quadratic, periodic_gap

ZERO = HamiltonianModel("mechanical", "zero", 1)


@pytest.fixture(scope="module")
def le_zero():
    return LagrangianEvaluator(build_modified(ZERO, 8.0))


@pytest.fixture(scope="module")
def le_pend():
    return LagrangianEvaluator(build_modified(pendulum(), 8.0))


def cosine(grid):
    return ValueFunction.from_function(grid, lambda x: np.cos(2 * np.pi * x[:, 0]))


def test_zero_datum_is_fixed(le_zero):
    grid = TorusGrid(1, 64)
    out, back = one_step(ValueFunction(grid, np.zeros(64)), le_zero, 0.1, 4.0)
    assert np.array_equal(out.flat, np.zeros(64))
    assert np.array_equal(back, np.arange(64))


def test_constant_datum_adds_min_lagrangian(le_pend):
    grid = TorusGrid(1, 128)
    tau = 0.01
    out, back = one_step(ValueFunction(grid, np.full(128, 3.0)), le_pend, tau, 4.0)
    # zero displacement is optimal: L(x, .) is minimized at v = 0 with value -V(x)
    assert np.array_equal(back, np.arange(128))
    expected = 3.0 - tau * np.cos(2 * np.pi * grid.coords()[:, 0])
    assert np.max(np.abs(out.flat - expected)) < 1e-10


def test_hopf_lax_oracle(le_zero):
    grid = TorusGrid(1, 256)
    phi = cosine(grid)
    out, _ = one_step(phi, le_zero, 0.1, 8.0)
    ref = hopf_lax_quadratic(phi.flat, 0.1)
    assert np.max(np.abs(out.flat - ref)) < 1e-9


def test_matches_dense_dp(le_pend):
    grid = TorusGrid(1, 64)
    tau, v_max = 0.05, 3.0
    rng = np.random.default_rng(0)
    phi = rng.random(64)
    out, _ = one_step(ValueFunction(grid, phi), le_pend, tau, v_max)
    x = grid.coords()[:, 0]
    off = np.rint((x[:, None] - x[None, :]) * 64).astype(int)
    off = (off + 32) % 64 - 32
    disp = off / 64.0
    mid = np.mod(x[:, None] - 0.5 * disp, 1.0)
    L, _ = le_pend.evaluate(mid[..., None], (disp / tau)[..., None])
    cost = np.round(tau * L / COST_QUANTUM) * COST_QUANTUM
    cost = np.where(np.abs(disp / tau) <= v_max + 1e-12, cost, np.inf)
    assert np.array_equal(out.flat, dp_step_bruteforce(phi, cost))


def test_two_steps_compose(le_pend):
    grid = TorusGrid(1, 256)
    tau, v_max = 0.01, 4.0
    phi = cosine(grid)
    trace = evolve(phi, le_pend, tau, 2 * tau, v_max)
    a, _ = one_step(phi, le_pend, tau, v_max)
    b, _ = one_step(a, le_pend, tau, v_max)
    assert np.array_equal(trace.snapshots[2].flat, b.flat)
    # one straight segment of length 2 tau as an independent oracle
    x = grid.coords()[:, 0]
    d = np.mod(x[:, None] - x[None, :] + 0.5, 1.0) - 0.5
    mid = np.mod(x[None, :] + 0.5 * d, 1.0)
    v = d / (2 * tau)
    L = 0.5 * v**2 - np.cos(2 * np.pi * mid)
    L = np.where(np.abs(v) <= v_max, L, np.inf)
    ref = np.min(phi.flat[None, :] + 2 * tau * L, axis=1)
    assert np.max(np.abs(trace.snapshots[2].flat - ref)) < 5e-2


def test_evolve_zero_stays_zero(le_zero):
    grid = TorusGrid(1, 64)
    trace = evolve(ValueFunction(grid, np.zeros(64)), le_zero, 0.1, 1.0, 3.0)
    assert trace.steps == 10
    assert all(np.array_equal(s.flat, np.zeros(64)) for s in trace.snapshots)


def test_evolve_zero_time_is_identity(le_pend):
    grid = TorusGrid(1, 64)
    phi = cosine(grid)
    trace = evolve(phi, le_pend, 0.01, 0.0, 3.0)
    assert trace.steps == 0
    assert np.array_equal(trace.snapshots[0].flat, phi.flat)


def test_evolve_warns_on_fractional_final_time(le_zero):
    grid = TorusGrid(1, 32)
    with pytest.warns(UserWarning):
        trace = evolve(ValueFunction(grid, np.zeros(32)), le_zero, 0.1, 0.25, 3.0)
    assert trace.steps in (2, 3)


def test_empty_window_rejected():
    with pytest.raises(InvalidArgument):
        window_offsets(TorusGrid(1, 16), 0.001, 1.0)


def test_stationary_orbit_for_zero(le_zero):
    grid = TorusGrid(1, 64)
    trace = evolve(ValueFunction(grid, np.zeros(64)), le_zero, 0.1, 1.0, 3.0)
    orbit = reconstruct_orbit(trace, 5, 1.0)
    assert np.all(orbit.velocities == 0)
    assert np.all(orbit.nodes == 5)


def test_orbit_at_potential_maximum(le_pend):
    grid = TorusGrid(1, 128)
    trace = evolve(ValueFunction(grid, np.zeros(128)), le_pend, 0.01, 2.0, default_v_max(pendulum(), 1.0))
    orbit = reconstruct_orbit(trace, 0, 2.0)
    assert np.max(np.abs(orbit.velocities)) < 1e-12
    assert np.max(np.abs(orbit.energies - 1.0)) < 1e-12


def test_orbit_action_reproduces_value(le_pend):
    grid = TorusGrid(1, 128)
    phi = cosine(grid)
    trace = evolve(phi, le_pend, 0.01, 0.5, 4.0)
    for node in (0, 17, 64, 101):
        orbit = reconstruct_orbit(trace, node, 0.5)
        total = orbit_action(orbit, phi.flat[orbit.nodes[0]])
        assert abs(total - trace.snapshots[-1].flat[node]) < 1e-9


def test_orbit_missing_snapshot(le_zero):
    grid = TorusGrid(1, 32)
    trace = evolve(ValueFunction(grid, np.zeros(32)), le_zero, 0.1, 0.5, 3.0)
    with pytest.raises(InvalidArgument):
        reconstruct_orbit(trace, 0, 0.55)
    with pytest.raises(InvalidArgument):
        reconstruct_orbit(trace, 0, 1.0)


def test_orbit_energy_at_potential_minimum(le_pend):
    grid = TorusGrid(1, 128)
    trace = evolve(ValueFunction(grid, np.zeros(128)), le_pend, 0.01, 0.2, 4.0)
    orbit = reconstruct_orbit(trace, 64, 0.2)
    rep = orbit_energy_check(orbit, pendulum(), 1.0)
    assert rep["max_normalized_energy"] == pytest.approx(-2.0, abs=1e-9)
    assert rep["passed"]


def test_orbit_energy_fails_on_huge_momentum(le_pend):
    grid = TorusGrid(1, 64)
    trace = evolve(ValueFunction(grid, np.zeros(64)), le_pend, 0.01, 0.05, 4.0)
    orbit = reconstruct_orbit(trace, 3, 0.05)
    orbit.momenta = orbit.momenta + 50.0
    assert not orbit_energy_check(orbit, pendulum(), 1.0)["passed"]


def test_calibration_zero_potential(le_zero):
    grid = TorusGrid(1, 64)
    rep = calibration_check(ValueFunction(grid, np.full(64, 2.0)), le_zero, 0.0, 3.0)
    assert rep["min"] == pytest.approx(0.0, abs=1e-12)
    assert rep["equality_max_abs"] < 1e-12
    assert rep["passed"]


def test_trace_and_orbit_csv(tmp_path, le_pend):
    grid = TorusGrid(1, 32)
    trace = evolve(cosine(grid), le_pend, 0.01, 0.1, 4.0)
    write_trace_csv(trace, tmp_path / "trace.csv", every=5)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0].split(",") == ["step", "node_index", "value"]
    assert len(lines) == 1 + 3 * 32
    meta = json.loads((tmp_path / "trace.json").read_text())
    assert meta["tau"] == 0.01
    write_orbit_csv(reconstruct_orbit(trace, 4, 0.1), tmp_path / "orbit.csv")
    assert len((tmp_path / "orbit.csv").read_text().splitlines()) >= 11


def test_workers_do_not_change_result(le_pend):
    grid = TorusGrid(2, 24)
    le2 = LagrangianEvaluator(build_modified(pendulum(2), 6.0))
    phi = ValueFunction.from_function(grid, lambda x: np.cos(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1]))
    a, ba = one_step(phi, le2, 0.05, 3.0, workers=1)
    b, bb = one_step(phi, le2, 0.05, 3.0, workers=4)
    assert np.array_equal(a.flat, b.flat) and np.array_equal(ba, bb)
