import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hjlab.hamiltonian import HamiltonianModel, build_modified, pendulum
from hjlab.lax_oleinik import default_v_max, one_step
from hjlab.legendre import LagrangianEvaluator
from hjlab.regularity import detect_t0, lipschitz_estimate
from hjlab.torus import TorusGrid, ValueFunction

from oracles import lipschitz_bruteforce

GRID = TorusGrid(1, 64)
HR = build_modified(pendulum(), 6.0)
LE = LagrangianEvaluator(HR)
V_MAX = default_v_max(pendulum(), 1.0)
REL = build_modified(HamiltonianModel("coercive-nonsuperlinear", "cos", 1), 6.0)

dyadic = st.integers(-2**20, 2**20).map(lambda k: k / 2**20)
fields = st.lists(dyadic, min_size=64, max_size=64).map(np.array)


@settings(max_examples=40, deadline=None)
@given(fields, fields, dyadic)
def test_semigroup_laws(phi, psi, c):
    a, _ = one_step(ValueFunction(GRID, phi), LE, 0.02, V_MAX)
    b, _ = one_step(ValueFunction(GRID, psi), LE, 0.02, V_MAX)
    s, _ = one_step(ValueFunction(GRID, phi + c), LE, 0.02, V_MAX)
    lo, _ = one_step(ValueFunction(GRID, np.minimum(phi, psi)), LE, 0.02, V_MAX)
    assert np.all(lo.flat <= np.minimum(a.flat, b.flat))
    assert np.array_equal(s.flat, a.flat + c)
    assert np.max(np.abs(a.flat - b.flat)) <= np.max(np.abs(phi - psi))


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(-6, 6))
def test_identity_inside_radius(x, p):
    for hr in (HR, REL):
        xs, ps = np.array([[x]]), np.array([[p]])
        assert abs(hr.value(xs, ps) - hr.base.value(xs, ps))[0] < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(-12, 12))
def test_hessian_positive(x, p):
    for hr in (HR, REL):
        assert hr.hess_p(np.array([[x]]), np.array([[p]]))[0, 0, 0] > 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=40))
def test_nearest_neighbour_lipschitz_is_exact_in_1d(vals):
    vals = np.array(vals)
    u = ValueFunction(TorusGrid(1, len(vals)), vals)
    assert abs(lipschitz_estimate(u) - lipschitz_bruteforce(vals)) <= 1e-9 * max(1.0, lipschitz_estimate(u))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=30), st.integers(1, 6))
def test_detect_t0_tail_in_band(vals, window):
    res = detect_t0(np.arange(len(vals)), vals, window=window)
    if res.detected:
        tail = np.array(vals[res.index :])
        assert len(tail) >= window
        assert np.all(np.abs(tail - vals[-1]) <= 0.05 * vals[-1])
        assert res.iota == tail.max()
