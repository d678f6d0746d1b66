import numpy as np
import pytest

from hjlab.hamiltonian import HamiltonianModel, build_modified, pendulum
from hjlab.legendre import LagrangianEvaluator, biconjugate_check, fenchel_gap, legendre, load_table, save_table, tabulate, velocity_map

from oracles import dense_conjugate_1d

ZERO = HamiltonianModel("mechanical", "zero", 1)
REL_ZERO = HamiltonianModel("coercive-nonsuperlinear", "zero", 1)
REL_COS = HamiltonianModel("coercive-nonsuperlinear", "cos", 1)


@pytest.fixture(scope="module")
def le_pend():
    return LagrangianEvaluator(build_modified(pendulum(), 6.0))


def test_quadratic_conjugate():
    L, p = legendre(LagrangianEvaluator(build_modified(ZERO, 8.0)), 0.2, 1.0)
    assert L == pytest.approx(0.5, abs=1e-12)
    assert p == pytest.approx(1.0, abs=1e-10)


def test_zero_velocity_gives_minus_potential(le_pend):
    L, p = legendre(le_pend, 0.0, 0.0)
    assert L == pytest.approx(-1.0, abs=1e-12)
    assert p == pytest.approx(0.0, abs=1e-10)


def test_relativistic_conjugate():
    le = LagrangianEvaluator(build_modified(REL_ZERO, 4.0))
    L, _ = legendre(le, 0.0, 0.6)
    assert L == pytest.approx(0.2, abs=1e-10)
    dense = dense_conjugate_1d(lambda p: np.sqrt(1 + p * p) - 1, 0.6)
    assert L == pytest.approx(dense, abs=1e-6)


def test_velocity_map_examples():
    hz = build_modified(ZERO, 4.0)
    assert velocity_map(hz, 0.1, 2.0) == 2.0
    assert velocity_map(build_modified(REL_ZERO, 4.0), 0.3, 0.0) == 0.0
    h15 = build_modified(ZERO, 1.5)
    assert velocity_map(h15, 0.0, 4.0) == pytest.approx(h15.mu_R * 4 * 13.75**3 * 8.0, rel=1e-13)


def test_biconjugate_zero_potential():
    rep = biconjugate_check(LagrangianEvaluator(build_modified(ZERO, 4.0)), samples=1000, seed=1)
    assert rep.max_abs_error < 1e-6


def test_biconjugate_coercive_cos():
    rep = biconjugate_check(LagrangianEvaluator(build_modified(REL_COS, 4.0)), samples=1000, seed=2)
    assert rep.max_abs_error < 1e-5


def test_fenchel_young(le_pend):
    rng = np.random.default_rng(3)
    x = rng.random((500, 1))
    v = rng.uniform(-10, 10, (500, 1))
    p = rng.uniform(-10, 10, (500, 1))
    assert np.all(fenchel_gap(le_pend, x, v, p) >= -1e-10)
    _, pstar = le_pend.evaluate(x, v)
    assert np.max(np.abs(fenchel_gap(le_pend, x, v, pstar))) < 1e-8


def test_midpoint_convexity(le_pend):
    rng = np.random.default_rng(4)
    x = rng.random((400, 1))
    a = rng.uniform(-12, 12, (400, 1))
    b = rng.uniform(-12, 12, (400, 1))
    La, _ = le_pend.evaluate(x, a)
    Lb, _ = le_pend.evaluate(x, b)
    Lm, _ = le_pend.evaluate(x, 0.5 * (a + b))
    assert np.all(Lm <= 0.5 * (La + Lb) + 1e-9)


def test_lower_bound_by_p_zero(le_pend):
    x = np.linspace(0, 1, 50, endpoint=False)[:, None]
    v = np.linspace(-9, 9, 50)[:, None]
    L, _ = le_pend.evaluate(x, v)
    assert np.all(L >= -le_pend.hr.value(x, np.zeros_like(x)) - 1e-12)


def test_table_round_trip(tmp_path, le_pend):
    xs = np.array([[0.0], [0.25]])
    vs = np.array([[-1.0], [0.0], [2.0]])
    table = tabulate(le_pend, xs, vs)
    save_table(tmp_path / "t.json", le_pend, xs, vs, table)
    key, xs2, vs2, table2 = load_table(tmp_path / "t.json")
    assert key["R"] == 6.0
    assert np.array_equal(xs2, xs) and np.array_equal(vs2, vs)
    assert np.array_equal(table2, table)
