import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from varlp.errors import ConfigInvalid, DimensionMismatch, Divergence
from varlp.experiments import generate_phantom
from varlp.operators import Geometry, dense_operator, partition_views, radon_build
from varlp.solvers import (RunLog, SolverConfig, SolverState, StepSchedule, banach_sgd_step,
                           dual_landweber_step, gamma_for_exponent, gradient_modular,
                           gradient_residual_hilbert, landweber_step, modular_gd_step,
                           modular_sgd_step, objective, read_runlog, run, step_size,
                           write_runlog)
from varlp.spaces import ExponentMap, j_rho_bar, modular_rho_bar, validate_exponent_map

from oracles import central_difference


def sgn_pow(v, e):
    return np.sign(v) * np.abs(v) ** e


# -- step sizes ---------------------------------------------------------------

def test_step_size_examples():
    s = StepSchedule(0.015, 0.1, 0.5)
    assert step_size(s, 0, 10) == 0.015
    assert step_size(StepSchedule(0.015, 0.1, 0.37), 10, 10) == pytest.approx(0.015 / 1.1)
    assert step_size(s, 40, 10) == pytest.approx(0.015 / 1.2)
    assert step_size(StepSchedule(0.2, 5.0, kind="constant"), 99) == 0.2


def test_gamma_for_smallest_exponent():
    assert gamma_for_exponent(1.05) == pytest.approx(0.05 / 1.05 + 0.01)
    assert gamma_for_exponent(1.05) == pytest.approx(0.0576, abs=5e-5)


@given(st.integers(0, 10_000), st.integers(1, 50))
def test_step_size_decreasing_and_bounded(k, ns):
    s = StepSchedule(0.5, 0.3, 0.7)
    a, b = step_size(s, k, ns), step_size(s, k + 1, ns)
    assert 0 < b <= a <= 0.5


def test_schedule_validation():
    with pytest.raises(ConfigInvalid):
        StepSchedule(-1.0)
    with pytest.raises(ConfigInvalid):
        StepSchedule(1.0, kind="cosine")
    with pytest.raises(ConfigInvalid):
        step_size(StepSchedule(1.0), 0, 0)


# -- gradients ----------------------------------------------------------------

def test_hilbert_gradient(rng):
    M = rng.normal(size=(8, 6))
    A, x, y = dense_operator(M), rng.normal(size=6), rng.normal(size=8)
    fd = central_difference(lambda v: 0.5 * np.sum((M @ v - y) ** 2), x)
    np.testing.assert_allclose(gradient_residual_hilbert(A, y, x), fd, rtol=1e-5)
    assert not gradient_residual_hilbert(A, M @ x, x).any()
    np.testing.assert_array_equal(gradient_residual_hilbert(dense_operator(np.eye(3)),
                                                            np.zeros(3), [1., 2, 3]), [1, 2, 3])


def test_modular_gradient(rng):
    for _ in range(10):
        M = rng.normal(size=(8, 6))
        A, x, y = dense_operator(M), rng.normal(size=6), rng.normal(size=8)
        q = validate_exponent_map(rng.uniform(1.1, 1.9, size=8))
        fd = central_difference(lambda v: modular_rho_bar(q, M @ v - y), x)
        np.testing.assert_allclose(gradient_modular(q, A, y, x), fd, rtol=1e-5)
    two = ExponentMap.constant(2.0, 8)
    assert np.array_equal(gradient_modular(two, A, y, x), gradient_residual_hilbert(A, y, x))


# -- single steps vs straight-line formulas ----------------------------------

def test_landweber_closed_form():
    a, y, mu = np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.2
    A = dense_operator(np.diag(a))
    state, ref = SolverState.start([1.0, 1.0]), np.array([1.0, 1.0])
    for _ in range(10):
        state = landweber_step(state, A, y, mu)
        ref = (1 - mu * a ** 2) * ref + mu * a * y
    np.testing.assert_allclose(state.x, ref, rtol=1e-14)
    assert state.k == 10
    out = landweber_step(SolverState.start([3.0, 4.0]), dense_operator(np.eye(2)), np.zeros(2), 1)
    assert not out.x.any()


def test_dual_landweber_one_step():
    p, q, mu = 1.5, 1.5, 0.3
    M = np.array([[1.0, 0.5], [-0.2, 2.0]])
    y, x = np.array([1.0, 0.3]), np.array([0.4, -0.7])
    dual = sgn_pow(x, p - 1)
    v = dual - mu * M.T @ sgn_pow(M @ x - y, q - 1)
    ps = p / (p - 1)
    ref = sgn_pow(v, ps - 1)
    out = dual_landweber_step(SolverState(0, x, dual), dense_operator(M), y, mu, p, q)
    np.testing.assert_allclose(out.x, ref, rtol=1e-13)
    np.testing.assert_allclose(out.dual, v, rtol=1e-13)


def test_dual_landweber_with_gauge(rng):
    p, q, r, mu = 1.4, 1.8, 2.0, 0.1
    M = rng.normal(size=(5, 3))
    y, x = rng.normal(size=5), rng.normal(size=3)
    px = np.sum(np.abs(x) ** p) ** (1 / p)
    dual = sgn_pow(x, p - 1)
    res = M @ x - y
    rq = np.sum(np.abs(res) ** q) ** (1 / q)
    v = dual - mu * M.T @ (rq ** (r - q) * sgn_pow(res, q - 1))
    out = dual_landweber_step(SolverState(0, x, dual), dense_operator(M), y, mu, p, q, r)
    np.testing.assert_allclose(out.x, sgn_pow(v, 1 / (p - 1)), rtol=1e-12)
    assert px > 0


def toy_instance():
    M = np.array([[1.0, 0.0, 0.5, 0.0], [0.0, 1.0, 0.0, 0.5], [0.3, 0.3, 0.3, 0.3],
                  [1.0, -1.0, 0.0, 0.0], [0.0, 0.2, 1.0, 0.0], [0.5, 0.0, 0.0, 1.0]])
    p = np.array([1.2, 1.3, 1.2, 1.3])
    q = np.array([1.1, 1.9, 1.1, 1.9, 1.1, 1.9])
    x = np.array([0.5, -0.2, 0.8, 0.1])
    y = np.array([1.0, 0.0, 0.4, 0.2, -0.3, 0.7])
    return M, p, q, x, y


def test_modular_gd_one_step():
    M, p, q, x, y = toy_instance()
    mu = 0.05
    v = sgn_pow(x, p - 1) - mu * M.T @ sgn_pow(M @ x - y, q - 1)
    ref = sgn_pow(v, 1 / (p - 1))
    pm, qm = validate_exponent_map(p), validate_exponent_map(q)
    out = modular_gd_step(SolverState.start(x, lambda z: j_rho_bar(pm, z)), dense_operator(M),
                          y, mu, pm, qm)
    np.testing.assert_allclose(out.x, ref, rtol=1e-12)
    np.testing.assert_allclose(j_rho_bar(pm, out.x), out.dual, rtol=1e-10)


def test_modular_sgd_one_step_two_subsets():
    M, p, q, x, y = toy_instance()
    mu = 0.05
    pm, qm = validate_exponent_map(p), validate_exponent_map(q)
    part = partition_views(dense_operator(M), y, qm, 2)
    start = SolverState.start(x, lambda z: j_rho_bar(pm, z))
    for i, rows in enumerate([slice(0, 3), slice(3, 6)]):
        Mi, yi, qi = M[rows], y[rows], q[rows]
        v = sgn_pow(x, p - 1) - mu * Mi.T @ sgn_pow(Mi @ x - yi, qi - 1)
        out = modular_sgd_step(start, part, i, mu, pm)
        np.testing.assert_allclose(out.x, sgn_pow(v, 1 / (p - 1)), rtol=1e-12)
    # exponents can also come from a full-length map when the partition has none
    bare = partition_views(dense_operator(M), y, None, 2)
    a = modular_sgd_step(start, bare, 1, mu, pm, qm)
    b = modular_sgd_step(start, part, 1, mu, pm)
    assert np.array_equal(a.x, b.x)
    with pytest.raises(ConfigInvalid):
        modular_sgd_step(start, bare, 1, mu, pm)


def test_banach_sgd_single_subset_equals_dual_landweber(rng):
    M = rng.normal(size=(6, 4))
    A, y, x = dense_operator(M), rng.normal(size=6), rng.normal(size=4)
    state = SolverState(0, x, sgn_pow(x, 0.4))
    part = partition_views(A, y, None, 1)
    a = banach_sgd_step(state, part, 0, 0.1, 1.4, 1.6)
    b = dual_landweber_step(state, A, y, 0.1, 1.4, 1.6)
    assert np.array_equal(a.x, b.x)


def test_modular_sgd_single_subset_equals_gd(rng):
    M = rng.normal(size=(6, 4))
    A, y = dense_operator(M), rng.normal(size=6)
    pm = validate_exponent_map(rng.uniform(1.1, 1.5, size=4))
    qm = validate_exponent_map(rng.uniform(1.1, 1.9, size=6))
    part = partition_views(A, y, qm, 1)
    a = b = SolverState.start(rng.normal(size=4), lambda z: j_rho_bar(pm, z))
    for _ in range(20):
        a = modular_sgd_step(a, part, 0, 0.01, pm)
        b = modular_gd_step(b, A, y, 0.01, pm, qm)
        assert np.array_equal(a.x, b.x)


def test_fixed_points(rng):
    M = rng.normal(size=(6, 4))
    A, x = dense_operator(M), rng.normal(size=4)
    y = M @ x
    pm, qm = validate_exponent_map([1.2, 1.3, 1.4, 1.5]), ExponentMap.constant(1.5, 6)
    part = partition_views(A, y, qm, 2)
    steps = [
        landweber_step(SolverState.start(x), A, y, 0.1),
        dual_landweber_step(SolverState(0, x, sgn_pow(x, 0.5)), A, y, 0.1, 1.5, 1.5),
        modular_gd_step(SolverState(0, x, j_rho_bar(pm, x)), A, y, 0.1, pm, qm),
        banach_sgd_step(SolverState(0, x, sgn_pow(x, 0.5)), part, 1, 0.1, 1.5, 1.5),
        modular_sgd_step(SolverState(0, x, j_rho_bar(pm, x)), part, 0, 0.1, pm),
    ]
    for s in steps:
        np.testing.assert_allclose(s.x, x, rtol=1e-12)


def test_hilbert_reduction_all_steps(rng):
    M = rng.normal(size=(12, 5))
    A, y = dense_operator(M), rng.normal(size=12)
    two_p, two_q = ExponentMap.constant(2.0, 5), ExponentMap.constant(2.0, 12)
    part = partition_views(A, y, two_q, 1)
    ref = s1 = s2 = s3 = s4 = SolverState.start(np.zeros(5))
    for _ in range(50):
        ref = landweber_step(ref, A, y, 0.02)
        s1 = dual_landweber_step(s1, A, y, 0.02, 2, 2)
        s2 = modular_gd_step(s2, A, y, 0.02, two_p, two_q)
        s3 = banach_sgd_step(s3, part, 0, 0.02, 2, 2)
        s4 = modular_sgd_step(s4, part, 0, 0.02, two_p)
        for s in (s1, s2, s3, s4):
            np.testing.assert_allclose(s.x, ref.x, rtol=1e-12, atol=0)


def test_sgd_increments_are_unbiased(rng):
    M = rng.normal(size=(30, 5))
    A, y, x = dense_operator(M), rng.normal(size=30), rng.normal(size=5)
    pm, qm = validate_exponent_map(rng.uniform(1.1, 1.5, 5)), validate_exponent_map(
        rng.uniform(1.1, 1.9, 30))
    part = partition_views(A, y, qm, 5)
    start = SolverState.start(x, lambda z: j_rho_bar(pm, z))
    mean = np.mean([modular_sgd_step(start, part, i, 1.0, pm).dual - start.dual
                    for i in range(5)], axis=0)
    full = modular_gd_step(start, A, y, 1.0, pm, qm).dual - start.dual
    np.testing.assert_allclose(mean, full / 5, rtol=1e-10, atol=1e-14)


# -- run ----------------------------------------------------------------------

def small_problem(seed=0):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(40, 10))
    x = rng.normal(size=10)
    return dense_operator(M), M @ x + 0.01 * rng.normal(size=40), x


def test_run_zero_epochs():
    A, y, _ = small_problem()
    x0 = np.linspace(0, 1, 10)
    x, log = run(SolverConfig("sgd2", num_subsets=4, epochs=0, x0=x0), A, y)
    assert len(log) == 0 and np.array_equal(x, x0)


@pytest.mark.parametrize("algo", ["sgd2", "sgd_p", "sgd_pnqn"])
def test_run_deterministic(algo):
    A, y, gt = small_problem()
    cfg = SolverConfig(algo, StepSchedule(0.001, 0.1, 0.5), p=1.5, q=1.5, num_subsets=4,
                       epochs=5, seed=7)
    x1, log1 = run(cfg, A, y, gt)
    x2, log2 = run(cfg, A, y, gt)
    assert np.array_equal(x1, x2)
    assert [r.objective for r in log1.records] == [r.objective for r in log2.records]
    assert [r.psnr for r in log1.records] == [r.psnr for r in log2.records]


def test_run_records_and_dual_consistency():
    A, y, gt = small_problem()
    pm = validate_exponent_map(np.linspace(1.2, 1.6, 10))
    qm = ExponentMap.constant(1.5, 40)
    seen = []

    def check(epoch, state):
        seen.append(epoch)
        np.testing.assert_allclose(j_rho_bar(pm, state.x), state.dual, rtol=1e-10, atol=1e-14)

    cfg = SolverConfig("sgd_pnqn", StepSchedule(0.001), p_map=pm, q_map=qm, num_subsets=4,
                       epochs=3)
    x, log = run(cfg, A, y, gt, callback=check)
    assert seen == [1, 2, 3]
    assert log.column("epoch").tolist() == [1, 2, 3]
    assert np.all(np.diff(log.column("seconds")) >= 0)
    assert log.records[-1].objective == pytest.approx(objective(cfg, A, y, x), rel=1e-12)


def test_uniform_sampling_frequencies(monkeypatch):
    import varlp.solvers as solvers
    A, y, _ = small_problem()
    used = []
    original = solvers._mirror_step

    def spy(state, Ai, yi, mu, space, i=None):
        used.append(i)
        return original(state, Ai, yi, mu, space, i)

    monkeypatch.setattr(solvers, "_mirror_step", spy)
    run(SolverConfig("sgd2", StepSchedule(1e-3), num_subsets=10, epochs=10_000 // 10, seed=3),
        A, y)
    counts = np.bincount(used, minlength=10)
    n = counts.sum()
    assert n == 10_000
    assert np.all(np.abs(counts - n / 10) <= 3 * np.sqrt(n * 0.1 * 0.9))

    used.clear()
    run(SolverConfig("sgd2", StepSchedule(1e-3), num_subsets=10, epochs=3, seed=3,
                     sampling="permutation"), A, y)
    assert all(sorted(used[i:i + 10]) == list(range(10)) for i in range(0, 30, 10))


def test_gd_ignores_subsets():
    A, y, _ = small_problem()
    a, _ = run(SolverConfig("gd_p", StepSchedule(1e-3), p=1.5, num_subsets=7, epochs=4), A, y)
    b, _ = run(SolverConfig("gd_p", StepSchedule(1e-3), p=1.5, num_subsets=1, epochs=4), A, y)
    assert np.array_equal(a, b)


def test_run_errors():
    A, y, _ = small_problem()
    with pytest.raises(ConfigInvalid):
        run(SolverConfig("adam"), A, y)
    with pytest.raises(ConfigInvalid):
        run(SolverConfig("gd_p", StepSchedule(0.1)), A, y)
    with pytest.raises(ConfigInvalid):
        run(SolverConfig("gd_p", None, p=1.5), A, y)
    with pytest.raises(DimensionMismatch):
        run(SolverConfig("gd2"), A, y[:-1])
    with pytest.raises(Divergence):
        run(SolverConfig("gd2", StepSchedule(1e3), epochs=200), A, y)


def test_hilbert_default_step_converges():
    A, y, gt = small_problem()
    x, log = run(SolverConfig("gd2", epochs=300), A, y)
    assert np.all(np.diff(log.column("objective")) <= 1e-12)
    np.testing.assert_allclose(x, np.linalg.lstsq(A.todense(), y, rcond=None)[0], atol=1e-6)


def test_gd_pnqn_monotone_on_phantom():
    g = Geometry(64, 0.1, 45, 0, 4)
    A = radon_build(g)
    gt = generate_phantom(64)
    y = A.apply(gt)
    pm = validate_exponent_map(np.where(gt > 0, 1.25, 1.05))
    qm = ExponentMap.constant(1.2, A.rows)
    mu = 0.1
    while True:
        cfg = SolverConfig("gd_pnqn", StepSchedule(mu), p_map=pm, q_map=qm, epochs=50)
        try:
            _, log = run(cfg, A, y)
        except (Divergence, ArithmeticError):
            mu /= 2
            continue
        if np.all(np.diff(log.column("objective")) <= 0):
            break
        mu /= 2
        assert mu > 1e-8
    f = log.column("objective")
    assert f[-1] < f[0]


def test_adaptation_recomputes_dual():
    A, y, gt = small_problem()
    pm = ExponentMap.constant(1.5, 10)
    new = validate_exponent_map(np.linspace(1.1, 1.9, 10))
    calls = []

    def hook(epoch, x):
        calls.append(epoch)
        return new

    def check(epoch, state):
        if epoch >= 2:
            np.testing.assert_allclose(j_rho_bar(new, state.x), state.dual, rtol=1e-10,
                                       atol=1e-14)

    cfg = SolverConfig("sgd_pnqn", StepSchedule(1e-3), p_map=pm, q=1.5, num_subsets=2,
                       epochs=5, adapt_interval=2)
    run(cfg, A, y, adapt_hook=hook, callback=check)
    assert calls == [2, 4]
    with pytest.raises(ConfigInvalid):
        run(SolverConfig("sgd2", StepSchedule(1e-3), epochs=2, adapt_interval=1), A, y,
            adapt_hook=hook)


def test_runlog_round_trip(tmp_path):
    A, y, gt = small_problem()
    _, log = run(SolverConfig("sgd_p", StepSchedule(1e-3), p=1.3, num_subsets=2, epochs=4),
                 A, y, gt)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    assert path.read_text().splitlines()[0] == "epoch,objective,mae,psnr,ssim,step,seconds"
    back = RunLog.from_csv(path)
    for name in ("epoch", "objective", "mae", "psnr", "ssim", "step", "seconds"):
        np.testing.assert_array_equal(back.column(name), log.column(name))
    buf = io.StringIO()
    write_runlog(log, buf)
    buf.seek(0)
    np.testing.assert_array_equal(read_runlog(buf).column("psnr"), log.column("psnr"))
    with pytest.raises(ValueError):
        read_runlog(io.StringIO("a,b\n1,2\n"))
