import numpy as np
import pytest

from plqkit.errors import ConditionViolated, DimensionMismatch, SingularG
from plqkit.ipsolve import (
    KktState,
    PlqProblem,
    SolveOptions,
    assemble_problem,
    init_strictly_feasible,
    kkt_residual,
    newton_step,
    objective_value,
    problem_from_dict,
    solve,
)
from plqkit.penalties import evaluate, make_catalogue, make_penalty, IntervalProduct


def two_term_data(seed=0, n=3, m=4):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((m, n))
    G = np.eye(n) + 0.2 * rng.standard_normal((n, n))
    R = np.diag(rng.uniform(0.5, 2.0, m))
    Q = np.diag(rng.uniform(0.5, 2.0, n))
    z = rng.standard_normal(m)
    mu = rng.standard_normal(n)
    return H, G, R, Q, z, mu


def l1l2_problem(seed=0, n=3, m=4):
    H, G, R, Q, z, mu = two_term_data(seed, n, m)
    V = make_catalogue("l1", dim=m)
    W = make_catalogue("l2", dim=n)
    return assemble_problem(V, W, H, G, R, Q, z, mu), (H, G, R, Q, z, mu)


def vapnik_huber_problem(seed=0, n=3, m=4, eps=0.3, kappa=1.5):
    H, G, R, Q, z, mu = two_term_data(seed, n, m)
    V = make_catalogue("vapnik", dim=m, eps=eps)
    W = make_catalogue("huber", dim=n, kappa=kappa)
    return assemble_problem(V, W, H, G, R, Q, z, mu), (H, G, R, Q, z, mu)


# -- assembly ----------------------------------------------------------------

def test_assemble_quadratic_matches_normal_equations():
    H, G, R, Q, z, mu = two_term_data(1)
    prob = assemble_problem(make_catalogue("l2", dim=4), make_catalogue("l2", dim=3),
                            H, G, R, Q, z, mu)
    y, u, stats = solve(prob)
    lhs = H.T @ np.linalg.inv(R) @ H + G.T @ np.linalg.inv(Q) @ G
    rhs = H.T @ np.linalg.inv(R) @ z + G.T @ np.linalg.inv(Q) @ mu
    assert np.abs(y - np.linalg.solve(lhs, rhs)).max() <= 1e-10


def test_assemble_l1l2_polyhedron_structure():
    prob, (H, G, R, Q, z, mu) = l1l2_problem()
    pen = prob.penalty
    m = 4
    # one +e_i and one -e_i row per l1 coordinate, none for the free block
    assert pen.ell == 2 * m
    At = pen.rows.A.T
    assert np.allclose(np.abs(At).sum(axis=0)[m:], 0.0)
    assert np.allclose(pen.rows.a, np.ones(2 * m))


def test_assemble_vapnik_huber_structure():
    prob, _ = vapnik_huber_problem(n=3, m=4, eps=0.3, kappa=1.5)
    pen = prob.penalty
    # 2m vapnik dual coords in [0,1], n huber coords in [-kappa, kappa]
    assert pen.m == 2 * 4 + 3
    assert pen.ell == 4 * 4 + 2 * 3
    assert np.allclose(pen.U.lower[:8], 0.0)
    assert np.allclose(pen.U.upper[:8], 1.0)
    assert np.allclose(pen.U.lower[8:], -1.5)
    assert np.allclose(pen.U.upper[8:], 1.5)


def test_assemble_rejects_singular_g():
    H, G, R, Q, z, mu = two_term_data(2)
    G[:, 0] = 0.0
    with pytest.raises(SingularG):
        assemble_problem(make_catalogue("l1", dim=4), make_catalogue("l2", dim=3),
                         H, G, R, Q, z, mu)


def test_assemble_rejects_bad_dims():
    H, G, R, Q, z, mu = two_term_data(3)
    with pytest.raises(DimensionMismatch):
        assemble_problem(make_catalogue("l1", dim=2), make_catalogue("l2", dim=3),
                         H, G, R, Q, z, mu)


def test_problem_requires_ip_condition():
    # M = 0 and U = R^m: null(M) and null(A^T) overlap
    pen = make_penalty(IntervalProduct([-np.inf], [np.inf]), [[0.0]], [0.0], [[1.0]])
    with pytest.raises(ConditionViolated):
        PlqProblem.from_penalty(pen)


# -- residuals -----------------------------------------------------------------

def test_kkt_residual_zero_at_solution():
    prob, _ = l1l2_problem(4)
    y, u, stats = solve(prob)
    assert stats.final_kkt_inf <= 1e-7


def test_kkt_residual_matches_direct_formula():
    prob, _ = vapnik_huber_problem(5)
    pen = prob.penalty
    rng = np.random.default_rng(6)
    st = KktState(s=rng.uniform(0.5, 2.0, pen.ell), q=rng.uniform(0.5, 2.0, pen.ell),
                  u=rng.standard_normal(pen.m), y=rng.standard_normal(pen.n))
    gamma = 0.37
    r = kkt_residual(prob, st, gamma)
    A, a = pen.rows.A, pen.rows.a
    expect = np.concatenate([
        st.s + A.T @ st.u - a,
        st.q * st.s - gamma,
        pen.B @ st.y - pen.M @ st.u - A @ st.q + pen.b,
        pen.B.T @ st.u,
    ])
    assert np.allclose(r, expect, atol=1e-14)


def test_constructed_start_zeroes_affine_blocks():
    prob, _ = l1l2_problem(7)
    st = init_strictly_feasible(prob, "l1_l2")
    r = kkt_residual(prob, st, 0.0)
    ell = prob.ell
    assert np.abs(r[:ell]).max() <= 1e-12                      # slack block
    assert np.abs(r[2 * ell:]).max() <= 1e-12                  # affine + adjoint
    assert st.s.min() > 0 and st.q.min() > 0


# -- feasible starts -------------------------------------------------------------

def test_l1l2_start_matches_displayed_construction():
    prob, (H, G, R, Q, z, mu) = l1l2_problem(8)
    st = init_strictly_feasible(prob, "l1_l2")
    m = 4
    assert np.allclose(st.u, 0.0)
    assert np.allclose(st.y, np.linalg.solve(G, mu))
    assert np.allclose(st.s, 1.0)
    from plqkit.linalg import sym_inv_sqrt

    g = sym_inv_sqrt(R) @ (H @ st.y - z)
    # up rows then dn rows interleave per coordinate in construction order
    up = st.q[prob.penalty.rows.up_row[:m]]
    dn = st.q[prob.penalty.rows.dn_row[:m]]
    assert np.allclose(up, 1.0 + np.maximum(g, 0.0))
    assert np.allclose(dn, 1.0 - np.minimum(g, 0.0))


def test_vapnik_huber_start_matches_displayed_construction():
    kappa = 1.5
    prob, _ = vapnik_huber_problem(9, kappa=kappa)
    st = init_strictly_feasible(prob, "vapnik_huber")
    m, n = 4, 3
    assert np.allclose(st.y, 0.0)
    assert np.allclose(st.u[:2 * m], 0.5)
    assert np.allclose(st.u[2 * m:], 0.0)
    rows = prob.penalty.rows
    s_v = st.s[np.concatenate([rows.up_row[:2 * m], rows.dn_row[:2 * m]])]
    assert np.allclose(s_v, 0.5)
    s_w = st.s[np.concatenate([rows.up_row[2 * m:], rows.dn_row[2 * m:]])]
    assert np.allclose(s_w, kappa)
    assert st.q.min() > 0
    assert np.abs(kkt_residual(prob, st, 0.0)[2 * prob.ell:]).max() <= 1e-12


def test_strategy_mismatch_raises():
    prob, _ = l1l2_problem(10)
    from plqkit.errors import BadParameter

    with pytest.raises(BadParameter):
        init_strictly_feasible(prob, "vapnik_huber")


def test_generic_ladder_handles_lasso_form():
    from plqkit.bench import lasso_problem

    rng = np.random.default_rng(11)
    A = rng.standard_normal((10, 25))
    b = rng.standard_normal(10)
    prob = lasso_problem(A, b, 0.4)
    st = init_strictly_feasible(prob, "generic")
    assert st.s.min() > 0 and st.q.min() > 0
    r = kkt_residual(prob, st, 0.0)
    ell = prob.ell
    assert np.abs(r[:ell]).max() <= 1e-9
    assert np.abs(r[2 * ell:]).max() <= 1e-8


def test_generic_ladder_handles_svm_form():
    from plqkit.bench import svm_problem

    rng = np.random.default_rng(12)
    A = rng.standard_normal((14, 3))
    labels = np.sign(rng.standard_normal(14))
    labels[labels == 0] = 1
    prob = svm_problem(A, labels, 2.0)
    st = init_strictly_feasible(prob, "generic")
    assert st.s.min() > 0 and st.q.min() > 0
    r = kkt_residual(prob, st, 0.0)
    assert np.abs(r[2 * prob.ell:]).max() <= 1e-8


# -- Newton step -------------------------------------------------------------------

def dense_newton_oracle(prob, st, gamma):
    pen = prob.penalty
    A, _ = pen.rows.A, pen.rows.a
    ell, m, n = pen.ell, pen.m, pen.n
    top = np.zeros((2 * ell + m + n, 2 * ell + m + n))
    top[:ell, :ell] = np.eye(ell)
    top[:ell, 2 * ell:2 * ell + m] = A.T
    top[ell:2 * ell, :ell] = np.diag(st.q)
    top[ell:2 * ell, ell:2 * ell] = np.diag(st.s)
    top[2 * ell:2 * ell + m, ell:2 * ell] = -A
    top[2 * ell:2 * ell + m, 2 * ell:2 * ell + m] = -pen.M
    top[2 * ell:2 * ell + m, 2 * ell + m:] = pen.B
    top[2 * ell + m:, 2 * ell:2 * ell + m] = pen.B.T
    rhs = -kkt_residual(prob, st, gamma)
    sol = np.linalg.solve(top, rhs)
    return sol[:ell], sol[ell:2 * ell], sol[2 * ell:2 * ell + m], sol[2 * ell + m:]


def test_newton_step_matches_dense_lu():
    prob, _ = l1l2_problem(13, n=2, m=3)
    st = init_strictly_feasible(prob)
    gamma = 0.1 * st.duality_measure
    ds, dq, du, dy = newton_step(prob, st, gamma)
    eds, edq, edu, edy = dense_newton_oracle(prob, st, gamma)
    scale = 1.0 + max(np.abs(eds).max(), np.abs(edq).max(),
                      np.abs(edu).max(), np.abs(edy).max())
    assert np.abs(ds - eds).max() <= 1e-8 * scale
    assert np.abs(dq - edq).max() <= 1e-8 * scale
    assert np.abs(du - edu).max() <= 1e-8 * scale
    assert np.abs(dy - edy).max() <= 1e-8 * scale


def test_newton_step_vanishes_on_central_path():
    prob, _ = l1l2_problem(14)
    st = init_strictly_feasible(prob)
    gamma = st.duality_measure
    # Newton iterations at fixed gamma converge to the central-path point
    for _ in range(30):
        ds, dq, du, dy = newton_step(prob, st, gamma)
        step = 1.0
        for v, dv in ((st.s, ds), (st.q, dq)):
            neg = dv < 0
            if np.any(neg):
                step = min(step, 0.99 * np.min(-v[neg] / dv[neg]))
        st = KktState(st.s + step * ds, st.q + step * dq,
                      st.u + step * du, st.y + step * dy)
    ds, dq, du, dy = newton_step(prob, st, gamma)
    total = max(np.abs(ds).max(), np.abs(dq).max(), np.abs(du).max(), np.abs(dy).max())
    assert total <= 1e-8


def test_newton_one_step_on_quadratic():
    H, G, R, Q, z, mu = two_term_data(15)
    prob = assemble_problem(make_catalogue("l2", dim=4), make_catalogue("l2", dim=3),
                            H, G, R, Q, z, mu)
    y, u, stats = solve(prob)
    assert stats.iterations == 1


# -- full solves ----------------------------------------------------------------------

def refine_grid_2d(f, lo, hi, rounds=9, pts=33):
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    best = None
    for _ in range(rounds):
        g0 = np.linspace(lo[0], hi[0], pts)
        g1 = np.linspace(lo[1], hi[1], pts)
        vals = np.array([[f(np.array([a, b])) for b in g1] for a in g0])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best = vals[i, j]
        span = (hi - lo) / (pts - 1)
        center = np.array([g0[i], g1[j]])
        lo = center - 3 * span
        hi = center + 3 * span
    return best


def test_l1l2_objective_matches_grid_refinement():
    prob, _ = l1l2_problem(16, n=2, m=3)
    y, u, stats = solve(prob)
    f = lambda v: evaluate(prob.penalty, v)
    ref = refine_grid_2d(f, [-4.0, -4.0], [4.0, 4.0])
    assert abs(f(y) - ref) <= 1e-5


def test_solver_invariants_along_path():
    prob, _ = vapnik_huber_problem(17)
    opts = SolveOptions(keep_iterates=True)
    y, u, stats = solve(prob, opts)
    gaps = [float(it.s @ it.q) for it in stats.iterates]
    for st in stats.iterates:
        assert st.s.min() > 0 and st.q.min() > 0
    for a, b in zip(gaps, gaps[1:]):
        assert b <= 0.95 * a
    # monotone-pair inequality between any two feasible iterates
    for i in range(len(stats.iterates)):
        for j in range(i + 1, len(stats.iterates)):
            si, qi = stats.iterates[i].s, stats.iterates[i].q
            sj, qj = stats.iterates[j].s, stats.iterates[j].q
            assert (si - sj) @ (qi - qj) >= -1e-10
    # gamma trajectory strictly decreasing after the first step
    gt = stats.gamma_trajectory
    assert all(b < a for a, b in zip(gt[1:], gt[2:]))


def test_duality_consistency_at_optimum():
    prob, _ = vapnik_huber_problem(18)
    y, u, stats = solve(prob)
    pen = prob.penalty
    dual_val = u @ (pen.b + pen.B @ y) - 0.5 * u @ (pen.M @ u)
    assert abs(objective_value(prob, y) - dual_val) <= 1e-6


def test_complementarity_certificate():
    prob, _ = l1l2_problem(19)
    y, u, stats = solve(prob)
    assert stats.final_kkt_inf <= 1e-7


def test_objective_value_formulas():
    prob, (H, G, R, Q, z, mu) = l1l2_problem(20)
    from plqkit.linalg import sym_inv_sqrt

    rng = np.random.default_rng(21)
    y = rng.standard_normal(3)
    direct = (np.abs(sym_inv_sqrt(R) @ (H @ y - z)).sum()
              + 0.5 * np.sum((sym_inv_sqrt(Q) @ (G @ y - mu)) ** 2))
    assert objective_value(prob, y) == pytest.approx(direct, abs=1e-10)


def test_assembled_objective_matches_componentwise_sum():
    prob, (H, G, R, Q, z, mu) = vapnik_huber_problem(22)
    from plqkit.linalg import sym_inv_sqrt

    V = make_catalogue("vapnik", dim=4, eps=0.3)
    W = make_catalogue("huber", dim=3, kappa=1.5)
    rng = np.random.default_rng(23)
    y = rng.standard_normal(3)
    direct = (evaluate(V, sym_inv_sqrt(R) @ (H @ y - z))
              + evaluate(W, sym_inv_sqrt(Q) @ (G @ y - mu)))
    assert objective_value(prob, y) == pytest.approx(direct, abs=1e-10)


def test_problem_from_dict_roundtrip(tmp_path):
    H, G, R, Q, z, mu = two_term_data(24)
    spec = {
        "V": {"kind": "l1", "dim": 4},
        "W": {"kind": "l2", "dim": 3},
        "H": H.tolist(), "G": G.tolist(), "R": R.tolist(), "Q": Q.tolist(),
        "z": z.tolist(), "mu": mu.tolist(),
    }
    prob = problem_from_dict(spec)
    y1, _, _ = solve(prob)
    prob2, _ = l1l2_problem(24)
    y2, _, _ = solve(prob2)
    assert np.abs(y1 - y2).max() <= 1e-9
