import math

import numpy as np
import pytest

from plqkit.errors import BadKind, NotEpsilonLoss
from plqkit.ipsolve import SolveOptions, solve
from plqkit.kalman import (
    SmootherSpec,
    StateSpaceModel,
    build_spline_model,
    model_from_dict,
    smooth_plq,
    smooth_quadratic,
    stack_problem,
    statistical_weight,
    support_vectors,
)
from plqkit.densities import huber_constants, vapnik_constants


def random_model(seed=0, N=10, n=2, m=1):
    rng = np.random.default_rng(seed)
    G = np.zeros((N, n, n))
    G[0] = np.eye(n)
    for k in range(1, N):
        G[k] = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    H = rng.standard_normal((N, m, n))
    Q = np.zeros((N, n, n))
    R = np.zeros((N, m, m))
    for k in range(N):
        a = rng.standard_normal((n, n))
        Q[k] = a @ a.T + np.eye(n)
        b = rng.standard_normal((m, m))
        R[k] = b @ b.T + 0.5 * np.eye(m)
    x0 = rng.standard_normal(n)
    return StateSpaceModel(G, H, Q, R, x0)


def dense_normal_equations(model, z):
    N, n, m = model.N, model.n, model.m
    Gd = np.eye(N * n)
    for k in range(1, N):
        Gd[k * n:(k + 1) * n, (k - 1) * n:k * n] = -model.G[k]
    Hd = np.zeros((N * m, N * n))
    Qd = np.zeros((N * n, N * n))
    Rd = np.zeros((N * m, N * m))
    for k in range(N):
        Hd[k * m:(k + 1) * m, k * n:(k + 1) * n] = model.H[k]
        Qd[k * n:(k + 1) * n, k * n:(k + 1) * n] = model.Q[k]
        Rd[k * m:(k + 1) * m, k * m:(k + 1) * m] = model.R[k]
    mu = np.zeros(N * n)
    mu[:n] = model.x0
    lhs = Gd.T @ np.linalg.inv(Qd) @ Gd + Hd.T @ np.linalg.inv(Rd) @ Hd
    rhs = Gd.T @ np.linalg.inv(Qd) @ mu + Hd.T @ np.linalg.inv(Rd) @ z.reshape(-1)
    return np.linalg.solve(lhs, rhs)


# -- quadratic smoother -----------------------------------------------------------

def test_scalar_single_step_formula():
    q, r, x0, z = 2.0, 0.5, 1.0, 3.0
    model = StateSpaceModel(
        G=np.ones((1, 1, 1)), H=np.ones((1, 1, 1)),
        Q=np.full((1, 1, 1), q), R=np.full((1, 1, 1), r), x0=np.array([x0]))
    res = smooth_quadratic(model, np.array([[z]]))
    expect = (x0 / q + z / r) / (1 / q + 1 / r)
    assert res.xhat[0, 0] == pytest.approx(expect, abs=1e-12)


def test_quadratic_matches_dense_solve():
    model = random_model(1, N=10, n=2, m=1)
    rng = np.random.default_rng(2)
    z = rng.standard_normal((10, 1))
    res = smooth_quadratic(model, z)
    ref = dense_normal_equations(model, z)
    assert np.abs(res.xhat.reshape(-1) - ref).max() <= 1e-10


def test_zero_measurement_noise_limit():
    N = 15
    model = build_spline_model(dt=0.1, lam2=50.0, N=N, meas_var=1e-8)
    z = np.sin(np.arange(N))[:, None]
    res = smooth_quadratic(model, z)
    assert np.abs(res.xhat[:, 1:2] - z).max() <= 1e-4


def test_residual_identities():
    model = random_model(4, N=12, n=2, m=2)
    rng = np.random.default_rng(5)
    z = rng.standard_normal((12, 2))
    res = smooth_quadratic(model, z)
    x = res.xhat
    for k in range(12):
        pred = model.x0 if k == 0 else model.G[k] @ x[k - 1]
        assert np.abs(res.proc_residual[k] - (x[k] - pred)).max() <= 1e-12
        assert np.abs(res.meas_residual[k] - (model.H[k] @ x[k] - z[k])).max() <= 1e-12


# -- statistical weights -------------------------------------------------------------

def test_statistical_weights():
    assert statistical_weight("l1") == pytest.approx(math.sqrt(2.0), abs=1e-7)
    assert statistical_weight("l2") == 1.0
    c = huber_constants(1.0)
    assert statistical_weight("huber", {"kappa": 1.0}) == pytest.approx(
        c.m2 / c.m0, abs=1e-12)
    assert statistical_weight("vapnik", {"eps": 0.45}) == pytest.approx(
        vapnik_constants(0.45).c2, abs=1e-12)
    with pytest.raises(BadKind):
        statistical_weight("hinge")


def test_huber_weight_cross_checked_by_quadrature():
    from scipy.integrate import quad

    k = 1.3
    f = lambda t: math.exp(-(0.5 * t * t if abs(t) <= k else k * abs(t) - 0.5 * k * k))
    m0 = quad(f, -60, 60, limit=300)[0]
    m2 = quad(lambda t: t * t * f(t), -60, 60, limit=300)[0]
    assert statistical_weight("huber", {"kappa": k}) == pytest.approx(m2 / m0, rel=1e-9)


# -- PLQ smoother ----------------------------------------------------------------------

def test_plq_l2_l2_equals_quadratic():
    model = random_model(6, N=20, n=2, m=1)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((20, 1))
    r1 = smooth_plq(model, z, SmootherSpec("l2", "l2"))
    r2 = smooth_quadratic(model, z)
    assert np.abs(r1.xhat - r2.xhat).max() <= 1e-8


@pytest.mark.parametrize("proc,meas,pp,mp", [
    ("l2", "vapnik", {}, {"eps": 0.3}),
    ("huber", "l1", {"kappa": 1.0}, {}),
    ("l1", "huber", {}, {"kappa": 0.8}),
])
def test_plq_matches_generic_solver(proc, meas, pp, mp):
    model = random_model(8, N=10, n=2, m=1)
    rng = np.random.default_rng(9)
    z = rng.standard_normal((10, 1))
    spec = SmootherSpec(process=proc, meas=meas, process_params=pp, meas_params=mp)
    res = smooth_plq(model, z, spec)
    prob = stack_problem(model, z, spec)
    y, _, _ = solve(prob)
    assert np.abs(res.xhat.reshape(-1) - y).max() <= 1e-6
    assert res.stats.final_kkt_inf <= 1e-7


def test_plq_standardized_weight_mode():
    model = random_model(10, N=8, n=2, m=1)
    rng = np.random.default_rng(11)
    z = rng.standard_normal((8, 1))
    spec = SmootherSpec(process="l2", meas="huber", meas_params={"kappa": 1.0},
                        weight_mode="standardized")
    res = smooth_plq(model, z, spec)
    prob = stack_problem(model, z, spec)
    y, _, _ = solve(prob)
    assert np.abs(res.xhat.reshape(-1) - y).max() <= 1e-6


def test_omega_block_structure_matches_dense():
    model = random_model(12, N=8, n=2, m=1)
    rng = np.random.default_rng(13)
    z = rng.standard_normal((8, 1))
    spec = SmootherSpec(process="huber", meas="vapnik",
                        process_params={"kappa": 1.0}, meas_params={"eps": 0.3})
    trace = []
    smooth_plq(model, z, spec, _trace=trace)
    prob = stack_problem(model, z, spec)
    pen = prob.penalty
    A = pen.rows.A
    assert trace, "no iterations traced"
    for entry in trace:
        s = np.concatenate([entry["sv"].reshape(-1), entry["sw"].reshape(-1)])
        q = np.concatenate([entry["qv"].reshape(-1), entry["qw"].reshape(-1)])
        T = pen.M + (A * (q / s)) @ A.T
        omega_dense = pen.B.T @ np.linalg.solve(T, pen.B)
        got = entry["omega"].to_dense()
        scale = max(1.0, np.abs(omega_dense).max())
        assert np.abs(got - omega_dense).max() <= 1e-10 * scale
        np.linalg.cholesky(got)   # SPD at every iteration


def test_fixed_iteration_budget():
    model = random_model(14, N=10, n=2, m=1)
    rng = np.random.default_rng(15)
    z = rng.standard_normal((10, 1))
    spec = SmootherSpec(process="l2", meas="l1")
    res = smooth_plq(model, z, spec, SolveOptions(fixed_iterations=5))
    assert res.stats.iterations == 5


# -- support vectors ---------------------------------------------------------------------

def test_support_vectors_empty_inside_tube():
    model = build_spline_model(dt=0.1, lam2=5.0, N=10, meas_var=1.0)
    z = np.ones((10, 1))
    spec = SmootherSpec(process="l2", meas="vapnik", meas_params={"eps": 10.0})
    res = smooth_plq(model, z, spec)
    assert support_vectors(res, 10.0).size == 0


def test_support_vectors_boundary_included():
    model = build_spline_model(dt=0.1, lam2=5.0, N=4, meas_var=1.0)
    z = np.zeros((4, 1))
    spec = SmootherSpec(process="l2", meas="vapnik", meas_params={"eps": 0.2})
    res = smooth_plq(model, z, spec)
    res.meas_arg[:] = 0.0
    res.meas_arg[2, 0] = 0.2   # exactly on the tube
    assert 2 in support_vectors(res, 0.2)


def test_support_vectors_requires_eps_loss():
    model = build_spline_model(dt=0.1, lam2=5.0, N=4, meas_var=1.0)
    res = smooth_quadratic(model, np.zeros((4, 1)))
    with pytest.raises(NotEpsilonLoss):
        support_vectors(res, 0.1)


# -- spline model -----------------------------------------------------------------------

def test_spline_model_blocks():
    dt, lam2 = 1.0 / 2000.0, 3.0
    model = build_spline_model(dt=dt, lam2=lam2, N=5)
    assert np.allclose(model.G[2], [[1.0, 0.0], [dt, 1.0]])
    assert np.allclose(model.H[0], [[0.0, 1.0]])
    assert np.allclose(model.Q[1], lam2 * np.array(
        [[dt, dt * dt / 2], [dt * dt / 2, dt ** 3 / 3]]))
    assert np.allclose(model.x0, [0.0, 1.0])


@pytest.mark.parametrize("dt,lam2", [(1.0, 1.0), (0.01, 2000.0), (3.0, 0.1)])
def test_spline_q_spd(dt, lam2):
    model = build_spline_model(dt=dt, lam2=lam2, N=3)
    eig = np.linalg.eigvalsh(model.Q[0])
    assert eig.min() > 0
    assert np.linalg.det(model.Q[0]) == pytest.approx(lam2 ** 2 * dt ** 4 / 12,
                                                      rel=1e-10)


def test_spline_diffuse_prior():
    m1 = build_spline_model(dt=1.0, lam2=1.0, N=3)
    m2 = build_spline_model(dt=1.0, lam2=1.0, N=3, diffuse_prior=True)
    assert np.allclose(m2.Q[0], 1e6 * m1.Q[0])
    assert np.allclose(m2.Q[1], m1.Q[1])


def test_model_from_dict_spline_and_explicit():
    m1 = model_from_dict({"spline": {"dt": 0.5, "lambda2": 2.0, "N": 4}})
    assert m1.N == 4 and m1.n == 2 and m1.m == 1
    m2 = model_from_dict({
        "N": 3,
        "G": np.eye(2).tolist(),
        "H": [[1.0, 0.0]],
        "Q": np.eye(2).tolist(),
        "R": [[1.0]],
        "x0": [0.0, 0.0],
    })
    assert m2.N == 3 and m2.G.shape == (3, 2, 2)
