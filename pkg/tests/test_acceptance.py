"""Acceptance suite, one test per criterion.

Each test records a PASS/FAIL line (collected in the terminal summary under
"acceptance criteria") before asserting. The reproduction checks (7-10) run
the actual tuners and take tens of minutes on one core; deselect them with
``-m "not acceptance"``.
"""
import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from ctrltune import cli
from ctrltune.core import episode_seed, evaluate
from ctrltune.critic import ValueNet, compute_advantage, compute_value_targets
from ctrltune.envs.acc import evaluate_pid_batch
from ctrltune.envs.bicycle import TRUE_PARAMS, bicycle_step
from ctrltune.envs.mpc import ACCEL_MAX, DELTA_MAX, MpcProblem, mpc_solve, rollout, shooting_gradient, shooting_objective
from ctrltune.tasks import get_task
from ctrltune.toy import TwoStateMdp, mc_policy_gradient_check
from ctrltune.zoac import es_baseline, es_gradient, tune
from oracles import bicycle_reference_step, discounted_returns, gae_brute, random_trajectory

EVAL_SEED = 10_000
EVAL_EPISODES = 10
ACC_SEEDS = (0, 1, 2, 3, 4)
TRACK_SEEDS = (0, 1, 2)
TRACK_HORIZON = 10  # desk-scale prediction horizon


# ----- property criteria -----

def test_c01_es_gradient_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    c = np.array([0.5, -0.3, 0.2, 1.0])
    theta = np.array([-0.5, 0.4, 1.0, 0.2])
    sigma, n = 0.1, 100_000
    eps = rng.standard_normal((n, 4))
    returns = -np.sum((theta + sigma * eps - c) ** 2, axis=1)
    g = es_gradient(returns, eps, sigma)
    exact = -2 * (theta - c)  # smoothing a quadratic leaves its gradient unchanged
    big = np.abs(exact) > 0.1
    rel = np.abs(g - exact)[big] / np.abs(exact)[big]
    dt = time.perf_counter() - t0
    ok = criterion(1, rel.max() < 0.05 and dt < 10, f"max rel err {rel.max():.4f} (< 0.05), {dt:.2f} s (< 10 s)")
    assert ok


def test_c02_noise_gradient_vs_finite_difference(criterion):
    t0 = time.perf_counter()
    chk = mc_policy_gradient_check(TwoStateMdp(), theta=0.5, sigma=0.2, samples=100_000, seed=0)
    dt = time.perf_counter() - t0
    ok = criterion(2, chk.overlap and dt < 60,
                   f"noise CI [{chk.noise_ci[0]:.4f}, {chk.noise_ci[1]:.4f}] vs FD CI "
                   f"[{chk.fd_ci[0]:.4f}, {chk.fd_ci[1]:.4f}], {dt:.1f} s (< 60 s)")
    assert ok


def test_c03_critic_backprop_vs_finite_differences(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    h = 1e-6
    for _ in range(10):
        d = int(rng.integers(2, 8))
        hidden = tuple(int(x) for x in rng.integers(3, 12, size=int(rng.integers(1, 3))))
        net = ValueNet(d, hidden, rng=rng)
        net.set_flat(rng.normal(0, 0.5, net.n_params))
        s = rng.normal(size=(int(rng.integers(1, 20)), d))
        tgt = rng.normal(size=len(s))
        _, grad = net.loss_and_grad(s, tgt)
        w0 = net.w.copy()
        num = np.empty_like(w0)
        for i in range(len(w0)):
            net.w[i] = w0[i] + h
            lp, _ = net.loss_and_grad(s, tgt)
            net.w[i] = w0[i] - h
            lm, _ = net.loss_and_grad(s, tgt)
            net.w[i] = w0[i]
            num[i] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.max(np.abs(grad - num) / np.maximum(np.abs(num), 1e-3))))
    dt = time.perf_counter() - t0
    ok = criterion(3, worst < 1e-5 and dt < 30, f"max rel err {worst:.2e} over 10 nets (< 1e-5), {dt:.1f} s")
    assert ok


def test_c04_gae_identities(criterion):
    rng = np.random.default_rng(0)
    costs = rng.integers(0, 10, size=50).astype(float)
    zeros = np.zeros(50)
    term = np.zeros(50, dtype=bool)
    term[-1] = True
    G = compute_value_targets(costs, zeros, zeros, term, term, gamma=0.99, lam=1.0)
    bitwise = list(G) == discounted_returns(costs, 0.99)
    worst = 0.0
    for seed in range(20):
        r, v, nv, te, dn = random_trajectory(np.random.default_rng(seed), 40)
        want = gae_brute(r, v, nv, te, dn, 0.99, 0.95)
        worst = max(worst, np.max(np.abs(compute_value_targets(r, v, nv, te, dn, 0.99, 0.95) - (v + want))))
        for start in range(0, 40, 10):
            seg = slice(start, start + 10)
            a = compute_advantage(r[seg], v[seg], nv[seg], te[seg], dn[seg], 0.99, 0.95)
            worst = max(worst, abs(a - gae_brute(r[seg], v[seg], nv[seg], te[seg], dn[seg], 0.99, 0.95)[0]))
    ok = criterion(4, bitwise and worst < 1e-10, f"lambda=1 return bitwise={bitwise}; max brute-force gap {worst:.1e}")
    assert ok


def _mpc_problem(rng, Np):
    qs, qt, r = rng.uniform(0.1, 2, 6), rng.uniform(0.1, 2, 6), rng.uniform(0.1, 2, 2)
    return MpcProblem(np.array([0, 0.3, 0.02, 10.0, 0, 0]), np.zeros((Np + 1, 6)), qs, qt, r, TRUE_PARAMS.array())


def test_c05_mpc_sanity(criterion):
    rng = np.random.default_rng(0)
    margin = np.inf
    grad_err = 0.0
    scale_gap = 0.0
    for _ in range(5):
        Np = 10
        prob = _mpc_problem(rng, Np)
        U_star = np.column_stack([rng.uniform(-0.1, 0.1, Np), rng.uniform(-1, 1, Np)])
        prob.xref = rollout(prob, U_star)
        sol = mpc_solve(prob)
        margin = min(margin, shooting_objective(prob, U_star) + 1e-6 - sol.objective)

        prob.xref[:, 1] += rng.normal(0, 0.5, Np + 1)
        U = np.column_stack([rng.uniform(-DELTA_MAX, DELTA_MAX, Np), rng.uniform(-ACCEL_MAX, ACCEL_MAX, Np)]) * 0.5
        G = shooting_gradient(prob, U)
        num = np.empty_like(U)
        for k, j in itertools.product(range(Np), range(2)):
            Up, Um = U.copy(), U.copy()
            Up[k, j] += 1e-6
            Um[k, j] -= 1e-6
            num[k, j] = (shooting_objective(prob, Up) - shooting_objective(prob, Um)) / 2e-6
        grad_err = max(grad_err, float(np.max(np.abs(G - num) / np.maximum(np.abs(num), 1e-3))))

        c = rng.uniform(1e-3, 1e3)
        scaled = replace(prob, qs=prob.qs * c, qt=prob.qt * c, r=prob.r * c)
        scale_gap = max(scale_gap, float(np.max(np.abs(mpc_solve(prob).U[0] - mpc_solve(scaled).U[0]))))
    ok = margin >= 0 and grad_err < 1e-5 and scale_gap < 1e-6
    criterion(5, ok, f"objective margin {margin:.2e} (>= 0), gradient rel err {grad_err:.1e} (< 1e-5), "
                     f"U(0) scaling gap {scale_gap:.1e}")
    assert ok


def test_c06_bicycle_second_implementation(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    p = TRUE_PARAMS.array()
    for _ in range(1000):
        s = np.array([rng.uniform(-50, 50), rng.uniform(-10, 10), rng.uniform(-np.pi, np.pi),
                      rng.uniform(1, 25), rng.uniform(-2, 2), rng.uniform(-1, 1)])
        d, a = rng.uniform(-DELTA_MAX, DELTA_MAX), rng.uniform(-ACCEL_MAX, ACCEL_MAX)
        want = bicycle_reference_step(s, d, a, p)
        worst = max(worst, float(np.max(np.abs(bicycle_step(s, d, a, p) - want) / np.maximum(1.0, np.abs(want)))))
    ok = criterion(6, worst < 1e-12, f"max deviation {worst:.1e} on 1000 random states (< 1e-12)")
    assert ok


# ----- reproduction criteria -----

def _eval(task, theta):
    return evaluate(task.eval_env_factory()(), task.ctrl_factory()(), theta, EVAL_EPISODES, EVAL_SEED)


@pytest.fixture(scope="module")
def acc_grid():
    task = get_task("acc-pid")
    g = np.linspace(0.0, 10.0, 9)
    thetas = np.array(list(itertools.product(g, g, g, g)))
    seeds = [episode_seed(EVAL_SEED, k) for k in range(EVAL_EPISODES)]
    costs, _, terms = evaluate_pid_batch(thetas, task.eval_env_factory()().p, seeds)
    i = int(np.argmin(costs.mean(axis=1)))
    return thetas[i], float(costs[i].mean()), int(terms[i].sum())


@pytest.fixture(scope="module")
def acc_zoac():
    task = get_task("acc-pid")
    return {s: tune(task.env_factory(), task.ctrl_factory(), task.space, replace(task.zoac, seed=s),
                    eval_env_factory=task.eval_env_factory()) for s in ACC_SEEDS}


@pytest.mark.acceptance
def test_c07_acc_tuning_vs_grid_oracle(criterion, acc_grid, acc_zoac):
    task = get_task("acc-pid")
    grid_theta, grid_cost, grid_terms = acc_grid
    reps = {s: _eval(task, acc_zoac[s].best_theta) for s in ACC_SEEDS[:3]}
    within = all(r.mean_cost <= 1.1 * grid_cost for r in reps.values())
    clean = all(r.n_terminated == 0 for r in reps.values())
    detail = ", ".join(f"seed {s}: {r.mean_cost:.1f} ({r.n_terminated} term)" for s, r in reps.items())
    ok = criterion(7, within and clean, f"grid best {grid_cost:.1f} at {grid_theta.tolist()} ({grid_terms} term); "
                                       f"bound {1.1 * grid_cost:.1f}; {detail}")
    assert ok


@pytest.mark.acceptance
def test_c08_zoac_vs_es_equal_budget(criterion, acc_zoac):
    task = get_task("acc-pid")
    zoac_costs, es_costs = [], []
    for s in ACC_SEEDS:
        res = acc_zoac[s]
        zoac_costs.append(_eval(task, res.final_theta).mean_cost)
        cfg = replace(task.es, seed=s, iterations=10**9, env_step_budget=res.env_steps, eval_every=10**9)
        es = es_baseline(task.env_factory(), task.ctrl_factory(), task.space, cfg, eval_env_factory=task.eval_env_factory())
        es_costs.append(_eval(task, es.final_theta).mean_cost)
    mz, me = float(np.median(zoac_costs)), float(np.median(es_costs))
    ok = criterion(8, mz <= me, f"median final cost ZOAC {mz:.1f} vs ES {me:.1f} at "
                                f"{acc_zoac[0].env_steps} env steps over {len(ACC_SEEDS)} seeds")
    assert ok


def _tracking_task(name):
    task = get_task(name)
    task.scenario = {**task.scenario, "horizon": TRACK_HORIZON}
    return task


def _tracking_runs(name):
    task = _tracking_task(name)
    return {s: tune(task.env_factory(), task.ctrl_factory(), task.space, replace(task.zoac, seed=s),
                    eval_env_factory=task.eval_env_factory()) for s in TRACK_SEEDS}


@pytest.fixture(scope="module")
def tracking_plain():
    return _tracking_runs("tracking-mpc")


@pytest.fixture(scope="module")
def tracking_reg():
    return _tracking_runs("tracking-mpc-reg")


@pytest.mark.acceptance
def test_c09_tracking_vs_nominal(criterion, tracking_plain):
    task = _tracking_task("tracking-mpc")
    nominal = _eval(task, task.nominal)
    reps = [_eval(task, tracking_plain[s].best_theta) for s in TRACK_SEEDS]
    med = float(np.median([r.mean_cost for r in reps]))
    terms = sum(r.n_terminated for r in reps)
    ratio = med / nominal.mean_cost
    ok = criterion(9, ratio <= 1.5 and terms == 0,
                   f"N_p={TRACK_HORIZON}: median tuned {med:.2f} / nominal {nominal.mean_cost:.2f} = {ratio:.3f} "
                   f"(<= 1.5), {terms} terminated episodes")
    assert ok


@pytest.mark.acceptance
def test_c10_regularization_ablation(criterion, tracking_plain, tracking_reg):
    task = _tracking_task("tracking-mpc")
    plain = [_eval(task, tracking_plain[s].final_theta) for s in TRACK_SEEDS]
    reg = [_eval(task, tracking_reg[s].final_theta) for s in TRACK_SEEDS]
    pe_plain = float(np.median([r.mean_prediction_error for r in plain]))
    pe_reg = float(np.median([r.mean_prediction_error for r in reg]))
    c_plain = float(np.median([r.mean_cost for r in plain]))
    c_reg = float(np.median([r.mean_cost for r in reg]))
    gap = abs(c_reg - c_plain) / c_plain
    ok = criterion(10, pe_reg < pe_plain and gap < 0.15,
                   f"median prediction error reg {pe_reg:.2e} vs plain {pe_plain:.2e}; "
                   f"median cost reg {c_reg:.2f} vs plain {c_plain:.2f} (gap {gap:.1%}, < 15%)")
    assert ok


def test_c11_bit_identical_reruns(criterion, tmp_path):
    cases = {
        "acc-zoac": ["task=acc-pid", "zoac.iterations=6", "zoac.eval_every=3"],
        "acc-es": ["task=acc-pid", "method=es", "es.iterations=4"],
        "tracking-zoac": ["task=tracking-mpc", "scenario.horizon=5", "zoac.iterations=2", "zoac.n_workers=2",
                          "zoac.eval_episodes=1", "zoac.critic_hidden=[32, 32]"],
    }
    same = {}
    for name, sets in cases.items():
        args = ["tune", "--set", "seeds=[0, 1]"] + [x for s in sets for x in ("--set", s)]
        for rep in ("a", "b"):
            assert cli.main(args + ["--out", str(tmp_path / name / rep)]) == 0
        files = sorted(p.relative_to(tmp_path / name / "a") for p in (tmp_path / name / "a").rglob("*.csv")
                       if p.name != "timing.csv")
        same[name] = len(files) > 0 and all(
            (tmp_path / name / "a" / f).read_bytes() == (tmp_path / name / "b" / f).read_bytes() for f in files)
    ok = criterion(11, all(same.values()), ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
